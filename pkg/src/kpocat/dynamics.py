"""Schrödinger evolution of the KPO coupled to the position-binned output line.

During bin ``j`` the interaction-picture Hamiltonian touches only the KPO and
the output bin ``j``::

    H = -(K/2) a^dag^2 a^2 + (P a^dag^2 + P^* a^2)/2 + Delta a^dag a
        - |P|^2/(2K) + i g (b_j^dag a - a^dag b_j),      P = p + i p'

with ``g = sqrt(kappa_ex / Delta z_j)`` for a bin of width ``Delta z_j``.
The c-number ``-|P|^2/(2K)`` only shifts a global phase; keeping it makes the
coherent components ``|+-sqrt(P/K)>`` zero-energy states of the KPO part.

Every basis state with all output photons in bins ``<= j`` factorizes as
``|n> |j^k> |h>`` where the history ``h`` holds the photons of bins ``< j``.
The history is a spectator, so for each history size ``s`` the amplitudes
form a matrix ``Psi_s[(k, n), h]`` evolving under one small local
Hamiltonian.  The fast path integrates the RK4 step matrices of that local
problem over a whole bin and applies their product to all histories at once;
this is algebraically the same classical RK4 applied to the full state.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import basis
from .basis import SectorSpec
from .pump import LpfCascade, PumpSample, ShortcutMode

logger = logging.getLogger(__name__)

STEP_NORM_TOL = 1e-6
DEFAULT_SUBSTEP = 0.025
COLUMN_CHUNK = 1 << 18


class NormDriftError(RuntimeError):
    """A single RK4 step changed the norm by more than the tolerance."""


@dataclass
class SystemParams:
    K: float = 1.0
    kappa_ex: float = 0.2
    delta: float = 0.0
    A_p: float = 2.45
    B: float = 0.5
    lpf_order: int = 4
    shortcut: str = "none"
    T: float = 50.0
    J: int = 80
    L: int = 4
    kpo_cutoffs: tuple[int, ...] | None = None
    # RK4 step; 0.025/K keeps the accumulated norm drift of a full run below 1e-6
    substep_target: float = DEFAULT_SUBSTEP
    memory_budget: int = basis.DEFAULT_MEMORY_BUDGET
    allow_over_budget: bool = False
    pump_enabled: bool = True
    # "scaled": sqrt(kappa_ex / dz_j), the continuum limit of b(-t) = b_j / sqrt(dz_j);
    # "literal": sqrt(kappa_ex) for every bin width
    bin_coupling: str = "scaled"

    def __post_init__(self):
        if self.bin_coupling not in ("scaled", "literal"):
            raise ValueError(f"bin_coupling must be 'scaled' or 'literal', got {self.bin_coupling!r}")
        self.shortcut = ShortcutMode(self.shortcut).value
        if self.kpo_cutoffs is None:
            self.kpo_cutoffs = basis.SectorSpec.reference(self.J, self.L).kpo_cutoffs
        self.kpo_cutoffs = tuple(int(n) for n in self.kpo_cutoffs)
        if self.K < 0 or self.kappa_ex <= 0 or self.T <= 0:
            raise ValueError("need K >= 0, kappa_ex > 0 and T > 0")
        if self.J % 5:
            raise ValueError(f"J must be a multiple of 5, got {self.J}")
        if self.substep_target <= 0:
            raise ValueError("substep_target must be positive")

    def grid(self) -> "TimeGrid":
        return TimeGrid.build(self.T, self.J, self.substep_target)

    @property
    def sector_spec(self) -> SectorSpec:
        return SectorSpec(self.J, self.L, self.kpo_cutoffs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kpo_cutoffs"] = list(self.kpo_cutoffs)
        return d


@dataclass(frozen=True)
class TimeGrid:
    edges: np.ndarray  # z_0 .. z_J
    widths: np.ndarray  # Delta z_1 .. Delta z_J
    substeps: np.ndarray

    @classmethod
    def build(cls, T: float, J: int, substep_target: float = DEFAULT_SUBSTEP) -> "TimeGrid":
        """Fine bins over the first half of [0, T], coarse bins over the second."""
        if J % 5:
            raise ValueError("J must be a multiple of 5")
        n_fine = 4 * J // 5
        widths = np.empty(J)
        widths[:n_fine] = (T / 2) / n_fine
        widths[n_fine:] = (T / 2) / (J // 5)
        edges = np.concatenate([[0.0], np.cumsum(widths)])
        edges[-1] = T
        substeps = np.ceil(widths / substep_target - 1e-9).astype(int)
        return cls(edges, widths, substeps)

    @classmethod
    def uniform(cls, T: float, J: int, substep_target: float = DEFAULT_SUBSTEP) -> "TimeGrid":
        widths = np.full(J, T / J)
        edges = np.linspace(0.0, T, J + 1)
        substeps = np.ceil(widths / substep_target - 1e-9).astype(int)
        return cls(edges, widths, substeps)

    @property
    def J(self) -> int:
        return len(self.widths)

    def step(self, j: int) -> float:
        """RK4 step inside bin ``j`` (1-based)."""
        return self.widths[j - 1] / self.substeps[j - 1]


@dataclass
class CoupledState:
    """Amplitudes psi_l(n, rank) for every output sector ``l``.

    ``bin`` is the number of bins already processed; amplitudes whose tuple
    contains a bin index larger than ``bin + 1`` are zero.
    """

    spec: SectorSpec
    sectors: list[np.ndarray]
    bin: int = 0
    t: float = 0.0

    @classmethod
    def vacuum(cls, spec: SectorSpec, memory_budget: int = basis.DEFAULT_MEMORY_BUDGET,
               allow_over_budget: bool = False) -> "CoupledState":
        lay = basis.layout(spec, memory_budget, allow_over_budget)
        sectors = [np.zeros((n + 1, d), dtype=complex) for n, d in zip(spec.kpo_cutoffs, lay.dims)]
        sectors[0][0, 0] = 1.0
        return cls(spec, sectors)

    @classmethod
    def from_kpo(cls, spec: SectorSpec, kpo_amps, **kw) -> "CoupledState":
        """KPO in the given state, output line in vacuum."""
        state = cls.vacuum(spec, **kw)
        amps = np.asarray(kpo_amps, dtype=complex)
        n0 = spec.kpo_cutoffs[0] + 1
        if len(amps) > n0 and np.any(amps[n0:]):
            raise ValueError("KPO state exceeds cutoff N_0")
        state.sectors[0][:, 0] = 0.0
        state.sectors[0][: len(amps), 0] = amps[:n0]
        return state

    def copy(self) -> "CoupledState":
        return CoupledState(self.spec, [s.copy() for s in self.sectors], self.bin, self.t)

    def norm_sq(self) -> float:
        return float(sum(np.vdot(s, s).real for s in self.sectors))

    def kpo_photons(self) -> float:
        return float(sum((np.abs(s) ** 2).sum(axis=1) @ np.arange(s.shape[0]) for s in self.sectors))

    def output_photons(self) -> float:
        return float(sum(l * np.vdot(s, s).real for l, s in enumerate(self.sectors)))

    def flat(self) -> np.ndarray:
        return np.concatenate([s.ravel() for s in self.sectors])

    def causality_violation(self, upto: int | None = None) -> float:
        """Largest |amplitude| on tuples with a bin index above ``upto``."""
        upto = self.bin if upto is None else upto
        worst = 0.0
        for l, s in enumerate(self.sectors):
            if l == 0:
                continue
            start = basis.multiset_count(upto, l)
            if start < s.shape[1]:
                worst = max(worst, float(np.max(np.abs(s[:, start:]), initial=0.0)))
        return worst


# ---------------------------------------------------------------------------
# local Hamiltonian of the KPO + current bin, per history size


class LocalBlock:
    """Local space {(k, n)} for histories with ``s`` photons in earlier bins.

    ``k`` photons sit in the current bin, total output ``l = s + k <= L`` and
    the KPO is truncated at ``N_l``.
    """

    def __init__(self, spec: SectorSpec, s: int, K: float, g: float, delta: float = 0.0):
        self.s = s
        self.K = K
        self.ks = list(range(spec.L - s + 1))
        self.rows = [spec.kpo_cutoffs[s + k] + 1 for k in self.ks]
        self.starts = np.concatenate([[0], np.cumsum(self.rows)]).astype(int)
        d = self.dim = int(self.starts[-1])

        kerr = np.zeros(d)
        nkpo = np.zeros(d)
        nbin = np.zeros(d)
        a2dag = np.zeros((d, d))
        coup = np.zeros((d, d), dtype=complex)
        for k, start, rows in zip(self.ks, self.starts, self.rows):
            n = np.arange(rows)
            kerr[start : start + rows] = -0.5 * K * n * (n - 1)
            nkpo[start : start + rows] = n
            nbin[start : start + rows] = k
            for m in range(rows - 2):
                a2dag[start + m + 2, start + m] = math.sqrt((m + 1) * (m + 2))
            if k + 1 in self.ks:
                up = self.starts[k + 1]
                up_rows = self.rows[k + 1]
                # b_j^dag a : (k, n) -> (k+1, n-1)
                for m in range(1, rows):
                    if m - 1 < up_rows:
                        coup[up + m - 1, start + m] += 1j * g * math.sqrt(m * (k + 1))
        coup += coup.conj().T
        self.kerr_diag = kerr + delta * nkpo
        self.a2dag = a2dag
        self.a2 = a2dag.T.copy()
        self.coupling = coup
        self.n_kpo = nkpo
        self.n_bin = nbin
        # populations the truncation blocks: KPO at its cutoff, or photons
        # left in the KPO once the output sector is full
        self.edge = np.zeros(d, dtype=bool)
        for k, start, rows in zip(self.ks, self.starts, self.rows):
            if rows > 1:
                self.edge[start + rows - 1] = True
            if s + k == spec.L:
                self.edge[start + 1 : start + rows] = True

    def hamiltonian(self, sample: PumpSample) -> np.ndarray:
        P = complex(sample.p, sample.p_prime)
        H = self.coupling + 0.5 * P * self.a2dag + 0.5 * P.conjugate() * self.a2
        diag = self.kerr_diag.copy()
        if self.K > 0:
            diag -= abs(P) ** 2 / (2 * self.K)
        H[np.diag_indices(self.dim)] += diag
        return H

    def generator(self, sample: PumpSample) -> np.ndarray:
        """-i H."""
        return -1j * self.hamiltonian(sample)


def coupling_strength(params: SystemParams, width: float) -> float:
    if params.bin_coupling == "literal":
        return math.sqrt(params.kappa_ex)
    return math.sqrt(params.kappa_ex / width)


def make_blocks(params: SystemParams, width: float) -> list[LocalBlock]:
    """Local blocks for every history size, for a bin of the given width."""
    spec = params.sector_spec
    g = coupling_strength(params, width)
    return [LocalBlock(spec, s, params.K, g, params.delta) for s in range(spec.L + 1)]


def _block_slices(spec: SectorSpec, blk: LocalBlock, j: int):
    """Column slices of each sector forming ``Psi_s`` during bin ``j``."""
    n_hist = basis.multiset_count(j - 1, blk.s)
    out = []
    for k in blk.ks:
        l = blk.s + k
        off = basis.block_offset(j, l, k)
        out.append((l, slice(off, off + n_hist)))
    return n_hist, out


def _gather(state: CoupledState, slices, cols: slice) -> np.ndarray:
    parts = [state.sectors[l][:, sl][:, cols] for l, sl in slices]
    return parts[0].copy() if len(parts) == 1 else np.vstack(parts)


def _scatter(state: CoupledState, slices, blk: LocalBlock, cols: slice, data: np.ndarray):
    for (l, sl), start, rows in zip(slices, blk.starts, blk.rows):
        view = state.sectors[l][:, sl]
        view[:, cols] = data[start : start + rows]


def _col_chunks(n: int):
    for c in range(0, n, COLUMN_CHUNK):
        yield slice(c, min(n, c + COLUMN_CHUNK))


# ---------------------------------------------------------------------------
# direct (reference) path: derivative and RK4 on the full state


def apply_hamiltonian(state: CoupledState, sample: PumpSample, j: int, params: SystemParams,
                      blocks: list[LocalBlock] | None = None) -> list[np.ndarray]:
    """-i H_I(t)|psi> during bin ``j``, as per-sector arrays."""
    blocks = blocks or make_blocks(params, params.grid().widths[j - 1])
    out = [np.zeros_like(s) for s in state.sectors]
    tmp = CoupledState(state.spec, out)
    for blk in blocks:
        n_hist, slices = _block_slices(state.spec, blk, j)
        if n_hist == 0:
            continue
        G = blk.generator(sample)
        for cols in _col_chunks(n_hist):
            _scatter(tmp, slices, blk, cols, G @ _gather(state, slices, cols))
    return out


def rk4_step(state: CoupledState, cascade: LpfCascade | None, dt: float, params: SystemParams,
             j: int, blocks=None, stage_samples=None) -> CoupledState:
    """One classical RK4 step of the full state; the pump cascade advances with it."""
    if stage_samples is None:
        stage_samples, y_next = _stage_samples(cascade, dt, params)
    else:
        y_next = None
    blocks = blocks or make_blocks(params, params.grid().widths[j - 1])
    s1, s2, s3, s4 = stage_samples

    def axpy(a, xs, ys):
        return [x + a * y for x, y in zip(xs, ys)]

    psi = state.sectors
    k1 = apply_hamiltonian(state, s1, j, params, blocks)
    k2 = apply_hamiltonian(CoupledState(state.spec, axpy(dt / 2, psi, k1)), s2, j, params, blocks)
    k3 = apply_hamiltonian(CoupledState(state.spec, axpy(dt / 2, psi, k2)), s3, j, params, blocks)
    k4 = apply_hamiltonian(CoupledState(state.spec, axpy(dt, psi, k3)), s4, j, params, blocks)
    new = [p + dt / 6 * (a + 2 * b + 2 * c + d) for p, a, b, c, d in zip(psi, k1, k2, k3, k4)]
    out = CoupledState(state.spec, new, state.bin, state.t + dt)
    drift = abs(out.norm_sq() - state.norm_sq())
    if drift > STEP_NORM_TOL:
        raise NormDriftError(f"RK4 step at t={state.t:.4f} changed the norm by {drift:.3e}")
    if cascade is not None and y_next is not None:
        cascade.stages = y_next
        cascade.t += dt
    return out


def _stage_samples(cascade: LpfCascade | None, dt: float, params: SystemParams):
    if cascade is None or not params.pump_enabled:
        t0 = cascade.t if cascade is not None else 0.0
        zero = [PumpSample(t0 + c * dt, 0.0, 0.0) for c in (0, 0.5, 0.5, 1.0)]
        y_next = cascade.stages if cascade is not None else None
        return zero, y_next
    return cascade.stage_samples(dt, params.shortcut)


# ---------------------------------------------------------------------------
# run


@dataclass
class RunObservables:
    times: list[float] = field(default_factory=list)
    p: list[float] = field(default_factory=list)
    p_prime: list[float] = field(default_factory=list)
    n_kpo: list[float] = field(default_factory=list)
    norm: list[float] = field(default_factory=list)
    bin_populations: np.ndarray | None = None
    leakage_warnings: int = 0
    edge_population_max: float = 0.0
    causality_max: float = 0.0
    wall_time: float = 0.0

    @property
    def n_in(self) -> float:
        return float(self.n_kpo[-1])

    @property
    def n_out(self) -> float:
        return float(np.sum(self.bin_populations))

    @property
    def I_t(self) -> float:
        return float(trapezoid(self.n_kpo, self.times))

    @property
    def norm_drift(self) -> float:
        return float(np.max(np.abs(np.asarray(self.norm) - self.norm[0])))

    def summary(self) -> dict:
        return {
            "n_in": self.n_in,
            "n_out": self.n_out,
            "I_t": self.I_t,
            "norm_drift": self.norm_drift,
            "leakage_warnings": self.leakage_warnings,
            "edge_population_max": self.edge_population_max,
            "causality_max": self.causality_max,
            "wall_time_s": self.wall_time,
        }

    def write_timeseries_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,p,p_prime,n_kpo\n")
            for row in zip(self.times, self.p, self.p_prime, self.n_kpo):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _record(obs: RunObservables, t: float, sample: PumpSample, n_kpo: float, norm: float):
    obs.times.append(t)
    obs.p.append(sample.p)
    obs.p_prime.append(sample.p_prime)
    obs.n_kpo.append(n_kpo)
    obs.norm.append(norm)


def run_simulation(params: SystemParams, initial: CoupledState | None = None,
                   grid: TimeGrid | None = None, method: str = "propagator",
                   check_causality: bool = False) -> tuple[CoupledState, RunObservables]:
    """Evolve bin by bin from ``initial`` (default: KPO and line in vacuum).

    ``method="propagator"`` composes the local RK4 step matrices over each bin;
    ``method="direct"`` applies RK4 to the full state step by step.  Both give
    the same result to rounding.
    """
    if method not in ("propagator", "direct"):
        raise ValueError(f"unknown method {method!r}")
    wall = time.perf_counter()
    spec = params.sector_spec
    if initial is None:
        state = CoupledState.vacuum(spec, params.memory_budget, params.allow_over_budget)
    else:
        if initial.spec != spec:
            raise ValueError("initial state has a different sector spec")
        state = initial.copy()
    grid = grid or TimeGrid.build(params.T, params.J, params.substep_target)
    if grid.J != params.J:
        raise ValueError("time grid and params disagree on J")
    cascade = LpfCascade(params.K, params.A_p, params.kappa_ex, params.B, params.lpf_order)
    block_cache = {}
    obs = RunObservables()
    pops = np.zeros(params.J)

    first = _stage_samples(cascade, 1.0, params)[0][0]
    _record(obs, 0.0, first, state.kpo_photons(), state.norm_sq())

    for j in range(1, params.J + 1):
        dt = grid.step(j)
        nsub = int(grid.substeps[j - 1])
        width = float(grid.widths[j - 1])
        if width not in block_cache:
            block_cache[width] = make_blocks(params, width)
        blocks = block_cache[width]
        if check_causality:
            obs.causality_max = max(obs.causality_max, state.causality_violation(j - 1))
        if method == "direct":
            for _ in range(nsub):
                samples, _ = _stage_samples(cascade, dt, params)
                state = rk4_step(state, cascade, dt, params, j, blocks, samples)
                _advance(cascade, dt, params)
                s_now = _stage_samples(cascade, dt, params)[0][0]
                _record(obs, cascade.t, s_now, state.kpo_photons(), state.norm_sq())
            pops[j - 1] = _bin_population(state, blocks, j)
            edge = _edge_population(state, blocks, j)
        else:
            pops[j - 1], edge = _propagate_bin(state, cascade, blocks, params, j, dt, nsub, obs)
        obs.edge_population_max = max(obs.edge_population_max, float(edge))
        if edge > 1e-3:
            obs.leakage_warnings += 1
        state.bin = j
        state.t = float(grid.edges[j])
        cascade.t = state.t  # remove accumulated rounding in t
    if check_causality:
        obs.causality_max = max(obs.causality_max, state.causality_violation(params.J))
    obs.bin_populations = pops
    obs.wall_time = time.perf_counter() - wall
    if obs.leakage_warnings:
        logger.warning("truncation-edge population above 1e-3 in %d bins (max %.2e)",
                       obs.leakage_warnings, obs.edge_population_max)
    return state, obs


def _advance(cascade: LpfCascade, dt: float, params: SystemParams):
    if params.pump_enabled:
        cascade.advance(dt)
    else:
        cascade.t += dt


def _propagate_bin(state, cascade, blocks, params, j, dt, nsub, obs):
    # Gram matrices of the history columns; observables follow from U G U^dag
    grams, layouts = [], []
    for blk in blocks:
        n_hist, slices = _block_slices(state.spec, blk, j)
        layouts.append((n_hist, slices))
        G = np.zeros((blk.dim, blk.dim), dtype=complex)
        for cols in _col_chunks(n_hist):
            X = _gather(state, slices, cols)
            G += X @ X.conj().T
        grams.append(G)

    Us = [np.eye(blk.dim, dtype=complex) for blk in blocks]
    norm_prev = obs.norm[-1]
    for _ in range(nsub):
        samples, _ = _stage_samples(cascade, dt, params)
        for i, blk in enumerate(blocks):
            if layouts[i][0] == 0:
                continue
            A1, A2, A3, A4 = (blk.generator(s) for s in samples)
            U = Us[i]
            k1 = A1 @ U
            k2 = A2 @ (U + dt / 2 * k1)
            k3 = A3 @ (U + dt / 2 * k2)
            k4 = A4 @ (U + dt * k3)
            Us[i] = U + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _advance(cascade, dt, params)
        n_kpo = norm = 0.0
        for blk, U, G in zip(blocks, Us, grams):
            rho = U @ G @ U.conj().T
            d = np.real(np.diag(rho))
            norm += d.sum()
            n_kpo += d @ blk.n_kpo
        if abs(norm - norm_prev) > STEP_NORM_TOL:
            raise NormDriftError(f"RK4 step in bin {j} changed the norm by {abs(norm - norm_prev):.3e}")
        norm_prev = norm
        s_now = _stage_samples(cascade, dt, params)[0][0]
        _record(obs, cascade.t, s_now, n_kpo, norm)

    pop = edge = 0.0
    for blk, U, G, (n_hist, slices) in zip(blocks, Us, grams, layouts):
        if n_hist == 0:
            continue
        d = np.real(np.diag(U @ G @ U.conj().T))
        pop += d @ blk.n_bin
        edge += d[blk.edge].sum()
        for cols in _col_chunks(n_hist):
            X = _gather(state, slices, cols)
            _scatter(state, slices, blk, cols, U @ X)
    return pop, edge


def _bin_population(state: CoupledState, blocks, j: int) -> float:
    pop = 0.0
    for blk in blocks:
        n_hist, slices = _block_slices(state.spec, blk, j)
        if n_hist == 0:
            continue
        for cols in _col_chunks(n_hist):
            X = _gather(state, slices, cols)
            pop += float((np.abs(X) ** 2).sum(axis=1) @ blk.n_bin)
    return pop


def _edge_population(state: CoupledState, blocks, j: int) -> float:
    edge = 0.0
    for blk in blocks:
        n_hist, slices = _block_slices(state.spec, blk, j)
        if n_hist == 0:
            continue
        for cols in _col_chunks(n_hist):
            w = (np.abs(_gather(state, slices, cols)) ** 2).sum(axis=1)
            edge += w[blk.edge].sum()
    return edge


def write_summary_json(path, params: SystemParams, obs: RunObservables, extra: dict | None = None):
    out = {"params": params.to_dict(), **obs.summary(), **(extra or {})}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
