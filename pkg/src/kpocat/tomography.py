"""State of the emitted pulse mode from the final coupled state.

The pulse mode is ``b_p = sum_j f_j b_j`` with the real envelope
``f_j = sqrt(n_j / sum_l n_l)`` built from the final bin populations.  Its
density matrix follows from the normally ordered moments
``M[m, n] = <b_p^dag^m b_p^n>``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import basis
from .dynamics import CoupledState
from .fock import TRACE_TOL, DensityMatrix


class NoEmissionError(ValueError):
    """The output line holds no photons, so no envelope can be defined."""


@dataclass(frozen=True)
class PulseEnvelope:
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if np.any(f < 0):
            raise ValueError("envelope must be non-negative")
        if abs(float(f @ f) - 1.0) > 1e-12:
            raise ValueError("envelope must satisfy sum f_j^2 = 1")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def J(self) -> int:
        return len(self.f)

    def to_csv(self, path, populations=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "f", "population"])
            pops = populations if populations is not None else [float("nan")] * self.J
            for j, (fj, nj) in enumerate(zip(self.f, pops), start=1):
                w.writerow([j, repr(float(fj)), repr(float(nj))])


def envelope_from_populations(populations) -> PulseEnvelope:
    pops = np.clip(np.asarray(populations, dtype=float), 0.0, None)
    total = pops.sum()
    if not total > 0:
        raise NoEmissionError("no photons in the output line")
    f = np.sqrt(pops / total)
    return PulseEnvelope(f / math.sqrt(f @ f))


@lru_cache(maxsize=8)
def _sector_tuples(l: int, J: int) -> np.ndarray:
    t = basis.enumerate_sector(l, J)
    t.setflags(write=False)
    return t


def bin_populations(state: CoupledState) -> np.ndarray:
    """<b_j^dag b_j> for every bin, summed directly over the stored amplitudes."""
    J = state.spec.J
    pops = np.zeros(J)
    for l, s in enumerate(state.sectors):
        if l == 0:
            continue
        w = (np.abs(s) ** 2).sum(axis=0)
        tuples = _sector_tuples(l, J)
        for i in range(l):
            pops += np.bincount(tuples[:, i] - 1, weights=w, minlength=J)
    return pops


class PulseModeOperator:
    """b_p = sum_j f_j b_j as one sparse matrix per output sector.

    ``lowering[l]`` maps sector ``l`` amplitudes (indexed by rank) to sector
    ``l - 1``.  Removing each tuple position once with weight
    ``f_g / sqrt(mult_g)`` sums to the bosonic factor ``f_g sqrt(mult_g)``.
    """

    def __init__(self, envelope: PulseEnvelope, L: int):
        self.envelope = envelope
        self.L = L
        J = envelope.J
        f = envelope.f
        self.lowering = [None]
        for l in range(1, L + 1):
            tuples = _sector_tuples(l, J)
            n = len(tuples)
            rows, cols, vals = [], [], []
            src = np.arange(n)
            for i in range(l):
                g = tuples[:, i]
                mult = (tuples == g[:, None]).sum(axis=1)
                sub = np.delete(tuples, i, axis=1)
                rows.append(basis.rank_array(sub))
                cols.append(src)
                vals.append(f[g - 1] / np.sqrt(mult))
            mat = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(basis.multiset_count(J, l - 1), n),
            )
            self.lowering.append(mat)

    def apply(self, sectors: list[np.ndarray]) -> list[np.ndarray]:
        """b_p on per-sector arrays ``(kpo_rows, rank)``; the result is unnormalized."""
        if len(sectors) < 2:
            return []
        return [(self.lowering[l] @ sectors[l].T).T for l in range(1, len(sectors))]

    def apply_dag(self, sectors: list[np.ndarray]) -> list[np.ndarray]:
        """b_p^dag, dropping the part that would leave sector ``L``."""
        out = [np.zeros((sectors[0].shape[0], 1), dtype=complex)]
        for l in range(1, self.L + 1):
            if l - 1 < len(sectors):
                out.append((self.lowering[l].T @ sectors[l - 1].T).T)
        return out


def _inner(xs: list[np.ndarray], ys: list[np.ndarray]) -> complex:
    total = 0j
    for x, y in zip(xs, ys):
        r = min(x.shape[0], y.shape[0])
        total += np.vdot(x[:r], y[:r])
    return total


@dataclass(frozen=True)
class MomentsTable:
    M: np.ndarray

    @property
    def M_max(self) -> int:
        return self.M.shape[0] - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "re", "im"])
            for m in range(self.M_max + 1):
                for n in range(self.M_max + 1):
                    z = self.M[m, n]
                    w.writerow([m, n, repr(float(z.real)), repr(float(z.imag))])


def lowered_states(state_sectors: list[np.ndarray], op: PulseModeOperator, M_max: int):
    out = [list(state_sectors)]
    for _ in range(M_max):
        out.append(op.apply(out[-1]))
    return out


def moments(state: CoupledState, envelope: PulseEnvelope, M_max: int | None = None,
            op: PulseModeOperator | None = None) -> MomentsTable:
    L = state.spec.L
    M_max = L if M_max is None else M_max
    if M_max > L:
        raise ValueError(f"M_max={M_max} exceeds the output truncation L={L}")
    op = op or PulseModeOperator(envelope, L)
    vecs = lowered_states(state.sectors, op, M_max)
    M = np.zeros((M_max + 1, M_max + 1), dtype=complex)
    for m in range(M_max + 1):
        for n in range(m, M_max + 1):
            M[m, n] = _inner(vecs[m], vecs[n])
            M[n, m] = M[m, n].conjugate()
    return MomentsTable(M)


def reconstruct_density(table: MomentsTable, cutoff: int | None = None,
                        trace_tol: float = TRACE_TOL) -> DensityMatrix:
    """rho[m, n] = sum_l (-1)^l / l! M[n+l, m+l] / sqrt(m! n!), sum truncated at M_max."""
    M = table.M
    M_max = table.M_max
    cutoff = M_max if cutoff is None else cutoff
    if cutoff > M_max:
        raise ValueError("cutoff cannot exceed M_max")
    fact = [math.factorial(k) for k in range(M_max + 1)]
    rho = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    for m in range(cutoff + 1):
        for n in range(cutoff + 1):
            acc = 0j
            for l in range(M_max - max(m, n) + 1):
                acc += (-1) ** l / fact[l] * M[n + l, m + l]
            rho[m, n] = acc / math.sqrt(fact[m] * fact[n])
    rho = 0.5 * (rho + rho.conj().T)
    defect = abs(np.trace(rho).real - 1.0)
    if defect > trace_tol:
        raise ValueError(
            f"trace defect {defect:.3g} of the reconstructed density matrix exceeds {trace_tol}; "
            "raise M_max"
        )
    return DensityMatrix(cutoff, rho)


def pulse_state_vector(pulse_amps, envelope: PulseEnvelope,
                       spec: basis.SectorSpec) -> CoupledState:
    """KPO vacuum times sum_n c_n |n>_pulse, built with repeated b_p^dag.

    Used to construct test pulses (coherent, cat) on a small bin grid.
    """
    op = PulseModeOperator(envelope, spec.L)
    state = CoupledState.vacuum(spec)
    vac = [s.copy() for s in state.sectors]
    cur = [np.zeros_like(s) for s in vac]
    cur[0][0, 0] = 1.0
    acc = [np.zeros_like(s) for s in vac]
    for n, c in enumerate(pulse_amps):
        if n > spec.L:
            if abs(c) > 0:
                raise ValueError("pulse amplitude beyond the output truncation")
            continue
        for a, x in zip(acc, cur):
            a += c / math.sqrt(math.factorial(n)) * x
        raised = op.apply_dag(cur)
        cur = [np.zeros_like(s) for s in vac]
        for l, r in enumerate(raised):
            rows = min(r.shape[0], cur[l].shape[0])
            cur[l][:rows] = r[:rows]
    state.sectors = acc
    return state
