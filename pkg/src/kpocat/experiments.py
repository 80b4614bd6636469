"""Canned runs: the four reference settings, J sweeps, the closed-KPO shortcut
comparison, the linear-cavity release check and the internal-loss estimate."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import basis, fock, tomography
from .dynamics import DEFAULT_SUBSTEP, CoupledState, RunObservables, SystemParams, run_simulation
from .pump import LinearRamp, ShortcutMode

logger = logging.getLogger(__name__)

VARIANTS = ("a", "b", "c", "d")
DESK_L = 4
FULL_L = 6


def load_config(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    text = resources.files("kpocat.configs").joinpath(f"table1_{variant}.json").read_text()
    return json.loads(text)


def variant_params(variant: str, overrides: dict | None = None, full_truncation: bool = False) -> SystemParams:
    cfg = load_config(variant)
    kw = dict(cfg["params"])
    kw["L"] = FULL_L if full_truncation else DESK_L
    for k, v in (overrides or {}).items():
        if v is not None:
            kw[k] = v
    if "kpo_cutoffs" not in kw or kw["kpo_cutoffs"] is None:
        kw["kpo_cutoffs"] = basis.SectorSpec.reference(kw.get("J", 80), kw["L"]).kpo_cutoffs
    return SystemParams(**kw)


# ---------------------------------------------------------------------------
# pulse analysis shared by the runs


@dataclass
class PulseAnalysis:
    envelope: tomography.PulseEnvelope
    moments: tomography.MomentsTable
    rho: fock.DensityMatrix
    trace: float
    min_eigenvalue: float


def analyse_pulse(state: CoupledState, populations, psd: bool = False) -> PulseAnalysis:
    env = tomography.envelope_from_populations(populations)
    table = tomography.moments(state, env)
    raw = tomography.reconstruct_density(table)
    rho = fock.check_density(raw)
    if psd:
        rho = fock.nearest_psd(rho)
    min_eig = float(np.linalg.eigvalsh(rho.elements).min())
    return PulseAnalysis(env, table, rho, raw.trace, min_eig)


# ---------------------------------------------------------------------------
# reference-setting runs


@dataclass
class Table1Result:
    variant: str
    params: SystemParams
    observables: RunObservables
    pulse: PulseAnalysis
    fit: fock.CatFit
    reference: dict
    wigner: fock.WignerGrid | None = None

    def summary(self) -> dict:
        obs = self.observables
        return {
            "variant": self.variant,
            "fidelity": self.fit.fidelity,
            "beta_cat_sq": self.fit.beta_sq,
            "theta_cat_over_pi": self.fit.theta_over_pi,
            "n_in": obs.n_in,
            "K_I_t": self.params.K * obs.I_t,
            "n_out": obs.n_out,
            "kappa_ex_I_t": self.params.kappa_ex * obs.I_t,
            "norm_drift": obs.norm_drift,
            "rho_trace_raw": self.pulse.trace,
            "rho_min_eigenvalue": self.pulse.min_eigenvalue,
            "leakage_warnings": obs.leakage_warnings,
            "edge_population_max": obs.edge_population_max,
            "reference": self.reference,
        }


def run_table1(variant: str, overrides: dict | None = None, out_dir: str | Path | None = None,
               full_truncation: bool = False, wigner_step: float | None = 0.05,
               psd: bool = False) -> Table1Result:
    params = variant_params(variant, overrides, full_truncation)
    lay = basis.layout(params.sector_spec, params.memory_budget, allow_over_budget=True)
    logger.info("variant %s: %d amplitudes, %.2f GiB per state copy", variant, lay.total,
                lay.memory_bytes / 1024**3)
    state, obs = run_simulation(params)
    t0 = time.perf_counter()
    pulse = analyse_pulse(state, obs.bin_populations, psd=psd)
    fit = fock.fit_cat(pulse.rho)
    grid = None
    if wigner_step:
        axis = fock.grid_axis(-3.0, 3.0, wigner_step)
        grid = fock.wigner(pulse.rho, axis, axis)
    analysis_time = time.perf_counter() - t0
    res = Table1Result(variant, params, obs, pulse, fit, load_config(variant)["reference"], grid)
    if out_dir is not None:
        write_run_dir(Path(out_dir), res, {"simulation_s": obs.wall_time, "analysis_s": analysis_time})
    return res


def write_run_dir(out: Path, res: Table1Result, timings: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "params.json", "w") as fh:
        json.dump(res.params.to_dict(), fh, indent=2, sort_keys=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(res.summary()), fh, indent=2, sort_keys=True)
    with open(out / "timings.json", "w") as fh:
        json.dump(timings, fh, indent=2, sort_keys=True)
    res.observables.write_timeseries_csv(out / "timeseries.csv")
    res.pulse.rho.to_csv(out / "density.csv")
    res.pulse.moments.to_csv(out / "moments.csv")
    res.pulse.envelope.to_csv(out / "envelope.csv", res.observables.bin_populations)
    if res.wigner is not None:
        res.wigner.to_csv(out / "wigner.csv")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# J convergence


@dataclass
class JSweepFit:
    J: np.ndarray
    n_out: np.ndarray
    n0: float
    b: float
    residuals: np.ndarray
    r_squared: float

    @property
    def discrepancy(self) -> float:
        """|n_out(J_max) - n0| / n0."""
        i = int(np.argmax(self.J))
        return abs(self.n_out[i] - self.n0) / self.n0

    def to_dict(self) -> dict:
        return {
            "J": self.J.tolist(), "n_out": self.n_out.tolist(), "n0": self.n0, "b": self.b,
            "residuals": self.residuals.tolist(), "r_squared": self.r_squared,
            "discrepancy": self.discrepancy,
        }


def fit_inverse_j(J, n_out) -> JSweepFit:
    """Least-squares fit of n_out = n0 - b / J."""
    J = np.asarray(J, dtype=float)
    y = np.asarray(n_out, dtype=float)
    if len(np.unique(J)) < 3:
        raise ValueError("need at least three distinct J values")
    X = np.column_stack([np.ones_like(J), -1.0 / J])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("degenerate data: n_out does not vary with J")
    r2 = 1.0 - float((resid**2).sum()) / ss_tot
    return JSweepFit(J, y, float(coef[0]), float(coef[1]), resid, r2)


def run_j_sweep(variant: str, Js=(20, 40, 60, 80), overrides: dict | None = None) -> tuple[JSweepFit, list[dict]]:
    rows = []
    for J in Js:
        if J % 5:
            raise ValueError(f"J={J} is not a multiple of 5")
        params = variant_params(variant, {**(overrides or {}), "J": J})
        _, obs = run_simulation(params)
        rows.append({"J": J, "n_out": obs.n_out, "kappa_ex_I_t": params.kappa_ex * obs.I_t,
                     "n_in": obs.n_in})
        logger.info("J=%d n_out=%.6f", J, obs.n_out)
    return fit_inverse_j([r["J"] for r in rows], [r["n_out"] for r in rows]), rows


# ---------------------------------------------------------------------------
# closed KPO with a linear ramp


@dataclass
class ClosedKpoResult:
    mode: str
    times: np.ndarray
    p: np.ndarray
    p_prime: np.ndarray
    n: np.ndarray
    fidelity: np.ndarray

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity[-1])

    @property
    def oscillation(self) -> float:
        """Largest drop of <a^dag a> below an earlier value (0 if monotone)."""
        return float(np.max(np.maximum.accumulate(self.n) - self.n))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,p,p_prime,n,fidelity\n")
            for row in zip(self.times, self.p, self.p_prime, self.n, self.fidelity):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def kpo_hamiltonian(cutoff: int, K: float, p: float, p_prime: float = 0.0) -> np.ndarray:
    """Dense single-mode KPO Hamiltonian.

    Includes the c-number ``-|P|^2/(2K)`` (for K > 0), so that
    ``H = -(K/2)(a^dag^2 - P*/K)(a^2 - P/K)`` annihilates ``|+-sqrt(P/K)>``.
    """
    n = np.arange(cutoff + 1)
    P = complex(p, p_prime)
    a2dag = np.diag(np.sqrt((n[:-2] + 1) * (n[:-2] + 2)), -2).astype(complex)
    H = 0.5 * P * a2dag + 0.5 * P.conjugate() * a2dag.T
    diag = -0.5 * K * n * (n - 1)
    if K > 0:
        diag = diag - abs(P) ** 2 / (2 * K)
    return H + np.diag(diag)


def run_closed_kpo(mode: str = "eq12", cutoff: int = 30, ramp_time: float = 10.0,
                   p_final: float = 2.0, K: float = 1.0, dt: float = 1e-3) -> ClosedKpoResult:
    """Vacuum evolved under the KPO Hamiltonian while p ramps linearly to ``p_final``."""
    mode = ShortcutMode(mode).value
    if cutoff < 30:
        raise ValueError("closed-KPO comparison needs a Fock cutoff of at least 30")
    # RK4 is stable for |lambda| dt below 2*sqrt(2); the Kerr spectrum dominates
    spread = 0.5 * K * cutoff * (cutoff - 1) + p_final * cutoff + p_final**2 / (2 * K)
    if spread * dt > 2.5:
        raise ValueError(f"dt={dt} is outside the RK4 stability region for cutoff {cutoff}")
    ramp = LinearRamp(K, p_final, ramp_time)
    target = fock.cat_state(math.sqrt(p_final / K), 0.0, "even", cutoff).amps
    steps = int(round(ramp_time / dt))
    dt = ramp_time / steps
    psi = np.zeros(cutoff + 1, dtype=complex)
    psi[0] = 1.0
    n_op = np.arange(cutoff + 1)
    times = np.linspace(0.0, ramp_time, steps + 1)
    ns = np.empty(steps + 1)
    fs = np.empty(steps + 1)
    ps = np.empty(steps + 1)
    pps = np.empty(steps + 1)

    def gen(t):
        s = ramp.sample_at(t, mode)
        return -1j * kpo_hamiltonian(cutoff, K, s.p, s.p_prime), s

    A_next, s0 = gen(0.0)
    for i in range(steps + 1):
        ns[i] = float(np.abs(psi) ** 2 @ n_op)
        fs[i] = abs(np.vdot(target, psi)) ** 2
        s_i = ramp.sample_at(times[i], mode)
        ps[i], pps[i] = s_i.p, s_i.p_prime
        if i == steps:
            break
        A1 = A_next
        A2, _ = gen(times[i] + dt / 2)
        A_next, _ = gen(times[i + 1])
        k1 = A1 @ psi
        k2 = A2 @ (psi + dt / 2 * k1)
        k3 = A2 @ (psi + dt / 2 * k2)
        k4 = A_next @ (psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ClosedKpoResult(mode, times, ps, pps, ns, fs)


# ---------------------------------------------------------------------------
# linear cavity release


@dataclass
class LinearCavityResult:
    times: np.ndarray
    n_kpo: np.ndarray
    expected: np.ndarray
    alpha_fit: complex
    fidelity: float
    observables: RunObservables = field(repr=False)

    @property
    def max_relative_error(self) -> float:
        return float(np.max(np.abs(self.n_kpo - self.expected) / self.expected))

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.n_kpo - self.expected)))


def run_linear_cavity(alpha: complex = 1.0, J: int = 80, L: int = 4, T: float = 50.0,
                      kappa_ex: float = 0.2, kpo_cutoffs=None, substep_target: float = DEFAULT_SUBSTEP,
                      fock_cutoff: int = 30) -> LinearCavityResult:
    """K = 0, no pump, KPO starting in |alpha>: the pulse should leave in |alpha>."""
    if kpo_cutoffs is None:
        kpo_cutoffs = basis.SectorSpec.reference(J, L).kpo_cutoffs
    params = SystemParams(K=0.0, kappa_ex=kappa_ex, T=T, J=J, L=L, kpo_cutoffs=kpo_cutoffs,
                          pump_enabled=False, substep_target=substep_target)
    amps = fock.coherent_state(alpha, fock_cutoff).amps[: kpo_cutoffs[0] + 1]
    amps = amps / np.linalg.norm(amps)
    initial = CoupledState.from_kpo(params.sector_spec, amps)
    state, obs = run_simulation(params, initial=initial)
    t = np.asarray(obs.times)
    n = np.asarray(obs.n_kpo)
    pulse = analyse_pulse(state, obs.bin_populations)
    a_fit, fid = fock.fit_coherent(pulse.rho)
    return LinearCavityResult(t, n, n[0] * np.exp(-kappa_ex * t), a_fit, fid, obs)


# ---------------------------------------------------------------------------
# internal loss


@dataclass(frozen=True)
class LossEstimate:
    omega_kpo: float  # angular frequency, rad/s
    K: float  # rad/s
    kappa_ex: float
    kappa_in: float
    I_t: float  # s
    photon_loss_prob: float
    Q_ex: float
    Q_in: float

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_loss(K_hz: float = 10e6, omega_kpo_hz: float = 10e9, kappa_ex_over_K: float = 0.2,
                  K_I_t: float = 10.0, kappa_in_over_K: float | None = None,
                  Q_in: float | None = None, loss_bound: float | None = None) -> LossEstimate:
    """Photon-loss probability kappa_in * I_t and the quality factors.

    Frequencies are ordinary (omega / 2 pi); exactly one of ``kappa_in_over_K``,
    ``Q_in`` or ``loss_bound`` fixes the internal loss rate.
    """
    if min(K_hz, omega_kpo_hz, kappa_ex_over_K, K_I_t) <= 0:
        raise ValueError("K, omega_kpo, kappa_ex and I_t must be positive")
    given = [x is not None for x in (kappa_in_over_K, Q_in, loss_bound)]
    if sum(given) != 1:
        raise ValueError("give exactly one of kappa_in_over_K, Q_in, loss_bound")
    K = 2 * math.pi * K_hz
    omega = 2 * math.pi * omega_kpo_hz
    kappa_ex = kappa_ex_over_K * K
    I_t = K_I_t / K
    if kappa_in_over_K is not None:
        if kappa_in_over_K < 0:
            raise ValueError("kappa_in must be >= 0")
        kappa_in = kappa_in_over_K * K
    elif Q_in is not None:
        if Q_in <= 0:
            raise ValueError("Q_in must be positive")
        kappa_in = omega / Q_in
    else:
        if loss_bound < 0:
            raise ValueError("loss bound must be >= 0")
        kappa_in = loss_bound / I_t
    q_in = omega / kappa_in if kappa_in > 0 else math.inf
    return LossEstimate(omega, K, kappa_ex, kappa_in, I_t, kappa_in * I_t, omega / kappa_ex, q_in)


# ---------------------------------------------------------------------------
# truncation comparison


def compare_output_truncation(variant: str, J: int, Ls=(4, 5), overrides: dict | None = None) -> dict:
    """Cat-fit fidelity of one setting at several output-photon cutoffs L."""
    out = {}
    for L in Ls:
        params = variant_params(variant, {**(overrides or {}), "J": J, "L": L,
                                          "kpo_cutoffs": basis.SectorSpec.reference(J, L).kpo_cutoffs})
        state, obs = run_simulation(params)
        pulse = analyse_pulse(state, obs.bin_populations)
        fit = fock.fit_cat(pulse.rho)
        out[L] = {"fidelity": fit.fidelity, "beta_cat_sq": fit.beta_sq, "n_in": obs.n_in,
                  "K_I_t": params.K * obs.I_t}
    return out

