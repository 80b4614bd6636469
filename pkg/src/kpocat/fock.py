"""Single-mode Fock-space tools: states, density matrices, Wigner, cat fitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

logger = logging.getLogger(__name__)

TRUNCATION_TOL = 1e-6
TRACE_TOL = 0.02


class CutoffError(ValueError):
    """The Fock cutoff is too small to hold the requested state."""


@dataclass(frozen=True)
class FockVector:
    cutoff: int
    amps: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex)
        if amps.shape != (self.cutoff + 1,):
            raise ValueError(f"expected {self.cutoff + 1} amplitudes, got {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def padded(self, cutoff: int) -> np.ndarray:
        out = np.zeros(cutoff + 1, dtype=complex)
        n = min(cutoff, self.cutoff) + 1
        out[:n] = self.amps[:n]
        return out

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(self.cutoff, np.outer(self.amps, self.amps.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    cutoff: int
    elements: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.elements, dtype=complex)
        if rho.shape != (self.cutoff + 1, self.cutoff + 1):
            raise ValueError(f"density matrix shape {rho.shape} != cutoff {self.cutoff}")
        rho.setflags(write=False)
        object.__setattr__(self, "elements", rho)

    @property
    def trace(self) -> float:
        return float(np.trace(self.elements).real)

    def padded(self, cutoff: int) -> np.ndarray:
        out = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
        n = min(cutoff, self.cutoff) + 1
        out[:n, :n] = self.elements[:n, :n]
        return out

    def mean_photon_number(self) -> float:
        return float(np.real(np.diag(self.elements)) @ np.arange(self.cutoff + 1))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.elements - self.elements.conj().T), initial=0.0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "re", "im"])
            for m in range(self.cutoff + 1):
                for n in range(self.cutoff + 1):
                    z = self.elements[m, n]
                    w.writerow([m, n, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def from_csv(cls, path) -> "DensityMatrix":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        cutoff = int(rows[:, 0].max())
        rho = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
        rho[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2] + 1j * rows[:, 3]
        return cls(cutoff, rho)


# ---------------------------------------------------------------------------
# states and ladder operators


def fock_state(n: int, cutoff: int) -> FockVector:
    if not 0 <= n <= cutoff:
        raise CutoffError(f"|{n}> does not fit in cutoff {cutoff}")
    amps = np.zeros(cutoff + 1, dtype=complex)
    amps[n] = 1.0
    return FockVector(cutoff, amps)


def _coherent_amps(alpha: complex, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff + 1)
    if alpha == 0:
        amps = np.zeros(cutoff + 1, dtype=complex)
        amps[0] = 1.0
        return amps
    logmag = -abs(alpha) ** 2 / 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(alpha: complex, cutoff: int, renormalize: bool = True) -> FockVector:
    """Truncated coherent state, renormalized over ``0..cutoff``."""
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    amps = _coherent_amps(complex(alpha), cutoff)
    norm2 = float(np.vdot(amps, amps).real)
    if 1.0 - norm2 > TRUNCATION_TOL:
        raise CutoffError(
            f"cutoff {cutoff} loses {1 - norm2:.2e} of |alpha={alpha}> norm"
        )
    if renormalize:
        amps = amps / math.sqrt(norm2)
    return FockVector(cutoff, amps)


def cat_state(beta: float, theta: float = 0.0, parity: str = "even", cutoff: int = 30) -> FockVector:
    """(|b e^{i theta}> +/- |-b e^{i theta}>) with the standard cat normalization."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if parity not in ("even", "odd"):
        raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")
    if parity == "odd" and beta == 0:
        raise ValueError("odd cat needs beta > 0")
    sign = 1.0 if parity == "even" else -1.0
    plus = _coherent_amps(beta * np.exp(1j * theta), cutoff)
    # |-alpha> has amplitudes (-1)^n <n|alpha>, so the wrong-parity entries vanish exactly
    keep = 1.0 + sign * (-1.0) ** np.arange(cutoff + 1)
    amps = keep * plus / math.sqrt(2 * (1 + sign * math.exp(-2 * beta**2)))
    norm2 = float(np.vdot(amps, amps).real)
    if 1.0 - norm2 > TRUNCATION_TOL:
        raise CutoffError(f"cutoff {cutoff} too small for cat with beta={beta}")
    return FockVector(cutoff, amps / math.sqrt(norm2))


def annihilate(psi: FockVector) -> FockVector:
    out = np.zeros_like(psi.amps)
    out[:-1] = np.sqrt(np.arange(1, psi.cutoff + 1)) * psi.amps[1:]
    return FockVector(psi.cutoff, out)


def create(psi: FockVector) -> FockVector:
    """a^dag; the component pushed above the cutoff is dropped."""
    out = np.zeros_like(psi.amps)
    out[1:] = np.sqrt(np.arange(1, psi.cutoff + 1)) * psi.amps[:-1]
    return FockVector(psi.cutoff, out)


def parity(psi: FockVector) -> FockVector:
    return FockVector(psi.cutoff, psi.amps * (-1.0) ** np.arange(psi.cutoff + 1))


# ---------------------------------------------------------------------------
# density matrices


def check_density(rho: DensityMatrix, tol: float = TRACE_TOL, warn: bool = True) -> DensityMatrix:
    """Symmetrize and renormalize a reconstructed density matrix.

    A trace defect up to ``tol`` is fixed by renormalization with a warning;
    larger defects raise.
    """
    defect = abs(rho.trace - 1.0)
    if defect > tol:
        raise ValueError(f"trace defect {defect:.3g} exceeds {tol}")
    herm = 0.5 * (rho.elements + rho.elements.conj().T)
    if warn and defect > 1e-9:
        logger.warning("renormalizing density matrix, trace defect %.3g", defect)
    return DensityMatrix(rho.cutoff, herm / np.trace(herm).real)


def nearest_psd(rho: DensityMatrix) -> DensityMatrix:
    """Clip negative eigenvalues and renormalize to unit trace."""
    herm = 0.5 * (rho.elements + rho.elements.conj().T)
    w, v = np.linalg.eigh(herm)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    return DensityMatrix(rho.cutoff, out / np.trace(out).real)


def fidelity_pure(rho: DensityMatrix, psi: FockVector, herm_tol: float = 1e-8) -> float:
    """<psi|rho|psi> with both objects zero-padded to the larger cutoff."""
    if rho.hermiticity_error() > herm_tol:
        raise ValueError(f"density matrix is not Hermitian ({rho.hermiticity_error():.2e})")
    cutoff = max(rho.cutoff, psi.cutoff)
    v = psi.padded(cutoff)
    value = np.vdot(v, rho.padded(cutoff) @ v)
    f = float(value.real)
    if -1e-9 <= f < 0.0:
        f = 0.0
    elif 1.0 < f <= 1.0 + 1e-9:
        f = 1.0
    return f


# ---------------------------------------------------------------------------
# Wigner function


@dataclass(frozen=True)
class WignerGrid:
    re_axis: np.ndarray
    im_axis: np.ndarray
    values: np.ndarray  # values[i_im, i_re]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im", "W"])
            for i, y in enumerate(self.im_axis):
                for k, x in enumerate(self.re_axis):
                    w.writerow([f"{x:.10g}", f"{y:.10g}", repr(float(self.values[i, k]))])


def grid_axis(lo: float = -3.0, hi: float = 3.0, step: float = 0.05) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def wigner_points(rho: DensityMatrix, betas: np.ndarray) -> np.ndarray:
    """W(beta) = (2/pi) sum_n (-1)^n <phi_n|rho|phi_n>, phi_n = D(beta)|n>.

    The displaced Fock states are built by the recurrence
    ``phi_{n+1} = (a^dag - beta^*) phi_n / sqrt(n+1)`` starting from the
    coherent state.  Only components ``m <= cutoff`` are needed, and those
    are closed under the recurrence.  The sum over ``n`` runs to
    ``cutoff + 8`` plus a margin that grows with ``|beta|``.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=complex))
    rho_m = 0.5 * (rho.elements + rho.elements.conj().T)
    N = rho.cutoff
    m = np.arange(N + 1)
    sqrt_m = np.sqrt(m)
    r = float(np.abs(betas).max()) if betas.size else 0.0
    n_max = N + 8 + math.ceil(r * r + 10 * r)

    phi = np.stack([_coherent_amps(b, N) for b in betas])  # (points, N+1)
    out = np.zeros(len(betas))
    sign = 1.0
    bconj = betas.conj()[:, None]
    for n in range(n_max + 1):
        out += sign * np.einsum("pi,ij,pj->p", phi.conj(), rho_m, phi).real
        raised = np.zeros_like(phi)
        raised[:, 1:] = sqrt_m[1:] * phi[:, :-1]
        phi = (raised - bconj * phi) / math.sqrt(n + 1)
        sign = -sign
    return 2.0 / math.pi * out


def wigner(rho: DensityMatrix, re_axis=None, im_axis=None) -> WignerGrid:
    re_axis = grid_axis() if re_axis is None else np.asarray(re_axis, dtype=float)
    im_axis = grid_axis() if im_axis is None else np.asarray(im_axis, dtype=float)
    X, Y = np.meshgrid(re_axis, im_axis)
    betas = (X + 1j * Y).ravel()
    values = np.empty(betas.size)
    chunk = 4096
    for s in range(0, betas.size, chunk):
        values[s : s + chunk] = wigner_points(rho, betas[s : s + chunk])
    return WignerGrid(re_axis, im_axis, values.reshape(X.shape))


# ---------------------------------------------------------------------------
# cat fitting


@dataclass(frozen=True)
class CatFit:
    beta_cat: float
    theta_cat: float
    fidelity: float

    @property
    def beta_sq(self) -> float:
        return self.beta_cat**2

    @property
    def theta_over_pi(self) -> float:
        return self.theta_cat / math.pi


def _fold_theta(theta: float) -> float:
    # the even cat is invariant under theta -> theta + pi
    t = (theta + math.pi / 2) % math.pi - math.pi / 2
    return math.pi / 2 if t <= -math.pi / 2 + 1e-15 else t


def _even_cat_amps(beta_sq: np.ndarray, theta: np.ndarray, N: int) -> np.ndarray:
    """Untruncated even-cat amplitudes for n <= N, vectorized over parameters."""
    beta_sq = np.asarray(beta_sq, dtype=float)[..., None]
    theta = np.asarray(theta, dtype=float)[..., None]
    n = np.arange(N + 1)
    even = (n % 2 == 0).astype(float)
    with np.errstate(divide="ignore"):
        logb = np.where(beta_sq > 0, 0.5 * np.log(np.where(beta_sq > 0, beta_sq, 1.0)), 0.0)
    logmag = -beta_sq / 2 + n * logb - 0.5 * gammaln(n + 1)
    mag = np.where((beta_sq == 0) & (n > 0), 0.0, np.exp(logmag))
    norm = np.sqrt(2 * (1 + np.exp(-2 * beta_sq)))
    return 2 * even * mag * np.exp(1j * n * theta) / norm


def _fit_cutoff(beta: float, N: int) -> int:
    return max(N, int(math.ceil(beta**2 + 12 * beta + 30)))


def fit_cat(rho: DensityMatrix, beta_sq_step: float = 0.02, theta_step: float = math.pi / 200,
            xtol: float = 1e-6) -> CatFit:
    """Even cat (beta_cat, theta_cat) maximizing <cat|rho|cat>.

    A coarse grid over beta^2 in [0, 2<n>+2] and theta in (-pi/2, pi/2] is
    followed by Nelder-Mead refinement.
    """
    N = rho.cutoff
    herm = 0.5 * (rho.elements + rho.elements.conj().T)
    nbar = max(0.0, float(np.real(np.diag(herm)) @ np.arange(N + 1)))
    b2_axis = np.arange(0.0, 2 * nbar + 2 + 1e-12, beta_sq_step)
    n_theta = int(round(math.pi / theta_step))
    th_axis = -math.pi / 2 + theta_step * np.arange(1, n_theta + 1)
    B2, TH = np.meshgrid(b2_axis, th_axis, indexing="ij")
    v = _even_cat_amps(B2, TH, N)
    F = np.einsum("abi,ij,abj->ab", v.conj(), herm, v).real
    ia, ib = np.unravel_index(np.argmax(F), F.shape)
    b0, t0 = float(b2_axis[ia]), float(th_axis[ib])
    best = (float(F[ia, ib]), b0, t0)

    def neg(x):
        b2 = abs(x[0])
        w = _even_cat_amps(b2, x[1], N)
        return -float(np.vdot(w, herm @ w).real)

    if b0 > 0 or N > 0:
        res = minimize(
            neg, x0=[b0, t0], method="Nelder-Mead",
            options={"xatol": xtol, "fatol": 1e-14, "maxiter": 4000,
                     "initial_simplex": [[b0, t0], [b0 + beta_sq_step, t0], [b0, t0 + theta_step]]},
        )
        if -res.fun > best[0]:
            best = (-float(res.fun), abs(float(res.x[0])), float(res.x[1]))
    _, b2, th = best
    beta = math.sqrt(b2)
    th = _fold_theta(th) if beta > 0 else 0.0
    # recompute from the stored fields so the record is self-consistent
    psi = cat_state(beta, th, "even", _fit_cutoff(beta, N))
    fid = fidelity_pure(DensityMatrix(N, herm), psi)
    return CatFit(beta, th, fid)


def fit_coherent(rho: DensityMatrix) -> tuple[complex, float]:
    """Coherent amplitude maximizing <alpha|rho|alpha>, seeded by <a>."""
    N = rho.cutoff
    herm = 0.5 * (rho.elements + rho.elements.conj().T)
    a_mean = complex(np.trace(herm @ np.diag(np.sqrt(np.arange(1, N + 1)), 1)))

    def neg(x):
        w = _coherent_amps(complex(x[0], x[1]), N)
        return -float(np.vdot(w, herm @ w).real)

    res = minimize(neg, x0=[a_mean.real, a_mean.imag], method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 4000})
    alpha = complex(res.x[0], res.x[1])
    psi = coherent_state(alpha, _fit_cutoff(abs(alpha), N))
    return alpha, fidelity_pure(DensityMatrix(N, herm), psi)


def save_vector_csv(path: Path, psi: FockVector) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "re", "im"])
        for n, z in enumerate(psi.amps):
            w.writerow([n, repr(float(z.real)), repr(float(z.imag))])
