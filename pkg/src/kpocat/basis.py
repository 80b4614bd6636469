"""Symmetrized basis of the KPO coupled to J position bins of the output line.

A sector ``l`` holds states with ``l`` output photons.  Each output
configuration is a non-increasing tuple ``(j_1 >= j_2 >= ... >= j_l)`` of bin
indices in ``1..J``.  Tuples are ranked colexicographically through the
combinatorial number system, so that all tuples with ``j_1 <= j`` form the
prefix ``[0, C(j+l-1, l))`` of the sector.  The simulator relies on that
prefix property: before bin ``j`` is processed only the prefix can be nonzero.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

REFERENCE_KPO_CUTOFFS = (6, 6, 6, 5, 4, 3, 2)
DEFAULT_MEMORY_BUDGET = 8 * 1024**3
BYTES_PER_AMPLITUDE = 16


class MemoryBudgetError(RuntimeError):
    """Raised when a layout would exceed the configured memory budget."""


class TruncationError(ValueError):
    """Raised when an operator would leave the truncated output space."""


@lru_cache(maxsize=None)
def binom(n: int, k: int) -> int:
    if k < 0 or n < k:
        return 0
    return math.comb(n, k)


def multiset_count(J: int, l: int) -> int:
    """Number of size-``l`` multisets drawn from ``J`` bins."""
    if l == 0:
        return 1
    if J <= 0:
        return 0
    return binom(J + l - 1, l)


@dataclass(frozen=True)
class SectorSpec:
    """Truncation of the coupled space.

    ``kpo_cutoffs[l]`` is the largest KPO photon number kept when ``l``
    photons sit in the output line.
    """

    J: int
    max_out_photons: int = 4
    kpo_cutoffs: tuple[int, ...] = field(default=REFERENCE_KPO_CUTOFFS[:5])

    def __post_init__(self):
        cut = tuple(int(n) for n in self.kpo_cutoffs)
        object.__setattr__(self, "kpo_cutoffs", cut)
        if self.J < 1:
            raise ValueError("J must be positive")
        if self.max_out_photons < 0:
            raise ValueError("max_out_photons must be >= 0")
        if len(cut) != self.max_out_photons + 1:
            raise ValueError(
                f"need {self.max_out_photons + 1} KPO cutoffs, got {len(cut)}"
            )
        if any(n < 0 for n in cut):
            raise ValueError("KPO cutoffs must be non-negative")

    @classmethod
    def reference(cls, J: int, L: int = 6) -> "SectorSpec":
        """Cutoffs N_0..N_L of the reference truncation (6,6,6,5,4,3,2), extended with 2 beyond L=6."""
        if L > 6:
            extra = (REFERENCE_KPO_CUTOFFS[-1],) * (L - 6)
            return cls(J, L, REFERENCE_KPO_CUTOFFS + extra)
        return cls(J, L, REFERENCE_KPO_CUTOFFS[: L + 1])

    @property
    def L(self) -> int:
        return self.max_out_photons


# ---------------------------------------------------------------------------
# multi-indices


def validate(m: tuple[int, ...], J: int | None = None) -> None:
    for a, b in zip(m, m[1:]):
        if a < b:
            raise ValueError(f"multi-index {m} is not non-increasing")
    if m and m[-1] < 1:
        raise ValueError(f"bin indices start at 1, got {m}")
    if J is not None and m and m[0] > J:
        raise ValueError(f"bin index {m[0]} exceeds J={J}")


def norm_factor(m: tuple[int, ...]) -> float:
    """1/sqrt(prod_g mult_g!) over the run lengths of the tuple."""
    validate(m)
    denom = 1
    for c in Counter(m).values():
        denom *= math.factorial(c)
    return 1.0 / math.sqrt(denom)


def rank(m: tuple[int, ...], J: int | None = None) -> int:
    validate(m, J)
    l = len(m)
    return sum(binom(j - 1 + l - i, l - i + 1) for i, j in enumerate(m, start=1))


def unrank(r: int, l: int, J: int) -> tuple[int, ...]:
    if not 0 <= r < multiset_count(J, l):
        raise IndexError(f"rank {r} out of range for sector l={l}, J={J}")
    out = []
    for i in range(1, l + 1):
        k = l - i + 1
        # largest c with C(c, k) <= r
        c = k - 1
        while binom(c + 1, k) <= r:
            c += 1
        r -= binom(c, k)
        out.append(c - (l - i) + 1)
    return tuple(out)


def enumerate_sector(l: int, J: int) -> np.ndarray:
    """All size-``l`` tuples over ``J`` bins as rows, in rank order."""
    if l == 0:
        return np.zeros((1, 0), dtype=np.int32)
    prev = enumerate_sector(l - 1, J)
    blocks = []
    for j1 in range(1, J + 1):
        n_tail = multiset_count(j1, l - 1)
        tail = prev[:n_tail]
        head = np.full((n_tail, 1), j1, dtype=np.int32)
        blocks.append(np.hstack([head, tail]))
    return np.vstack(blocks)


def rank_array(tuples: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank` over rows of non-increasing tuples."""
    tuples = np.asarray(tuples, dtype=np.int64)
    n, l = tuples.shape
    out = np.zeros(n, dtype=np.int64)
    if l == 0:
        return out
    hi = int(tuples.max()) + l if n else l
    table = np.array(
        [[binom(c, k) for k in range(l + 1)] for c in range(hi + 1)], dtype=np.int64
    )
    for i in range(1, l + 1):
        c = tuples[:, i - 1] - 1 + l - i
        out += table[c, l - i + 1]
    return out


def creation_action(j: int, m: tuple[int, ...], L: int | None = None):
    """b~_j^dag on the normalized basis state |m>: returns (m', coefficient)."""
    validate(m)
    if L is not None and len(m) >= L:
        raise TruncationError(f"creating a photon in sector {len(m)} exceeds L={L}")
    mult = m.count(j)
    new = tuple(sorted(m + (j,), reverse=True))
    return new, math.sqrt(mult + 1)


def annihilation_action(j: int, m: tuple[int, ...]):
    """b~_j on |m>: returns (m', coefficient), or (None, 0.0) if bin j is empty."""
    validate(m)
    mult = m.count(j)
    if mult == 0:
        return None, 0.0
    lst = list(m)
    lst.remove(j)
    return tuple(lst), math.sqrt(mult)


def block_offset(j: int, l: int, k: int) -> int:
    """Start rank of tuples in sector ``l`` that are ``(j,)*k + h`` with max(h) < j.

    Inside that block the order of ``h`` matches the prefix of sector ``l-k``.
    """
    return sum(binom(j - 1 + l - i, l - i + 1) for i in range(1, k + 1))


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class BasisLayout:
    spec: SectorSpec
    dims: tuple[int, ...]  # multiset counts per sector
    sizes: tuple[int, ...]  # amplitudes per sector, (N_l + 1) * dims[l]
    offsets: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def memory_bytes(self) -> int:
        return BYTES_PER_AMPLITUDE * self.total


def layout(
    spec: SectorSpec,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    allow_over_budget: bool = False,
) -> BasisLayout:
    dims = tuple(multiset_count(spec.J, l) for l in range(spec.L + 1))
    sizes = tuple((n + 1) * d for n, d in zip(spec.kpo_cutoffs, dims))
    offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    lay = BasisLayout(spec, dims, sizes, offsets)
    if lay.memory_bytes > memory_budget:
        msg = (
            f"state needs {lay.memory_bytes / 1024**3:.2f} GiB per copy, "
            f"budget is {memory_budget / 1024**3:.2f} GiB"
        )
        if not allow_over_budget:
            raise MemoryBudgetError(msg)
        warnings.warn(msg, ResourceWarning, stacklevel=2)
    return lay
