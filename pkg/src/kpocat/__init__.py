"""Traveling cat states released from a Kerr parametric oscillator into a
binned output line: coupled-state dynamics, pulse-mode tomography and cat
fitting."""

from .basis import MemoryBudgetError, SectorSpec
from .dynamics import CoupledState, RunObservables, SystemParams, run_simulation
from .fock import CatFit, DensityMatrix, FockVector, cat_state, coherent_state, fit_cat, wigner
from .pump import LpfCascade, ShortcutMode

__version__ = "0.1.0"

__all__ = [
    "CatFit",
    "CoupledState",
    "DensityMatrix",
    "FockVector",
    "LpfCascade",
    "MemoryBudgetError",
    "RunObservables",
    "SectorSpec",
    "ShortcutMode",
    "SystemParams",
    "cat_state",
    "coherent_state",
    "fit_cat",
    "run_simulation",
    "wigner",
]
