"""Pump amplitude shaping.

The real pump ``p(t)`` is the output of a cascade of first-order low-pass
filters, each obeying ``dp_out/dt = -B (p_out - p_in)``, fed by
``K * A_p * exp(-kappa_ex * t)``.  The counterdiabatic correction is an
imaginary pump amplitude ``p'(t)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SMALL_P = 1e-6


class ShortcutMode(str, Enum):
    NONE = "none"
    EQ12 = "eq12"  # p' = (pdot/p) tanh(p/K)
    REF15 = "ref15"  # p' = pdot sqrt(1 - 2 exp(-2p/K)) / (sqrt(Kp) + 2p)


@dataclass(frozen=True)
class PumpSample:
    t: float
    p: float
    p_dot: float
    p_prime: float = 0.0
    shortcut_mode: ShortcutMode = ShortcutMode.NONE

    @property
    def complex_amplitude(self) -> complex:
        return complex(self.p, self.p_prime)


def counterdiabatic(p: float, p_dot: float, K: float, mode: ShortcutMode | str) -> float:
    mode = ShortcutMode(mode)
    if mode is ShortcutMode.NONE:
        return 0.0
    if mode is ShortcutMode.EQ12:
        x = p / K
        if abs(x) < SMALL_P:
            # tanh(x)/x series
            return p_dot / K * (1.0 - x * x / 3.0)
        return p_dot / p * math.tanh(x)
    # REF15: the square root is imaginary for p < K ln(2)/2; the correction is
    # switched off there.
    if p <= 0.0:
        return 0.0
    radicand = 1.0 - 2.0 * math.exp(-2.0 * p / K)
    if radicand <= 0.0:
        return 0.0
    return p_dot * math.sqrt(radicand) / (math.sqrt(K * p) + 2.0 * p)


@dataclass
class LpfCascade:
    """Low-pass filter chain driven by ``K * A_p * exp(-kappa_ex * t)``.

    ``stages[-1]`` is the pump ``p(t)``.  Stages start at zero.
    """

    K: float
    A_p: float
    kappa_ex: float
    B: float
    order: int = 4
    t: float = 0.0
    stages: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("LPF order must be >= 1")
        if self.stages is None:
            self.stages = np.zeros(self.order)
        else:
            self.stages = np.asarray(self.stages, dtype=float).copy()

    def drive(self, t: float) -> float:
        return self.K * self.A_p * math.exp(-self.kappa_ex * t)

    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        inputs = np.empty_like(y)
        inputs[0] = self.drive(t)
        inputs[1:] = y[:-1]
        return -self.B * (y - inputs)

    def rk4_stages(self, dt: float):
        """Stage times, stage states and stage derivatives of one RK4 step.

        Returns ``(times, states, slopes)`` with four entries each, plus the
        state at ``t + dt``.  The dynamics integrator evaluates the
        Hamiltonian at exactly these stage states.
        """
        t, y = self.t, self.stages
        times = (t, t + dt / 2, t + dt / 2, t + dt)
        k1 = self.rhs(y, times[0])
        y2 = y + dt / 2 * k1
        k2 = self.rhs(y2, times[1])
        y3 = y + dt / 2 * k2
        k3 = self.rhs(y3, times[2])
        y4 = y + dt * k3
        k4 = self.rhs(y4, times[3])
        y_next = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return times, (y, y2, y3, y4), (k1, k2, k3, k4), y_next

    def advance(self, dt: float) -> "LpfCascade":
        if dt <= 0:
            raise ValueError("dt must be positive")
        *_, y_next = self.rk4_stages(dt)
        self.stages = y_next
        self.t += dt
        return self

    def sample(self, mode: ShortcutMode | str = ShortcutMode.NONE) -> PumpSample:
        return self.sample_at(self.t, self.stages, mode)

    def sample_at(self, t: float, y: np.ndarray, mode: ShortcutMode | str,
                  slope: np.ndarray | None = None) -> PumpSample:
        mode = ShortcutMode(mode)
        if slope is None:
            slope = self.rhs(y, t)
        p, p_dot = float(y[-1]), float(slope[-1])
        return PumpSample(t, p, p_dot, counterdiabatic(p, p_dot, self.K, mode), mode)

    def stage_samples(self, dt: float, mode: ShortcutMode | str):
        """PumpSamples at the four RK4 stages, and the advanced stage vector."""
        times, states, slopes, y_next = self.rk4_stages(dt)
        samples = [self.sample_at(t, y, mode, k) for t, y, k in zip(times, states, slopes)]
        return samples, y_next


@dataclass(frozen=True)
class LinearRamp:
    """p(t) rising linearly from 0 to ``p_final`` over ``duration``, then held."""

    K: float = 1.0
    p_final: float = 2.0
    duration: float = 10.0

    def sample_at(self, t: float, mode: ShortcutMode | str = ShortcutMode.NONE) -> PumpSample:
        mode = ShortcutMode(mode)
        rate = self.p_final / self.duration
        if t <= self.duration:
            p, p_dot = rate * t, rate
        else:
            p, p_dot = self.p_final, 0.0
        return PumpSample(t, p, p_dot, counterdiabatic(p, p_dot, self.K, mode), mode)


def write_schedule_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p", "p_dot", "p_prime"])
        for s in samples:
            w.writerow([repr(s.t), repr(s.p), repr(s.p_dot), repr(s.p_prime)])
