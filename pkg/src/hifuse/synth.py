"""Synthetic run-to-failure fleets with known health indices.

Wear follows three phases: a convex incipient rise, a shallow linear
steady-state segment, then a steep convex deterioration. A few features are
noisy monotone images of the health index; the rest are noise or periodic
confounders that a monotone index has to ignore.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from hifuse.dataset import Trajectory
from hifuse.errors import ConfigError

# Rise accumulated in the incipient and steady phases; deterioration takes the rest.
INCIPIENT_RISE = 0.15
STEADY_RISE = 0.20


@dataclass(frozen=True)
class SynthConfig:
    T: int = 300
    F: int = 20
    n_informative: int = 5
    phase_breaks: Optional[tuple] = None  # default (0.2 T, 0.8 T)
    noise_sigma: float = 0.1
    seed: int = 0
    identity_distortion: bool = False

    def __post_init__(self):
        if self.T < 3:
            raise ConfigError(f"T must be >= 3, got {self.T}")
        if not 1 <= self.n_informative <= self.F:
            raise ConfigError(f"need 1 <= n_informative <= F, got {self.n_informative}, {self.F}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.phase_breaks is not None:
            object.__setattr__(self, "phase_breaks", tuple(self.phase_breaks))
        self.breaks_for(self.T)

    def breaks_for(self, T: int) -> tuple[int, int]:
        if self.phase_breaks is None:
            t1, t2 = round(0.2 * T), round(0.8 * T)
        else:
            t1, t2 = (round(b * T / self.T) for b in self.phase_breaks)
        if not 0 < t1 < t2 < T - 1:
            raise ConfigError(f"phase breaks must satisfy 0 < t1 < t2 < T-1, got ({t1}, {t2}) for T={T}")
        return t1, t2


def three_phase_hi(T: int, t1: int, t2: int) -> np.ndarray:
    """Nondecreasing wear curve from 0 at ``t=0`` to 1 at ``t=T-1``."""
    t = np.arange(T, dtype=float)
    last = T - 1
    h = np.empty(T)
    p1 = t <= t1
    h[p1] = INCIPIENT_RISE * (t[p1] / t1) ** 2
    p2 = (t > t1) & (t <= t2)
    h[p2] = INCIPIENT_RISE + STEADY_RISE * (t[p2] - t1) / (t2 - t1)
    p3 = t > t2
    h[p3] = INCIPIENT_RISE + STEADY_RISE + (1 - INCIPIENT_RISE - STEADY_RISE) * ((t[p3] - t2) / (last - t2)) ** 2
    h[-1] = 1.0
    return h


@dataclass(frozen=True)
class _Semantics:
    """Feature meaning shared by every unit of a fleet."""

    gain: np.ndarray  # linear weight on the HI
    bend: np.ndarray  # weight on the distorted HI
    power: np.ndarray  # distortion exponent
    kind: np.ndarray  # 0 informative, 1 noise, 2 periodic confounder
    period: np.ndarray
    phase: np.ndarray
    amp: np.ndarray


def _semantics(cfg: SynthConfig, rng: np.random.Generator) -> _Semantics:
    F, k = cfg.F, cfg.n_informative
    kind = np.ones(F, dtype=int)
    kind[:k] = 0
    kind[k:][1::2] = 2
    power = rng.uniform(0.5, 2.5, F)
    if cfg.identity_distortion:
        power[:] = 1.0
    return _Semantics(
        gain=rng.uniform(0.5, 2.0, F),
        bend=rng.uniform(0.0, 1.5, F),
        power=power,
        kind=kind,
        period=rng.uniform(cfg.T / 12, cfg.T / 4, F),
        phase=rng.uniform(0, 2 * np.pi, F),
        amp=rng.uniform(0.5, 1.5, F),
    )


def _render(sem: _Semantics, hi: np.ndarray, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    T, F = hi.size, sem.kind.size
    t = np.arange(T, dtype=float)
    X = np.empty((T, F))
    noise = rng.standard_normal((T, F))
    for j in range(F):
        if sem.kind[j] == 0:
            X[:, j] = sem.gain[j] * hi + sem.bend[j] * hi ** sem.power[j] + noise_sigma * noise[:, j]
        elif sem.kind[j] == 1:
            X[:, j] = sem.amp[j] * noise[:, j]
        else:
            X[:, j] = sem.amp[j] * np.sin(2 * np.pi * t / sem.period[j] + sem.phase[j]) + 0.1 * noise[:, j]
    return X


def generate(cfg: SynthConfig, unit_id: str = "unit_0"):
    """One trajectory and its ground-truth health index."""
    sem = _semantics(cfg, np.random.default_rng(cfg.seed))
    t1, t2 = cfg.breaks_for(cfg.T)
    hi = three_phase_hi(cfg.T, t1, t2)
    X = _render(sem, hi, cfg.noise_sigma, np.random.default_rng([cfg.seed, 0]))
    return Trajectory(unit_id, X), hi


def generate_fleet(cfg: SynthConfig, n: int = 3, lifetime_jitter: float = 0.1):
    """``n`` units with lifetimes in ``T * (1 +- lifetime_jitter)`` and shared feature semantics."""
    if n < 1:
        raise ConfigError("fleet size must be >= 1")
    if not 0 <= lifetime_jitter < 1:
        raise ConfigError("lifetime_jitter must be in [0, 1)")
    rng = np.random.default_rng(cfg.seed)
    sem = _semantics(cfg, rng)
    fleet = []
    for i in range(n):
        urng = np.random.default_rng([cfg.seed, i])
        T = max(3, round(cfg.T * (1 + lifetime_jitter * urng.uniform(-1, 1))))
        t1, t2 = cfg.breaks_for(T)
        hi = three_phase_hi(T, t1, t2)
        X = _render(sem, hi, cfg.noise_sigma, urng)
        fleet.append((Trajectory(f"unit_{i}", X), hi))
    return fleet
