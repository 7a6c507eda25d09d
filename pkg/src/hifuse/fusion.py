"""Alternating projections with an isotonic constraint (APAIC).

Condition-indicator columns ``Y`` (T x K) are fused into a health index by
alternating a ridge regression for the weights ``w`` with a projection of
``h = Y w`` onto the set of ideal health indices: non-positive over the
healthy prefix, at least one over the faulty suffix, nondecreasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from hifuse.dataset import LabelSpec
from hifuse.errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

# Membership in the ideal set only depends on T_d and (optionally) T_f.
IdealSpaceSpec = LabelSpec


@dataclass(frozen=True)
class FusionConfig:
    beta: float = 0.05
    iters: int = 1000
    tol: float = 1e-9  # 0 disables the early exit
    tau: int = 30
    isotonic: bool = True
    projection: str = "exact"  # or "sequential": clamp, then PAVA

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if self.tol < 0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")
        if self.projection not in PROJECTIONS:
            raise ConfigError(
                f"projection must be one of {sorted(PROJECTIONS)}, got {self.projection!r}"
            )


@dataclass
class FusionState:
    w: np.ndarray
    z_per_traj: list
    h_per_traj: list
    objective_trace: np.ndarray
    # objective after every half step: ridge, projection, ridge, projection, ...
    half_step_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_iter(self) -> int:
        return len(self.objective_trace) - 1


def pava(v) -> np.ndarray:
    """Isotonic (nondecreasing) least-squares fit by pooling adjacent violators."""
    v = np.asarray(v, dtype=float)
    if v.size <= 1:
        return v.copy()
    # Block stack as plain lists: scalar numpy indexing dominates otherwise.
    sums: list[float] = []
    counts: list[int] = []
    for x in v.tolist():
        s, c = x, 1
        while sums and sums[-1] * c > s * counts[-1]:
            s += sums.pop()
            c += counts.pop()
        sums.append(s)
        counts.append(c)
    return np.repeat(np.array(sums) / np.array(counts), counts)


def _clamp(z: np.ndarray, spec: IdealSpaceSpec) -> np.ndarray:
    td = min(spec.t_healthy, z.size)
    z[:td] = np.minimum(z[:td], 0.0)
    if spec.t_faulty is not None:
        z[spec.t_faulty - 1 :] = np.maximum(z[spec.t_faulty - 1 :], 1.0)
    return z


def project_ideal(h, spec: IdealSpaceSpec, isotonic: bool = True) -> np.ndarray:
    """Clamp the healthy prefix to <= 0 and the faulty suffix to >= 1, then PAVA.

    This is the clamp-then-pool order of the reference algorithm. It always
    lands in the ideal set but is not the Euclidean projection onto it; see
    :func:`project_ideal_exact`, which :func:`fit` uses by default.
    """
    z = _clamp(np.array(h, dtype=float), spec)
    return pava(z) if isotonic else z


def _bounds(T: int, spec: IdealSpaceSpec) -> tuple[np.ndarray, np.ndarray]:
    lower = np.full(T, -np.inf)
    upper = np.full(T, np.inf)
    upper[: min(spec.t_healthy, T)] = 0.0
    if spec.t_faulty is not None:
        lower[spec.t_faulty - 1 :] = 1.0
    return lower, upper


def bounded_pava(v, lower, upper) -> np.ndarray:
    """Nondecreasing least-squares fit subject to ``lower <= z <= upper``.

    Pool-adjacent-violators for separable convex losses: a block takes its
    mean clipped to the tightest bounds of its members.
    """
    v = np.asarray(v, dtype=float)
    sums: list[float] = []
    counts: list[int] = []
    los: list[float] = []
    his: list[float] = []
    vals: list[float] = []
    for x, lo, hi in zip(v.tolist(), np.asarray(lower, float).tolist(), np.asarray(upper, float).tolist()):
        s, c = x, 1
        val = lo if x < lo else (hi if x > hi else x)
        while vals and vals[-1] > val:
            vals.pop()
            s += sums.pop()
            c += counts.pop()
            plo = los.pop()
            phi = his.pop()
            if plo > lo:
                lo = plo
            if phi < hi:
                hi = phi
            if lo > hi:
                raise NumericalError("bounded isotonic problem is infeasible")
            m = s / c
            val = lo if m < lo else (hi if m > hi else m)
        sums.append(s)
        counts.append(c)
        los.append(lo)
        his.append(hi)
        vals.append(val)
    return np.repeat(vals, counts)


def project_ideal_exact(h, spec: IdealSpaceSpec, isotonic: bool = True) -> np.ndarray:
    """Euclidean projection onto the ideal set (bounded isotonic regression).

    With ``isotonic=False`` only the prefix/suffix bounds are enforced, for
    which clamping is already the exact projection.
    """
    h = np.asarray(h, dtype=float)
    if not isotonic:
        return _clamp(h.copy(), spec)
    lower, upper = _bounds(h.size, spec)
    return bounded_pava(h, lower, upper)


PROJECTIONS = {"exact": project_ideal_exact, "sequential": project_ideal}


def in_ideal_space(z, spec: IdealSpaceSpec, isotonic: bool = True) -> bool:
    z = np.asarray(z, dtype=float)
    td = min(spec.t_healthy, z.size)
    ok = bool(np.all(z[:td] <= 0.0))
    if spec.t_faulty is not None:
        ok &= bool(np.all(z[spec.t_faulty - 1 :] >= 1.0))
    if isotonic:
        ok &= bool(np.all(np.diff(z) >= 0.0))
    return ok


def _stack(Ys: Sequence[np.ndarray]) -> np.ndarray:
    if isinstance(Ys, np.ndarray) and Ys.ndim == 2:
        return Ys
    return np.concatenate([np.asarray(Y, dtype=float) for Y in Ys], axis=0)


def _stack_vec(zs) -> np.ndarray:
    if isinstance(zs, np.ndarray) and zs.ndim == 1:
        return zs
    return np.concatenate([np.asarray(z, dtype=float) for z in zs])


class _NormalSolver:
    """Cholesky factor of ``Y^T Y + beta I``, reused across iterations."""

    def __init__(self, Y: np.ndarray, beta: float):
        K = Y.shape[1]
        A = Y.T @ Y + beta * np.eye(K)
        if not np.all(np.isfinite(A)):
            raise NumericalError("embeddings contain non-finite values")
        try:
            self.factor = linalg.cho_factor(A, lower=True, check_finite=True)
        except linalg.LinAlgError:
            raise NumericalError(
                f"normal matrix is singular (beta={beta}); use beta > 0"
            ) from None
        if beta == 0:
            ev = np.linalg.eigvalsh(A)
            if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
                raise NumericalError("normal matrix is numerically singular at beta=0")
        self.Y = Y

    def solve(self, z: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.factor, self.Y.T @ z)


def ridge_step(Ys, zs, beta: float) -> np.ndarray:
    """``argmin_w ||Y w - z||^2 + beta ||w||^2`` over the stacked pairs."""
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    Y = _stack(Ys)
    z = _stack_vec(zs)
    if Y.shape[0] != z.shape[0]:
        raise ValueError(f"row mismatch: Y has {Y.shape[0]} rows, z has {z.shape[0]}")
    return _NormalSolver(Y, beta).solve(z)


def apaic_objective(w, zs, Ys, beta: float) -> float:
    w = np.asarray(w, dtype=float)
    total = sum(float(np.sum((np.asarray(Y) @ w - z) ** 2)) for Y, z in zip(Ys, zs))
    return total + beta * float(w @ w)


def fit(train, test=None, cfg: FusionConfig = FusionConfig()) -> FusionState:
    """Run APAIC jointly over training trajectories and an optional test prefix.

    ``train`` is a list of ``(Y, spec)`` with ``spec.t_faulty`` set; ``test`` is
    a single ``(Y, spec)`` with no faulty window. The weights are shared; each
    trajectory is projected onto its own ideal set. In the returned state the
    test trajectory, if any, comes last in ``z_per_traj``/``h_per_traj``.

    The weights start at all-ones and the first ``z`` is the projection of
    ``Y @ 1``, so every iteration is a (ridge, projection) pair.
    """
    pairs = list(train)
    if test is not None:
        if test[1].t_faulty is not None:
            raise ConfigError("test trajectories cannot declare a faulty window")
        pairs.append(test)
    if not pairs:
        raise ConfigError("fit needs at least one trajectory")
    Ys = [np.asarray(Y, dtype=float) for Y, _ in pairs]
    specs = [s for _, s in pairs]
    K = Ys[0].shape[1]
    if any(Y.ndim != 2 or Y.shape[1] != K for Y in Ys):
        raise ConfigError("all embeddings must share the same number of columns")
    for Y, s in zip(Ys, specs):
        s.validate(Y.shape[0])
    if cfg.beta == 0:
        log.warning("beta=0: APAIC without ridge regularization is initialization-sensitive")

    project = PROJECTIONS[cfg.projection]
    solver = _NormalSolver(_stack(Ys), cfg.beta)

    w = np.ones(K)
    hs = [Y @ w for Y in Ys]
    zs = [project(h, s, cfg.isotonic) for h, s in zip(hs, specs)]
    obj = apaic_objective(w, zs, Ys, cfg.beta)
    trace = [obj]
    half = [obj]
    for it in range(cfg.iters):
        w = solver.solve(_stack_vec(zs))
        half.append(apaic_objective(w, zs, Ys, cfg.beta))
        hs = [Y @ w for Y in Ys]
        zs = [project(h, s, cfg.isotonic) for h, s in zip(hs, specs)]
        new = apaic_objective(w, zs, Ys, cfg.beta)
        if not np.isfinite(new):
            raise NumericalError(f"non-finite APAIC objective at iteration {it + 1}")
        half.append(new)
        trace.append(new)
        if cfg.tol > 0 and obj - new < cfg.tol:
            break
        obj = new
    return FusionState(
        w=w,
        z_per_traj=zs,
        h_per_traj=hs,
        objective_trace=np.array(trace),
        half_step_trace=np.array(half),
    )


def realtime_windows(T: int, tau: int) -> list[int]:
    """Solve end points ``tau, 2 tau, ...``, with ``T`` appended if not already last."""
    if tau < 1:
        raise ConfigError(f"tau must be >= 1, got {tau}")
    if tau > T:
        raise ConfigError(f"tau={tau} exceeds the test length T={T}")
    ends = list(range(tau, T + 1, tau))
    if ends[-1] != T:
        ends.append(T)
    return ends


@dataclass
class RealtimeResult:
    z: np.ndarray
    h: np.ndarray
    window_ends: list
    final: FusionState


def fit_realtime(train, test, cfg: FusionConfig = FusionConfig()) -> RealtimeResult:
    """Re-solve on growing test prefixes and stitch the most recent ``tau`` steps.

    Each solve at end point ``t`` writes indices ``[t - tau, t)`` of the output;
    a shorter final remainder re-solves on the full trajectory and overwrites
    the overlap, so the last ``tau`` values always come from the offline solve.
    Every window restarts from ``w = 1``.
    """
    Y_test, spec = test
    Y_test = np.asarray(Y_test, dtype=float)
    T = Y_test.shape[0]
    ends = realtime_windows(T, cfg.tau)
    z = np.empty(T)
    h = np.empty(T)
    state = None
    for t in ends:
        state = fit(train, (Y_test[:t], spec.for_length(t)), cfg)
        lo = max(0, t - cfg.tau)
        z[lo:t] = state.z_per_traj[-1][lo:t]
        h[lo:t] = state.h_per_traj[-1][lo:t]
    return RealtimeResult(z=z, h=h, window_ends=ends, final=state)
