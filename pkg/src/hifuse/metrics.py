"""Health-index quality criteria.

Ground-truth metrics (cosine correlation, RMSE after a shared affine
alignment), label-free criteria (Mann-Kendall monotonicity, trendability,
prognosability) and alarm metrics (delay, RSSE against a ramp).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from hifuse.errors import DataError


def correlation(h_hat, h) -> float:
    """Uncentered cosine similarity."""
    a = np.asarray(h_hat, float)
    b = np.asarray(h, float)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("correlation is undefined for a zero-norm series")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class AffineMap:
    scale: float
    offset: float

    def __call__(self, h):
        return np.asarray(h, float) * self.scale + self.offset


def affine_map(h_hats, hs, window=(100, 150)) -> AffineMap:
    """One map for all units: matches the window mean and the fleet-wide maximum."""
    lo, hi = window
    if len(h_hats) != len(hs) or not h_hats:
        raise DataError("need matching, non-empty lists of estimates and truths")
    for a, b in zip(h_hats, hs):
        if min(len(a), len(b)) < hi or lo < 0 or lo >= hi:
            raise DataError(f"alignment window {window} not covered by every trajectory")
    m1 = float(np.mean(np.concatenate([np.asarray(a, float)[lo:hi] for a in h_hats])))
    m2 = float(np.mean(np.concatenate([np.asarray(b, float)[lo:hi] for b in hs])))
    M1 = max(float(np.max(a)) for a in h_hats)
    M2 = max(float(np.max(b)) for b in hs)
    if M1 == m1:
        raise DataError("degenerate alignment: estimated maximum equals the window mean")
    scale = (M2 - m2) / (M1 - m1)
    return AffineMap(scale, m2 - m1 * scale)


def affine_align(h_hats, hs, window=(100, 150)) -> list[np.ndarray]:
    f = affine_map(h_hats, hs, window)
    return [f(a) for a in h_hats]


def adjusted_rmse(h_hat_aligned, h) -> float:
    """Euclidean norm of the residual (not divided by sqrt(T))."""
    a = np.asarray(h_hat_aligned, float)
    b = np.asarray(h, float)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def mk_monotonicity(h) -> float:
    """Lag-weighted Mann-Kendall index in [-1, 1]."""
    h = np.asarray(h, float)
    T = h.size
    if T < 2:
        raise DataError("monotonicity needs at least two samples")
    num = 0.0
    for lag in range(1, T):
        num += lag * float(np.sum(np.sign(h[lag:] - h[:-lag])))
    den = sum(lag * (T - lag) for lag in range(1, T))
    return num / den


def _resample(h: np.ndarray, n: int) -> np.ndarray:
    if h.size == n:
        return h
    return np.interp(np.linspace(0, 1, n), np.linspace(0, 1, h.size), h)


def trendability(hs) -> float:
    """Smallest pairwise cosine correlation; unequal lengths are resampled on life fraction."""
    hs = [np.asarray(h, float) for h in hs]
    if not hs:
        raise DataError("trendability needs at least one trajectory")
    n = max(h.size for h in hs)
    hs = [_resample(h, n) for h in hs]
    return min(correlation(a, b) for a in hs for b in hs)


def prognosis_time(h, h_ref_final: float) -> int:
    """First index where ``h`` reaches ``h_ref_final``."""
    hit = np.flatnonzero(np.asarray(h, float) >= h_ref_final)
    if hit.size == 0:
        raise DataError(f"health index never reaches {h_ref_final:.6g}")
    return int(hit[0])


def prognosability(hs, reference: Optional[int] = None) -> float:
    """``exp(-std(h_tP) / mean|h_tP - h_0|)`` with ``t_P`` set by the reference unit.

    The reference is the least-worn unit; by default the one whose index ends lowest.
    """
    hs = [np.asarray(h, float) for h in hs]
    if reference is None:
        reference = int(np.argmin([h[-1] for h in hs]))
    target = hs[reference][-1]
    at_tp = np.array([h[prognosis_time(h, target)] for h in hs])
    rng = np.array([abs(v - h[0]) for v, h in zip(at_tp, hs)])
    spread = float(np.std(at_tp))
    if spread == 0.0:
        return 1.0
    denom = float(np.mean(rng))
    if denom == 0.0:
        raise DataError("prognosability undefined: no range between start and prognosis time")
    return float(np.exp(-spread / denom))


def delay(h, fault_onset: int, threshold: float = 1.0, times=None) -> Optional[float]:
    """Time from ``fault_onset`` (an index) to the first sample at or above ``threshold``.

    Returns ``None`` when the alarm never fires.
    """
    h = np.asarray(h, float)
    t = np.arange(h.size, dtype=float) if times is None else np.asarray(times, float)
    hit = np.flatnonzero(h >= threshold)
    if hit.size == 0:
        return None
    return float(t[hit[0]] - t[fault_onset])


def ramp_truth(T: int, onset: int) -> np.ndarray:
    """Reference index ``min(t / onset, 1)`` for ``t = 1..T``."""
    if onset < 1:
        raise DataError("onset must be >= 1")
    return np.minimum(np.arange(1, T + 1, dtype=float) / onset, 1.0)


def rsse(h, truth) -> float:
    """Root sum of squared errors after capping ``h`` at 1."""
    a = np.minimum(np.asarray(h, float), 1.0)
    b = np.asarray(truth, float)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass
class MetricsReport:
    ids: list
    mk_monotonicity: list
    trendability: float
    prognosability: Optional[float]
    correlation: Optional[list] = None
    adjusted_rmse: Optional[list] = None
    delay: Optional[list] = None
    rsse: Optional[list] = None
    notes: list = field(default_factory=list)

    COLUMNS = ("id", "adjusted_rmse", "correlation", "mk_monotonicity", "trendability", "prognosability", "delay", "rsse")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows(self):
        for i, uid in enumerate(self.ids):
            pick = lambda v: "" if v is None or v[i] is None else repr(float(v[i]))
            yield {
                "id": uid,
                "adjusted_rmse": pick(self.adjusted_rmse),
                "correlation": pick(self.correlation),
                "mk_monotonicity": repr(float(self.mk_monotonicity[i])),
                "trendability": repr(float(self.trendability)),
                "prognosability": "" if self.prognosability is None else repr(float(self.prognosability)),
                "delay": pick(self.delay),
                "rsse": pick(self.rsse),
            }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())


def evaluate(
    hs: Sequence,
    ids: Sequence[str],
    truths: Optional[Sequence] = None,
    align_window=(100, 150),
    fault_onsets: Optional[Sequence[int]] = None,
    threshold: float = 1.0,
    reference: Optional[int] = None,
) -> MetricsReport:
    hs = [np.asarray(h, float) for h in hs]
    notes = []
    try:
        prog = prognosability(hs, reference)
    except DataError as e:
        prog = None
        notes.append(f"prognosability: {e}")
    report = MetricsReport(
        ids=list(ids),
        mk_monotonicity=[mk_monotonicity(h) for h in hs],
        trendability=trendability(hs),
        prognosability=prog,
        notes=notes,
    )
    if truths is not None:
        truths = [np.asarray(t, float) for t in truths]
        report.correlation = [correlation(h, t) for h, t in zip(hs, truths)]
        aligned = affine_align(hs, truths, align_window)
        report.adjusted_rmse = [adjusted_rmse(a, t) for a, t in zip(aligned, truths)]
    if fault_onsets is not None:
        report.delay = [delay(h, k, threshold) for h, k in zip(hs, fault_onsets)]
        report.rsse = [rsse(h, ramp_truth(h.size, k + 1)) for h, k in zip(hs, fault_onsets)]
    return report
