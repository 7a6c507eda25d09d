"""Run-to-failure trajectories, extreme-state labels and feature scaling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hifuse.errors import (
    DataError,
    EmptyFileError,
    MalformedHeaderError,
    NonFiniteValueError,
    NonMonotoneTimeError,
)

HEALTHY = 1
ABNORMAL = -1
UNLABELED = 0


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Trajectory:
    """One run-to-failure recording; row ``t`` of ``features`` is the sample at time ``t``."""

    id: str
    features: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError(f"{self.id}: features must be 2-D, got shape {x.shape}")
        if x.shape[0] < 2 or x.shape[1] < 1:
            raise DataError(f"{self.id}: need T >= 2 and F >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteValueError(f"{self.id}: features contain non-finite values")
        object.__setattr__(self, "features", _frozen(x))
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=float)
            if ts.shape != (x.shape[0],):
                raise DataError(f"{self.id}: timestamps length {ts.shape} != T={x.shape[0]}")
            if not np.all(np.isfinite(ts)):
                raise NonFiniteValueError(f"{self.id}: timestamps contain non-finite values")
            if np.any(np.diff(ts) <= 0):
                raise NonMonotoneTimeError(f"{self.id}: timestamps are not strictly increasing")
            object.__setattr__(self, "timestamps", _frozen(ts))

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def F(self) -> int:
        return self.features.shape[1]

    @property
    def times(self) -> np.ndarray:
        """Timestamps, or the row index when none were recorded."""
        if self.timestamps is None:
            return np.arange(self.T, dtype=float)
        return self.timestamps

    def head(self, t: int) -> "Trajectory":
        """The first ``t`` samples."""
        ts = None if self.timestamps is None else self.timestamps[:t]
        return Trajectory(self.id, self.features[:t], ts)

    def with_features(self, features: np.ndarray) -> "Trajectory":
        return Trajectory(self.id, features, self.timestamps)


@dataclass(frozen=True)
class LabelSpec:
    """Thresholds ``T_d`` / ``T_f`` on the 1-based time index.

    Samples with ``t <= t_healthy`` are healthy, samples with ``t >= t_faulty``
    are abnormal. ``t_faulty=None`` means no abnormal window (test trajectories).
    """

    t_healthy: int
    t_faulty: Optional[int] = None

    def validate(self, T: int) -> None:
        if self.t_healthy <= 0:
            raise DataError(f"t_healthy must be > 0, got {self.t_healthy}")
        if self.t_faulty is None:
            if self.t_healthy > T:
                raise DataError(f"t_healthy={self.t_healthy} exceeds T={T}")
            return
        if self.t_healthy >= self.t_faulty:
            raise DataError(
                f"t_healthy={self.t_healthy} must be < t_faulty={self.t_faulty}"
            )
        if self.t_faulty > T:
            raise DataError(f"t_faulty={self.t_faulty} exceeds T={T}")

    def for_length(self, T: int) -> "LabelSpec":
        """Restrict to a trajectory prefix of length ``T`` (drops the faulty window)."""
        return LabelSpec(min(self.t_healthy, T), None)


@dataclass(frozen=True)
class DatasetSplit:
    train: list = field(default_factory=list)  # list[tuple[Trajectory, LabelSpec]]
    test: Optional[tuple] = None  # tuple[Trajectory, LabelSpec]

    def __post_init__(self):
        if self.test is not None and self.test[1].t_faulty is not None:
            raise DataError("the test trajectory cannot declare a faulty window")


def assign_labels(traj_or_T, spec: LabelSpec) -> np.ndarray:
    """Per-sample labels: +1 healthy, -1 abnormal, 0 unlabeled."""
    T = traj_or_T.T if isinstance(traj_or_T, Trajectory) else int(traj_or_T)
    spec.validate(T)
    labels = np.zeros(T, dtype=int)
    labels[: spec.t_healthy] = HEALTHY
    if spec.t_faulty is not None:
        labels[spec.t_faulty - 1 :] = ABNORMAL
    return labels


def label_counts(labels: np.ndarray) -> tuple[int, int]:
    """``(N_l, N_u)``."""
    n_u = int(np.sum(labels == UNLABELED))
    return len(labels) - n_u, n_u


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "std", _frozen(self.std))

    @property
    def degenerate(self) -> np.ndarray:
        return self.std == 0.0

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        safe = np.where(self.degenerate, 1.0, self.std)
        out = (x - self.mean) / safe
        out[..., self.degenerate] = 0.0
        return out

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def fit_scaler(arrays: Sequence[np.ndarray]) -> ScalerParams:
    """Per-feature mean and population std over the stacked rows of ``arrays``."""
    stacked = np.concatenate([np.asarray(a, dtype=float) for a in arrays], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    # Float noise on constant columns is not real variance.
    std[std <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
    return ScalerParams(mean, std)


def standardize(trajs: Sequence[Trajectory], fit_on: Optional[Sequence[np.ndarray]] = None):
    """Zero-mean, unit-variance scaling.

    The scaler is fit on ``fit_on`` when given (e.g. training trajectories plus
    a test healthy prefix), otherwise on all of ``trajs``.
    """
    if not trajs:
        raise DataError("standardize needs at least one trajectory")
    params = fit_scaler(fit_on if fit_on is not None else [t.features for t in trajs])
    return [t.with_features(params.transform(t.features)) for t in trajs], params


# --- file formats -----------------------------------------------------------


def _parse_float(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"{where}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise NonFiniteValueError(f"{where}: non-finite value {tok!r}")
    return v


def _read_feature_csv(path: Path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [c.strip() for c in rows[0]]
    expected = ["t"] + [f"f{j}" for j in range(len(header) - 1)]
    if len(header) < 2 or header != expected:
        raise MalformedHeaderError(
            f"{path}: header must be 't,f0,...,f{{F-1}}', got {','.join(header)!r}"
        )
    if len(rows) == 1:
        raise EmptyFileError(f"{path}: header only, no data rows")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} columns, got {len(row)}")
        for j, tok in enumerate(row):
            data[i - 2, j] = _parse_float(tok.strip(), f"{path}:{i}")
    t = data[:, 0]
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise NonMonotoneTimeError(
            f"{path}:{bad[0] + 3}: t={t[bad[0] + 1]!r} does not increase past {t[bad[0]]!r}"
        )
    return Trajectory(path.stem, data[:, 1:], t)


def load_raw_signal(path) -> tuple[np.ndarray, int]:
    """One channel file: ``sample_rate_hz=<int>`` header, then one sample per line."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise EmptyFileError(f"{path}: file is empty")
    key, _, val = lines[0].partition("=")
    if key.strip() != "sample_rate_hz" or not val.strip().isdigit():
        raise MalformedHeaderError(f"{path}: first line must be 'sample_rate_hz=<int>'")
    sr = int(val)
    if sr <= 0:
        raise MalformedHeaderError(f"{path}: sample rate must be positive")
    if len(lines) == 1:
        raise EmptyFileError(f"{path}: no samples")
    x = np.array([_parse_float(s, f"{path}:{i}") for i, s in enumerate(lines[1:], start=2)])
    return x, sr


def channel_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise EmptyFileError(f"{path}: no channel files")
        return files
    return [path]


def load_raw_channels(path) -> tuple[list[np.ndarray], int]:
    signals, rates = [], set()
    for f in channel_files(path):
        x, sr = load_raw_signal(f)
        signals.append(x)
        rates.add(sr)
    if len(rates) != 1:
        raise DataError(f"{path}: channels disagree on sample rate: {sorted(rates)}")
    lengths = {len(s) for s in signals}
    if len(lengths) != 1:
        raise DataError(f"{path}: channels have different lengths: {sorted(lengths)}")
    return signals, rates.pop()


def load_trajectory(path, format: str = "feature-csv") -> Trajectory:
    """Load a trajectory from a feature CSV or from raw channel file(s).

    For ``raw-signal`` the path is one channel file or a directory of them;
    rows are samples, columns channels, timestamps in seconds.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    if format == "feature-csv":
        return _read_feature_csv(path)
    if format == "raw-signal":
        signals, sr = load_raw_channels(path)
        x = np.stack(signals, axis=1)
        return Trajectory(path.stem, x, np.arange(x.shape[0]) / sr)
    raise DataError(f"unknown trajectory format {format!r}")


def write_feature_csv(traj: Trajectory, path) -> None:
    F = traj.F
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"f{j}" for j in range(F)])
        for t, row in zip(traj.times, traj.features):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class HealthIndex:
    """A health-index series with provenance.

    ``z`` is the reported index; ``h_raw`` the unprojected fusion output
    (identical to ``z`` for score-only methods).
    """

    id: str
    times: np.ndarray
    h_raw: np.ndarray
    z: np.ndarray
    method: str = ""
    windows: tuple = ()

    def __post_init__(self):
        for name in ("times", "h_raw", "z"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (self.times.shape == self.h_raw.shape == self.z.shape):
            raise DataError(f"{self.id}: times, h_raw and z must have equal length")


def write_hi_csv(hi: HealthIndex, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "h_raw", "z_hi"])
        for t, h, z in zip(hi.times, hi.h_raw, hi.z):
            w.writerow([repr(float(t)), repr(float(h)), repr(float(z))])


def _read_columns(path, required: Sequence[str]) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [c.strip() for c in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise MalformedHeaderError(f"{path}: missing column(s) {missing}; header is {header}")
    if len(rows) == 1:
        raise EmptyFileError(f"{path}: header only, no data rows")
    cols = {c: [] for c in header}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} columns, got {len(row)}")
        for c, tok in zip(header, row):
            cols[c].append(_parse_float(tok.strip(), f"{path}:{i}"))
    return {c: np.array(v) for c, v in cols.items()}


def read_hi_csv(path, method: str = "") -> HealthIndex:
    cols = _read_columns(path, ("t", "h_raw", "z_hi"))
    stem = Path(path).stem
    uid = stem[: -len("_hi")] if stem.endswith("_hi") else stem
    return HealthIndex(uid, cols["t"], cols["h_raw"], cols["z_hi"], method)


def write_truth_csv(times, h, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "h"])
        for t, v in zip(times, h):
            w.writerow([repr(float(t)), repr(float(v))])


def read_truth_csv(path) -> np.ndarray:
    return _read_columns(path, ("t", "h"))["h"]
