"""Log-mel spectrogram features and per-pass aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hifuse.errors import ConfigError, DataError

EPS_MEL = 1e-10


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int
    n_mels: int = 64
    window_s: float = 0.1
    hop_s: float = 0.1

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not 0 < self.hop_s <= self.window_s:
            raise ConfigError("need 0 < hop_s <= window_s")
        if self.hop_length < 1:
            raise ConfigError("hop is shorter than one sample")
        if self.win_length < 2 * self.n_mels:
            raise ConfigError(
                f"window of {self.win_length} samples is shorter than 2 * n_mels = {2 * self.n_mels}"
            )

    @property
    def win_length(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_s * self.sample_rate_hz))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, float) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, sample_rate_hz: float) -> np.ndarray:
    """``n_mels + 2`` frequencies in Hz, equally spaced in mel from 0 to Nyquist."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: float) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1), each scaled to unit area in Hz."""
    edges = mel_band_edges(n_mels, sample_rate_hz)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate_hz)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (hi - lo))


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = (x.size - win) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n]


def power_frames(signal, cfg: MelConfig) -> np.ndarray:
    """Power spectrum ``|rfft(hann * frame)|^2`` of every frame."""
    x = np.asarray(signal, float)
    win = cfg.win_length
    if x.ndim != 1:
        raise DataError("signal must be one-dimensional")
    if x.size < win:
        raise DataError(f"signal of {x.size} samples is shorter than one window ({win})")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite samples")
    frames = frame_signal(x, win, cfg.hop_length)
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    return np.abs(np.fft.rfft(frames * window, axis=1)) ** 2


def mel_spectrogram(signal, cfg: MelConfig) -> np.ndarray:
    """Log mel energies, shape (frames, n_mels)."""
    P = power_frames(signal, cfg)
    fb = mel_filterbank(cfg.n_mels, cfg.win_length, cfg.sample_rate_hz)
    return np.log(EPS_MEL + P @ fb.T)


def fuse_channels(per_channel: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-channel spectrograms along the feature axis."""
    if not per_channel:
        raise DataError("no channels to fuse")
    counts = {np.asarray(m).shape[0] for m in per_channel}
    if len(counts) != 1:
        raise DataError(f"channels have different frame counts: {sorted(counts)}")
    return np.concatenate([np.asarray(m, float) for m in per_channel], axis=1)


def aggregate_pass(frames: np.ndarray, boundaries) -> np.ndarray:
    """Mean frame over each half-open ``(start, stop)`` range."""
    frames = np.asarray(frames, float)
    rows = []
    prev_stop = 0
    for start, stop in boundaries:
        start, stop = int(start), int(stop)
        if stop <= start:
            raise DataError(f"empty pass range ({start}, {stop})")
        if start < prev_stop:
            raise DataError(f"pass range ({start}, {stop}) overlaps or is out of order")
        if start < 0 or stop > frames.shape[0]:
            raise DataError(f"pass range ({start}, {stop}) outside 0..{frames.shape[0]}")
        rows.append(frames[start:stop].mean(axis=0))
        prev_stop = stop
    if not rows:
        raise DataError("no pass ranges given")
    return np.vstack(rows)


def extract(signals: Sequence[np.ndarray], cfg: MelConfig, boundaries=None) -> np.ndarray:
    """Per-channel log-mel features, fused, optionally averaged per pass."""
    frames = fuse_channels([mel_spectrogram(s, cfg) for s in signals])
    return frames if boundaries is None else aggregate_pass(frames, boundaries)
