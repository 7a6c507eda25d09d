import numpy as np
import pytest

from hifuse import features as fx
from hifuse.errors import ConfigError, DataError
from oracles import dft_power, triangle_filters


@pytest.fixture
def cfg():
    return fx.MelConfig(sample_rate_hz=8000)


def test_config_defaults_and_lengths(cfg):
    assert (cfg.n_mels, cfg.window_s, cfg.hop_s) == (64, 0.1, 0.1)
    assert cfg.win_length == 800 and cfg.hop_length == 800


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sample_rate_hz=0),
        dict(sample_rate_hz=8000, n_mels=0),
        dict(sample_rate_hz=8000, hop_s=0.2),
        dict(sample_rate_hz=1000, n_mels=64),  # 100-sample window < 128
    ],
)
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        fx.MelConfig(**kwargs)


def test_filterbank_matches_pointwise_oracle():
    fb = fx.mel_filterbank(16, 256, 4000)
    np.testing.assert_allclose(fb, triangle_filters(16, 256, 4000), atol=1e-15)


def test_filterbank_unit_area():
    sr, n_fft = 16000, 4096
    fb = fx.mel_filterbank(20, n_fft, sr)
    area = fb.sum(axis=1) * sr / n_fft
    np.testing.assert_allclose(area, 1.0, rtol=0.02)


def test_power_frames_match_dft(cfg):
    rng = np.random.default_rng(0)
    x = rng.normal(size=2 * cfg.win_length)
    P = fx.power_frames(x, cfg)
    win = np.hanning(cfg.win_length + 1)[:-1]
    for i in range(P.shape[0]):
        frame = x[i * cfg.hop_length : i * cfg.hop_length + cfg.win_length]
        np.testing.assert_allclose(P[i], dft_power(frame * win), rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("k", [0, 5, 17, 31, 48, 63])
def test_sine_lands_in_its_band(cfg, k):
    centers = fx.mel_band_edges(cfg.n_mels, cfg.sample_rate_hz)[1:-1]
    t = np.arange(3 * cfg.win_length) / cfg.sample_rate_hz
    M = fx.mel_spectrogram(np.sin(2 * np.pi * centers[k] * t), cfg)
    assert np.all(M.argmax(axis=1) == k)
    # same answer from the explicit DFT and the pointwise filterbank
    win = np.hanning(cfg.win_length + 1)[:-1]
    P = dft_power(np.sin(2 * np.pi * centers[k] * t[: cfg.win_length]) * win)
    assert int(np.argmax(triangle_filters(cfg.n_mels, cfg.win_length, cfg.sample_rate_hz) @ P)) == k


def test_zero_signal_is_log_floor(cfg):
    M = fx.mel_spectrogram(np.zeros(2 * cfg.win_length), cfg)
    np.testing.assert_array_equal(M, np.log(fx.EPS_MEL))


@pytest.mark.parametrize("n, frames", [(800, 1), (1599, 1), (1600, 2), (4000, 5)])
def test_frame_count(cfg, n, frames):
    assert fx.mel_spectrogram(np.ones(n), cfg).shape == (frames, 64)


def test_overlapping_frames():
    cfg = fx.MelConfig(sample_rate_hz=8000, window_s=0.1, hop_s=0.05)
    assert fx.mel_spectrogram(np.ones(2000), cfg).shape[0] == (2000 - 800) // 400 + 1


def test_short_or_bad_signal(cfg):
    with pytest.raises(DataError):
        fx.mel_spectrogram(np.ones(799), cfg)
    x = np.ones(900)
    x[3] = np.nan
    with pytest.raises(DataError):
        fx.mel_spectrogram(x, cfg)


def test_output_finite_and_bounded_below(cfg):
    x = np.random.default_rng(1).normal(scale=50, size=5000)
    M = fx.mel_spectrogram(x, cfg)
    assert np.all(np.isfinite(M)) and np.all(M >= np.log(fx.EPS_MEL))


def test_filterbank_energy_below_spectral_energy(cfg):
    x = np.random.default_rng(2).normal(size=8000)
    P = fx.power_frames(x, cfg)
    fb = fx.mel_filterbank(cfg.n_mels, cfg.win_length, cfg.sample_rate_hz)
    assert np.all((P @ fb.T).sum(axis=1) <= P.sum(axis=1) + 1e-9)


def test_fuse_channels():
    one = np.random.default_rng(0).normal(size=(10, 64))
    np.testing.assert_array_equal(fx.fuse_channels([one]), one)
    assert fx.fuse_channels([one] * 7).shape == (10, 448)
    with pytest.raises(DataError):
        fx.fuse_channels([one, np.zeros((11, 64))])


def test_aggregate_pass():
    frames = np.full((6, 3), 2.5)
    np.testing.assert_array_equal(fx.aggregate_pass(frames, [(0, 2), (2, 6)]), np.full((2, 3), 2.5))
    x = np.random.default_rng(0).normal(size=(9, 4))
    np.testing.assert_allclose(fx.aggregate_pass(x, [(0, 9)])[0], x.mean(axis=0))
    np.testing.assert_array_equal(fx.aggregate_pass(x, [(4, 5)])[0], x[4])
    passes = [(i, i + 1) for i in range(315)]
    assert fx.aggregate_pass(np.zeros((315, 2)), passes).shape == (315, 2)


@pytest.mark.parametrize("bounds", [[(2, 2)], [(0, 3), (2, 4)], [(0, 10)], [], [(3, 5), (0, 2)]])
def test_aggregate_pass_rejects(bounds):
    with pytest.raises(DataError):
        fx.aggregate_pass(np.zeros((6, 2)), bounds)


def test_extract_multichannel(cfg):
    rng = np.random.default_rng(3)
    sigs = [rng.normal(size=4000) for _ in range(2)]
    X = fx.extract(sigs, cfg, [(0, 2), (2, 5)])
    assert X.shape == (2, 128)
