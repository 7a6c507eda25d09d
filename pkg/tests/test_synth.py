import numpy as np
import pytest

from hifuse import synth
from hifuse.dataset import LabelSpec
from hifuse.errors import ConfigError
from hifuse.fusion import fit
from hifuse.metrics import correlation, mk_monotonicity


def test_clean_affine_features():
    cfg = synth.SynthConfig(T=120, F=6, n_informative=6, noise_sigma=0.0, identity_distortion=True)
    traj, hi = synth.generate(cfg)
    for j in range(traj.F):
        assert correlation(traj.features[:, j], hi) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_ground_truth_shape(seed):
    _, hi = synth.generate(synth.SynthConfig(T=150, seed=seed))
    assert hi[0] == 0.0 and hi[-1] == 1.0
    assert np.all(np.diff(hi) > 0)
    assert mk_monotonicity(hi) == 1.0


def test_three_phases():
    hi = synth.three_phase_hi(100, 20, 80)
    assert hi[20] == pytest.approx(synth.INCIPIENT_RISE)
    assert hi[80] == pytest.approx(synth.INCIPIENT_RISE + synth.STEADY_RISE)
    steady = np.diff(hi[21:80])
    np.testing.assert_allclose(steady, steady[0])
    # deterioration is steeper than the steady phase
    assert np.diff(hi[80:]).min() >= 0 and np.diff(hi[80:]).max() > 5 * steady[0]


def test_deterministic():
    cfg = synth.SynthConfig(seed=3)
    (a, ha), (b, hb) = synth.generate(cfg), synth.generate(cfg)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(ha, hb)
    c, _ = synth.generate(synth.SynthConfig(seed=4))
    assert not np.array_equal(a.features, c.features)


def test_fleet_layout():
    cfg = synth.SynthConfig(T=300, seed=1)
    fleet = synth.generate_fleet(cfg, n=4, lifetime_jitter=0.1)
    assert [t.id for t, _ in fleet] == ["unit_0", "unit_1", "unit_2", "unit_3"]
    lengths = [t.T for t, _ in fleet]
    assert all(270 <= T <= 330 for T in lengths)
    assert len(set(lengths)) > 1
    assert all(t.F == 20 and h.size == t.T for t, h in fleet)
    assert synth.generate_fleet(cfg, 4)[2][0].features.tobytes() == fleet[2][0].features.tobytes()


def test_fleet_no_jitter_same_length_different_noise():
    fleet = synth.generate_fleet(synth.SynthConfig(T=100), n=2, lifetime_jitter=0.0)
    (a, ha), (b, hb) = fleet
    assert a.T == b.T == 100
    np.testing.assert_array_equal(ha, hb)
    assert not np.array_equal(a.features, b.features)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=100, phase_breaks=(50, 40)),
        dict(T=100, phase_breaks=(0, 40)),
        dict(T=100, phase_breaks=(20, 99)),
        dict(F=3, n_informative=4),
        dict(n_informative=0),
        dict(noise_sigma=-1),
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        synth.SynthConfig(**kwargs)


def test_noise_free_hi_is_in_feature_span():
    cfg = synth.SynthConfig(T=200, F=5, n_informative=5, noise_sigma=0.0, identity_distortion=True)
    fleet = synth.generate_fleet(cfg, n=2)
    train = [(t.features, LabelSpec(40, t.T - 40)) for t, _ in fleet]
    st = fit(train)
    for h_raw, (_, truth) in zip(st.h_per_traj, fleet):
        assert correlation(h_raw, truth) >= 1 - 1e-6
