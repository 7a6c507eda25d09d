import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifuse import embedding as emb
from hifuse.dataset import ABNORMAL, HEALTHY, UNLABELED, DatasetSplit, LabelSpec, ScalerParams, Trajectory
from hifuse.errors import ConfigError, DataError
from oracles import numeric_grad, rel_err

IDENTITY_SPEC = emb.NetworkSpec((2, 2), ("linear",))


def _identity_model(center):
    return emb.EmbeddingModel(
        IDENTITY_SPEC, [np.eye(2)], np.asarray(center, float), ScalerParams(np.zeros(2), np.ones(2))
    )


# --- center -----------------------------------------------------------------


def test_center_single_sample():
    v = np.array([[0.5, -0.3]])
    np.testing.assert_allclose(emb.init_center([np.eye(2)], IDENTITY_SPEC, v), [0.5, -0.3])


def test_center_snaps_zero_outputs():
    np.testing.assert_array_equal(emb.init_center([np.zeros((2, 2))], IDENTITY_SPEC, np.ones((3, 2))), [0.1, 0.1])


def test_center_mean_then_snap():
    x = np.array([[1.0, -0.02], [0.0, -0.04]])
    np.testing.assert_allclose(emb.init_center([np.eye(2)], IDENTITY_SPEC, x), [0.5, -0.1])


def test_center_needs_samples():
    with pytest.raises(DataError):
        emb.init_center([np.eye(2)], IDENTITY_SPEC, np.zeros((0, 2)))


# --- losses -----------------------------------------------------------------


@pytest.mark.parametrize(
    "y, label, mu, expected",
    [
        ([0.0, 0.0], HEALTHY, 0.1, 0.0),
        ([2.0, 0.0], ABNORMAL, 0.1, 0.25),
        ([0.0, 2.0], UNLABELED, 0.5, 2.0),
        ([1.0, 1.0], HEALTHY, 0.1, 2.0),
    ],
)
def test_deepsad_single_sample(y, label, mu, expected):
    assert emb.deepsad_loss(np.array([y]), np.array([label]), mu, 0.0) == pytest.approx(expected)


def test_deepsad_weight_decay_and_floor():
    W = [np.full((2, 2), 0.5)]
    assert emb.deepsad_loss(np.zeros((1, 2)), [HEALTHY], 0.1, 2.0, W) == pytest.approx(2.0)
    # abnormal sample sitting on the center is bounded by eps_dist
    assert emb.deepsad_loss(np.zeros((1, 2)), [ABNORMAL], 0.1, 0.0, eps_dist=1e-6) == pytest.approx(1e6)


def test_diversity_identity_and_diag():
    assert emb.diversity_from_gram(np.eye(2)) == pytest.approx(2.0)
    assert emb.diversity_from_gram(2 * np.eye(2)) == pytest.approx(4 - 2 * np.log(2), abs=1e-12)
    assert emb.diversity_logdet(2 * np.eye(2)) == pytest.approx(2.613705638880109, abs=1e-12)


def test_diversity_rank_deficient_is_finite():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(10, 1))
    Y = np.hstack([a, a])
    val = emb.diversity_loss(Y, eps_jitter=1e-6)
    s = np.linalg.eigvalsh(Y.T @ Y + 1e-6 * np.eye(2))
    assert np.isfinite(val)
    assert val == pytest.approx(np.sum(s - np.log(s)), rel=1e-9)
    # the null direction contributes about -ln(1e-6) = 13.8
    assert val > -np.log(1e-6)


def _random_spd(rng, K=4):
    A = rng.normal(size=(K, K))
    return A @ A.T + 0.5 * np.eye(K)


@pytest.mark.parametrize("seed", range(5))
def test_diversity_forms_agree(seed):
    C = _random_spd(np.random.default_rng(seed))
    assert emb.diversity_from_gram(C) == pytest.approx(emb.diversity_logdet(C), abs=1e-9)
    assert emb.diversity_from_gram(C) >= C.shape[0]


@pytest.mark.parametrize("seed", range(5))
def test_diversity_gram_gradient(seed):
    C = _random_spd(np.random.default_rng(seed))
    G = emb.diversity_grad_gram(C)
    np.testing.assert_allclose(G, np.eye(4) - np.linalg.inv(C), atol=1e-12)
    num = numeric_grad(lambda: emb.diversity_logdet(C), [C], step=1e-6)[0]
    np.testing.assert_allclose(G, num, atol=1e-6)


def test_total_loss_lambda_zero_is_deepsad():
    rng = np.random.default_rng(1)
    Y = rng.normal(size=(6, 3))
    lab = np.array([1, 1, 0, 0, -1, -1])
    cfg = emb.TrainConfig(lambda_div=0.0, nu=0.0)
    assert emb.total_loss(Y, lab, [], cfg) == emb.deepsad_loss(Y, lab, cfg.mu, 0.0)
    cfg = emb.TrainConfig(lambda_div=0.5, nu=0.0)
    assert emb.total_loss(Y, lab, [], cfg) == pytest.approx(
        emb.deepsad_loss(Y, lab, cfg.mu, 0.0) + 0.5 * emb.diversity_loss(Y)
    )


@pytest.mark.parametrize("lam", [0.0, 1e-3, 1.0])
def test_gradient_check(lam):
    rng = np.random.default_rng(42)
    spec = emb.NetworkSpec((5, 6, 6, 3), ("relu", "relu", "linear"))
    weights = emb.init_weights(spec, rng)
    X = rng.normal(size=(8, 5))
    labels = np.array([1, 1, 1, 0, 0, 0, -1, -1])
    center = np.array([0.3, -0.2, 0.1])
    cfg = emb.TrainConfig(mu=0.5, nu=0.01, lambda_div=lam)
    _, grads = emb.loss_and_grads(weights, spec, X, labels, center, cfg)

    def f():
        Y = emb.forward(weights, spec.activations, X) - center
        return emb.total_loss(Y, labels, weights, cfg)

    num = numeric_grad(f, weights)
    for g, n in zip(grads, num):
        assert rel_err(g, n).max() <= 1e-4


# --- network ----------------------------------------------------------------


def test_network_spec_rules():
    assert emb.NetworkSpec.default(448).layer_widths == (448, 32, 32, 16)
    with pytest.raises(ConfigError):
        emb.NetworkSpec((4, 3), ("relu",))
    with pytest.raises(ConfigError):
        emb.NetworkSpec((4, 3, 2), ("relu",))
    with pytest.raises(ConfigError):
        emb.NetworkSpec((4, 0), ("linear",))


def test_train_config_rules():
    with pytest.raises(ConfigError):
        emb.TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        emb.TrainConfig(lambda_div=-1)


@pytest.mark.parametrize("center", [[0.3, -0.2], [1.0, 2.0]])
def test_anomaly_score_examples(center):
    model = _identity_model(center)
    x = np.array([center, [center[0] + 3, center[1] + 4]])
    np.testing.assert_allclose(emb.anomaly_score(model, x), [0.0, 25.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_anomaly_score_nonnegative_and_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    spec = emb.NetworkSpec.default(4, K=3, hidden=(5,))
    w = emb.init_weights(spec, rng)
    center = rng.normal(size=3)
    scaler = ScalerParams(np.zeros(4), np.ones(4))
    x = rng.normal(size=(6, 4))
    s = emb.anomaly_score(emb.EmbeddingModel(spec, w, center, scaler), x)
    assert np.all(s >= 0)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rotated = emb.EmbeddingModel(spec, w[:-1] + [w[-1] @ Q], center @ Q, scaler)
    np.testing.assert_allclose(emb.anomaly_score(rotated, x), s, rtol=1e-10, atol=1e-12)


# --- training ---------------------------------------------------------------


def _toy_split(rng, T=60, F=4):
    trajs = []
    for i in range(2):
        X = rng.normal(scale=0.3, size=(T, F))
        X[T // 2 :, 0] += 3.0
        trajs.append((Trajectory(f"toy{i}", X), LabelSpec(20, T - 19)))
    return DatasetSplit(trajs)


def test_train_separates_clusters():
    split = _toy_split(np.random.default_rng(0))
    spec = emb.NetworkSpec.default(4, K=4, hidden=(8,))
    model = emb.train(split, spec, emb.TrainConfig(epochs=150, lambda_div=0.0, nu=1e-3, lr=5e-3, batch_size=32))
    traj = split.train[0][0]
    s = emb.anomaly_score(model, traj)
    assert np.sqrt(s[:20]).mean() < np.sqrt(s[-20:]).mean()


def test_train_is_deterministic_and_epoch_zero_is_init():
    split = _toy_split(np.random.default_rng(1))
    spec = emb.NetworkSpec.default(4, K=3, hidden=(6,))
    cfg = emb.TrainConfig(epochs=5, seed=7)
    a, b = emb.train(split, spec, cfg), emb.train(split, spec, cfg)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert len(a.loss_trace) == 5
    zero = emb.train(split, spec, emb.TrainConfig(epochs=0, seed=7))
    init = emb.init_weights(spec, np.random.default_rng(7))
    for wz, wi in zip(zero.weights, init):
        np.testing.assert_array_equal(wz, wi)
    assert zero.loss_trace == []


def test_training_uses_only_test_healthy_prefix():
    rng = np.random.default_rng(2)
    split = _toy_split(rng)
    test = Trajectory("t", rng.normal(size=(30, 4)))
    with_test = DatasetSplit(split.train, (test, LabelSpec(10)))
    X, lab = emb.training_samples(with_test)
    assert X.shape[0] == 2 * 60 + 10
    np.testing.assert_array_equal(X[-10:], test.features[:10])
    assert np.all(lab[-10:] == HEALTHY)


def test_model_roundtrip(tmp_path):
    split = _toy_split(np.random.default_rng(3))
    model = emb.train(split, emb.NetworkSpec.default(4, K=3, hidden=(6,)), emb.TrainConfig(epochs=2))
    path = tmp_path / "m.json"
    model.save(path)
    back = emb.EmbeddingModel.load(path)
    traj = split.train[0][0]
    np.testing.assert_array_equal(emb.embed(back, traj), emb.embed(model, traj))
    assert back.config == model.config


def test_model_load_rejects_garbage(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(DataError):
        emb.EmbeddingModel.load(p)
    with pytest.raises(DataError):
        emb.EmbeddingModel.load(tmp_path / "missing.json")


def test_embedding_rank():
    a = np.random.default_rng(0).normal(size=(20, 1))
    assert emb.embedding_rank(np.hstack([a, 2 * a, -a])) == 1
    assert emb.embedding_rank(np.random.default_rng(1).normal(size=(20, 3))) == 3
