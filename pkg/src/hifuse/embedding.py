"""DeepSAD embeddings with an optional log-determinant diversity penalty.

A bias-free dense network ``phi`` maps standardized features to ``R^K``;
healthy samples are pulled towards a fixed center ``alpha``, abnormal ones
pushed away, unlabeled ones weakly pulled in. The diversity term
``-ln det(C) + trace(C)`` on the batch Gram matrix ``C = Y^T Y`` drives the
embedding columns towards orthonormality. Gradients are written out by hand.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hifuse.dataset import (
    ABNORMAL,
    HEALTHY,
    UNLABELED,
    DatasetSplit,
    ScalerParams,
    Trajectory,
    assign_labels,
    fit_scaler,
)
from hifuse.errors import ConfigError, DataError, NumericalError

log = logging.getLogger(__name__)

MODEL_FORMAT = "hifuse-embedding-model"
MODEL_VERSION = 1
CENTER_MIN = 0.1


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple = (448, 32, 32, 16)
    activations: tuple = ("relu", "relu", "linear")

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f"invalid layer widths {widths}")
        if len(acts) != len(widths) - 1:
            raise ConfigError("need one activation per layer")
        if any(a not in ("relu", "linear") for a in acts):
            raise ConfigError(f"unknown activation in {acts}")
        if acts[-1] != "linear":
            raise ConfigError("the final layer must be linear")

    @property
    def K(self) -> int:
        return self.layer_widths[-1]

    @classmethod
    def default(cls, F: int, K: int = 16, hidden: Sequence[int] = (32, 32)) -> "NetworkSpec":
        hidden = tuple(hidden)
        return cls((F, *hidden, K), ("relu",) * len(hidden) + ("linear",))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 1000
    batch_size: int = 128
    mu: float = 0.1  # weight of unlabeled samples
    nu: float = 10.0  # weight decay
    lambda_div: float = 1e-3
    seed: int = 0
    eps_dist: float = 1e-6
    eps_jitter: float = 1e-6

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr and batch_size must be positive, epochs >= 0")
        if self.mu < 0 or self.nu < 0 or self.lambda_div < 0:
            raise ConfigError("mu, nu and lambda_div must be >= 0")
        if self.eps_dist <= 0 or self.eps_jitter <= 0:
            raise ConfigError("eps_dist and eps_jitter must be positive")


# --- network ----------------------------------------------------------------


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> list[np.ndarray]:
    ws = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return ws


def forward(weights, activations, x: np.ndarray, keep: bool = False):
    """Network output; with ``keep`` also the per-layer inputs and pre-activations."""
    a = x
    cache = []
    for W, act in zip(weights, activations):
        pre = a @ W
        cache.append((a, pre))
        a = np.maximum(pre, 0.0) if act == "relu" else pre
    return (a, cache) if keep else a


def backward(weights, activations, cache, grad_out: np.ndarray) -> list[np.ndarray]:
    grads = [None] * len(weights)
    g = grad_out
    for i in range(len(weights) - 1, -1, -1):
        a_in, pre = cache[i]
        if activations[i] == "relu":
            g = g * (pre > 0.0)
        grads[i] = a_in.T @ g
        if i:
            g = g @ weights[i].T
    return grads


# --- losses -----------------------------------------------------------------


def deepsad_loss(Y: np.ndarray, labels: np.ndarray, mu: float, nu: float, weights=(), eps_dist: float = 1e-6) -> float:
    """DeepSAD objective on centered embeddings ``Y = phi(X) - alpha``.

    Healthy rows contribute ``d^2``, abnormal rows ``1 / max(d^2, eps_dist)``,
    unlabeled rows ``mu * d^2``; plus ``nu`` times the squared weight norm.
    """
    d2 = np.sum(np.asarray(Y, float) ** 2, axis=1)
    labels = np.asarray(labels)
    loss = d2[labels == HEALTHY].sum()
    loss += (1.0 / np.maximum(d2[labels == ABNORMAL], eps_dist)).sum()
    loss += mu * d2[labels == UNLABELED].sum()
    loss += nu * sum(float(np.sum(W * W)) for W in weights)
    return float(loss)


def _deepsad_grad(Y, labels, mu, eps_dist):
    d2 = np.sum(Y * Y, axis=1)
    coef = np.zeros_like(d2)
    coef[labels == HEALTHY] = 2.0
    coef[labels == UNLABELED] = 2.0 * mu
    ab = labels == ABNORMAL
    live = ab & (d2 > eps_dist)
    coef[live] = -2.0 / d2[live] ** 2
    return coef[:, None] * Y


def gram(Y: np.ndarray, eps_jitter: float = 1e-6) -> np.ndarray:
    Y = np.asarray(Y, float)
    return Y.T @ Y + eps_jitter * np.eye(Y.shape[1])


def diversity_from_gram(C: np.ndarray) -> float:
    """``sum_k (s_k - ln s_k)`` over the eigenvalues of symmetric ``C``."""
    s = np.linalg.eigvalsh(C)
    if s[0] <= 0:
        raise NumericalError("Gram matrix is not positive definite")
    return float(np.sum(s - np.log(s)))


def diversity_logdet(C: np.ndarray) -> float:
    """``-ln det(C) + trace(C)`` computed directly."""
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0:
        raise NumericalError("Gram matrix is not positive definite")
    return float(np.trace(C) - logdet)


def diversity_loss(Y: np.ndarray, eps_jitter: float = 1e-6) -> float:
    return diversity_from_gram(gram(Y, eps_jitter))


def diversity_grad_gram(C: np.ndarray) -> np.ndarray:
    """Gradient of the diversity loss with respect to ``C``: ``I - C^{-1}``."""
    s, V = np.linalg.eigh(C)
    return np.eye(C.shape[0]) - (V / s) @ V.T


def _diversity_value_grad(Y, eps_jitter):
    C = gram(Y, eps_jitter)
    s, V = np.linalg.eigh(C)
    if s[0] <= 0:
        raise NumericalError("Gram matrix is not positive definite")
    value = float(np.sum(s - np.log(s)))
    G = np.eye(C.shape[0]) - (V / s) @ V.T
    return value, 2.0 * Y @ G


def total_loss(Y, labels, weights, cfg: TrainConfig) -> float:
    loss = deepsad_loss(Y, labels, cfg.mu, cfg.nu, weights, cfg.eps_dist)
    if cfg.lambda_div > 0:
        loss += cfg.lambda_div * diversity_loss(Y, cfg.eps_jitter)
    return loss


def loss_and_grads(weights, spec: NetworkSpec, X, labels, center, cfg: TrainConfig):
    """Total loss on a batch and its gradient with respect to every weight matrix."""
    out, cache = forward(weights, spec.activations, X, keep=True)
    Y = out - center
    loss = deepsad_loss(Y, labels, cfg.mu, cfg.nu, weights, cfg.eps_dist)
    g = _deepsad_grad(Y, labels, cfg.mu, cfg.eps_dist)
    if cfg.lambda_div > 0:
        div, gdiv = _diversity_value_grad(Y, cfg.eps_jitter)
        loss += cfg.lambda_div * div
        g = g + cfg.lambda_div * gdiv
    grads = backward(weights, spec.activations, cache, g)
    if cfg.nu > 0:
        grads = [gw + 2.0 * cfg.nu * W for gw, W in zip(grads, weights)]
    return loss, grads


# --- model ------------------------------------------------------------------


def init_center(weights, spec: NetworkSpec, healthy: np.ndarray) -> np.ndarray:
    """Mean healthy output, with near-zero coordinates pushed to +-0.1."""
    healthy = np.asarray(healthy, float)
    if healthy.ndim != 2 or healthy.shape[0] == 0:
        raise DataError("init_center needs at least one healthy sample")
    alpha = forward(weights, spec.activations, healthy).mean(axis=0)
    small = np.abs(alpha) < CENTER_MIN
    alpha[small] = np.where(alpha[small] < 0, -CENTER_MIN, CENTER_MIN)
    return alpha


@dataclass
class EmbeddingModel:
    spec: NetworkSpec
    weights: list
    center: np.ndarray
    scaler: ScalerParams
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "spec": {"layer_widths": list(self.spec.layer_widths), "activations": list(self.spec.activations)},
            "weights": [{"shape": list(W.shape), "data": W.ravel(order="C").tolist()} for W in self.weights],
            "center": self.center.tolist(),
            "scaler": self.scaler.to_dict(),
            "config": asdict(self.config),
            "loss_trace": [float(v) for v in self.loss_trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingModel":
        if d.get("format") != MODEL_FORMAT:
            raise DataError(f"not a model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model version {d.get('version')!r}")
        spec = NetworkSpec(tuple(d["spec"]["layer_widths"]), tuple(d["spec"]["activations"]))
        weights = [np.asarray(w["data"], float).reshape(w["shape"]) for w in d["weights"]]
        return cls(
            spec=spec,
            weights=weights,
            center=np.asarray(d["center"], float),
            scaler=ScalerParams.from_dict(d["scaler"]),
            config=TrainConfig(**d["config"]),
            loss_trace=list(d.get("loss_trace", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: cannot read model: {e}") from None
        return cls.from_dict(d)

    @property
    def uses_diversity(self) -> bool:
        return self.config.lambda_div > 0


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def training_samples(split: DatasetSplit):
    """Stack training rows and labels; the test trajectory contributes its healthy prefix only."""
    xs, ls = [], []
    for traj, spec in split.train:
        xs.append(traj.features)
        ls.append(assign_labels(traj, spec))
    if split.test is not None:
        traj, spec = split.test
        lab = assign_labels(traj, spec)
        keep = lab == HEALTHY
        xs.append(traj.features[keep])
        ls.append(lab[keep])
    if not xs:
        raise DataError("no training data")
    return np.concatenate(xs, axis=0), np.concatenate(ls)


def train(split: DatasetSplit, spec: Optional[NetworkSpec] = None, cfg: TrainConfig = TrainConfig()) -> EmbeddingModel:
    """Fit the scaler and the network on ``split``; deterministic given ``cfg.seed``.

    Features are raw here; the scaler is fit on the training rows plus the
    test healthy prefix and stored in the model.
    """
    X_raw, labels = training_samples(split)
    F = X_raw.shape[1]
    if spec is None:
        spec = NetworkSpec.default(F)
    if spec.layer_widths[0] != F:
        raise ConfigError(f"network input width {spec.layer_widths[0]} != feature count {F}")
    scaler = fit_scaler([X_raw])
    X = scaler.transform(X_raw)

    rng = np.random.default_rng(cfg.seed)
    weights = init_weights(spec, rng)
    center = init_center(weights, spec, X[labels == HEALTHY])
    opt = Adam(weights, cfg.lr)
    n = X.shape[0]
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            # overflow shows up as a non-finite loss below; no need for numpy's warnings too
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss, grads = loss_and_grads(weights, spec, X[idx], labels[idx], center, cfg)
                except (np.linalg.LinAlgError, NumericalError):
                    loss, grads = np.nan, []
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(weights, grads)
            epoch_loss += loss
        trace.append(epoch_loss)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.6g", epoch, epoch_loss)
    return EmbeddingModel(spec, weights, center, scaler, cfg, trace)


def embed(model: EmbeddingModel, traj) -> np.ndarray:
    """Condition indicators ``phi(x_t) - alpha`` for every row of ``traj``."""
    x = traj.features if isinstance(traj, Trajectory) else np.asarray(traj, float)
    if x.shape[1] != model.spec.layer_widths[0]:
        raise DataError(f"trajectory has F={x.shape[1]}, model expects {model.spec.layer_widths[0]}")
    return forward(model.weights, model.spec.activations, model.scaler.transform(x)) - model.center


def anomaly_score(model: EmbeddingModel, traj) -> np.ndarray:
    Y = embed(model, traj)
    return np.sum(Y * Y, axis=1)


def embedding_rank(Y: np.ndarray, rel_tol: float = 1e-6) -> int:
    """Number of Gram eigenvalues above ``rel_tol`` times the largest."""
    s = np.linalg.eigvalsh(np.asarray(Y, float).T @ np.asarray(Y, float))
    return int(np.sum(s > rel_tol * s[-1])) if s[-1] > 0 else 0
