"""End-to-end glue: labels -> embedding -> fused health index, per method."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hifuse import embedding, fusion
from hifuse.dataset import DatasetSplit, LabelSpec, Trajectory
from hifuse.errors import ConfigError

# method -> (apaic, realtime, diversity)
METHODS = {
    "deepsad": (False, False, False),
    "ads": (True, False, False),
    "rads": (True, True, False),
    "2ds": (False, False, True),
    "a2ds": (True, False, True),
    "ra2ds": (True, True, True),
}


@dataclass(frozen=True)
class LabelConfig:
    t_healthy: int = 50
    faulty_tail: int = 50  # T_f = T - faulty_tail when t_faulty is unset
    t_faulty: Optional[int] = None

    def train_spec(self, T: int) -> LabelSpec:
        tf = self.t_faulty if self.t_faulty is not None else T - self.faulty_tail
        spec = LabelSpec(self.t_healthy, tf)
        spec.validate(T)
        return spec

    def test_spec(self, T: int) -> LabelSpec:
        spec = LabelSpec(self.t_healthy)
        spec.validate(T)
        return spec


def make_split(train: Sequence[Trajectory], test: Optional[Trajectory], labels: LabelConfig) -> DatasetSplit:
    return DatasetSplit(
        train=[(t, labels.train_spec(t.T)) for t in train],
        test=None if test is None else (test, labels.test_spec(test.T)),
    )


def check_method(method: str, model: embedding.EmbeddingModel) -> tuple:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    flags = METHODS[method]
    if flags[2] != model.uses_diversity:
        need = "lambda_div > 0" if flags[2] else "lambda_div = 0"
        raise ConfigError(
            f"method {method!r} needs a model trained with {need}; "
            f"this one has lambda_div={model.config.lambda_div}"
        )
    return flags


@dataclass
class FusedOutput:
    """Health indices for every trajectory: raw ``h`` and projected ``z``."""

    method: str
    ids: list
    h: list
    z: list
    roles: list  # "train" | "test"
    state: Optional[fusion.FusionState] = None
    window_ends: list = field(default_factory=list)


def run_method(
    method: str,
    model: embedding.EmbeddingModel,
    split: DatasetSplit,
    cfg: fusion.FusionConfig = fusion.FusionConfig(),
) -> FusedOutput:
    apaic, realtime, _ = check_method(method, model)
    trajs = [t for t, _ in split.train]
    roles = ["train"] * len(trajs)
    if split.test is not None:
        trajs.append(split.test[0])
        roles.append("test")
    ids = [t.id for t in trajs]
    if not apaic:
        scores = [embedding.anomaly_score(model, t) for t in trajs]
        return FusedOutput(method, ids, scores, [s.copy() for s in scores], roles)

    train_pairs = [(embedding.embed(model, t), s) for t, s in split.train]
    test_pair = None
    if split.test is not None:
        test_pair = (embedding.embed(model, split.test[0]), split.test[1])
    if realtime and test_pair is not None:
        rt = fusion.fit_realtime(train_pairs, test_pair, cfg)
        st = rt.final
        h = st.h_per_traj[:-1] + [rt.h]
        z = st.z_per_traj[:-1] + [rt.z]
        return FusedOutput(method, ids, h, z, roles, st, rt.window_ends)
    st = fusion.fit(train_pairs, test_pair, cfg)
    return FusedOutput(method, ids, list(st.h_per_traj), list(st.z_per_traj), roles, st)
