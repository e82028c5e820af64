"""One-stage advancement for every retraining method."""
from __future__ import annotations

from typing import Sequence

from .errors import ConfigError
from .ingest import StageDataset
from .training import (
    CI_LIGHTGCN,
    FINE_TUNE,
    FULL_RETRAIN,
    I_LIGHTGCN,
    METHODS,
    Checkpoint,
    TrainConfig,
    bootstrap_stage0,
    fine_tune,
    full_retrain,
    incremental_config,
    retrain_stage,
)


def check_method(method: str) -> None:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def initial(method: str, stages: Sequence[StageDataset], config: TrainConfig) -> Checkpoint:
    """Stage-0 model; every method starts from the same bootstrap."""
    check_method(method)
    return bootstrap_stage0(stages[0], config, method=method)


def advance(method: str, prev: Checkpoint, stages: Sequence[StageDataset], t: int,
            config: TrainConfig) -> Checkpoint:
    """Produce the stage-``t`` checkpoint from the stage ``t-1`` one."""
    check_method(method)
    if method in (CI_LIGHTGCN, I_LIGHTGCN):
        return retrain_stage(prev, stages[t], incremental_config(config, method), method=method)
    if method == FINE_TUNE:
        return fine_tune(prev, stages[t], config)
    assert method == FULL_RETRAIN
    return full_retrain(stages[:t + 1], config, init=prev)
