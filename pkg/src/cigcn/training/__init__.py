from .adam import AdamState, adam_step
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .objective import IGCObjective, LightGCNObjective, NegativeSampler, bpr_loss, sample_negatives
from .trainers import (
    CI_LIGHTGCN,
    FINE_TUNE,
    FULL_RETRAIN,
    I_LIGHTGCN,
    METHODS,
    TrainConfig,
    TrainLog,
    bootstrap_stage0,
    fine_tune,
    full_retrain,
    incremental_config,
    retrain_stage,
)
