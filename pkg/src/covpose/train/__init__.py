from .config import EARLY_STOP_METRIC, PretrainConfig, StagePlan, TrainConfig, Variant
from .loops import (
    TrainingDiverged,
    finetune,
    mae_holdout,
    masked_mse,
    mean_pck,
    predict,
    pretrain_mae,
    with_head,
)
from .protocol import (
    CrossValResult,
    FinetuneResult,
    cross_validate,
    run_hierarchy,
    slp_split,
    two_stage_finetune,
    write_manifest,
)

__all__ = [
    "EARLY_STOP_METRIC", "CrossValResult", "FinetuneResult", "PretrainConfig", "StagePlan", "TrainConfig",
    "TrainingDiverged", "Variant", "cross_validate", "finetune", "mae_holdout", "masked_mse", "mean_pck",
    "predict", "pretrain_mae", "run_hierarchy", "slp_split", "two_stage_finetune", "with_head",
    "write_manifest",
]
