from .config import (
    DatasetSpec, ModeSpec, ModelSpec, OptimizerSpec, SweepConfig, TrainConfig,
    config_defaults, config_from_dict, load_config, load_train_config, sweep_from_dict,
)
from .train_log import CSV_COLUMNS, EpochRecord, TrainLog

__all__ = [
    "DatasetSpec", "ModeSpec", "ModelSpec", "OptimizerSpec", "SweepConfig", "TrainConfig",
    "config_defaults", "config_from_dict", "load_config", "load_train_config",
    "sweep_from_dict", "CSV_COLUMNS", "EpochRecord", "TrainLog",
]
