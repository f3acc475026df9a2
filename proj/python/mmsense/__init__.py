"""Multi-modal multi-task wireless sensing toolkit.

Thin re-export of the compiled extension: synthetic scene generation,
the gated-fusion multi-task model, training/evaluation, subject splits,
and the gradient-check harness.
"""

from _mmsense import (
    ConfigError,
    DataError,
    GeneratorConfig,
    LabeledSample,
    Metrics,
    Model,
    ModelConfig,
    NumericError,
    RunConfig,
    ShapeError,
    Splits,
    TrainConfig,
    TrainLog,
    TrainRecord,
    default_config,
    evaluate,
    generate_dataset,
    make_splits,
    model_grad_check,
    read_dataset,
    run_command,
    train,
    write_dataset,
)

__all__ = [
    "ConfigError",
    "DataError",
    "GeneratorConfig",
    "LabeledSample",
    "Metrics",
    "Model",
    "ModelConfig",
    "NumericError",
    "RunConfig",
    "ShapeError",
    "Splits",
    "TrainConfig",
    "TrainLog",
    "TrainRecord",
    "default_config",
    "evaluate",
    "generate_dataset",
    "make_splits",
    "model_grad_check",
    "read_dataset",
    "run_command",
    "train",
    "write_dataset",
]
