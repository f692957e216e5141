"""Semi-supervised continual learning over a two-tier (RAM + disk) replay pool."""

from .core import (
    CapacityError,
    ConfigError,
    EdgeHMLError,
    EmptyBatchError,
    EmptyTestSetError,
    FormatError,
    Hyperparams,
    InsufficientDataError,
    LabeledSample,
    NonFiniteGradientError,
    PseudoLabeledSample,
    Sample,
    ShapeError,
    SpecError,
    Task,
    TaskStream,
    load_config,
    rng_stream,
    validate_config,
)
from .data import SynthSpec, load_feature_dataset, save_feature_dataset, split_tasks, synth_stream
from .disk_pool import AdmissionDecision, AdmissionVerdict, DiskPool, consider
from .learner import Model, load_checkpoint, save_checkpoint, sgd_step, total_loss
from .memory_pool import MemoryPool
from .offline import class_losses, class_sampling_probs, run_offline_phase
from .schedule import ProgressiveSchedule
from .trainer import RunReport, average_accuracy, evaluate, run_stream, train_task

__version__ = "0.1.0"

__all__ = [
    "AdmissionDecision",
    "AdmissionVerdict",
    "CapacityError",
    "ConfigError",
    "DiskPool",
    "EdgeHMLError",
    "EmptyBatchError",
    "EmptyTestSetError",
    "FormatError",
    "Hyperparams",
    "InsufficientDataError",
    "LabeledSample",
    "MemoryPool",
    "Model",
    "NonFiniteGradientError",
    "ProgressiveSchedule",
    "PseudoLabeledSample",
    "RunReport",
    "Sample",
    "ShapeError",
    "SpecError",
    "SynthSpec",
    "Task",
    "TaskStream",
    "average_accuracy",
    "class_losses",
    "class_sampling_probs",
    "consider",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "load_feature_dataset",
    "rng_stream",
    "run_offline_phase",
    "run_stream",
    "save_checkpoint",
    "save_feature_dataset",
    "sgd_step",
    "split_tasks",
    "synth_stream",
    "total_loss",
    "train_task",
    "validate_config",
]
