"""Shared domain types, the hyperparameter bundle, and configuration validation.

Class indices are global across the whole stream (0..C), not per task, so
per-class statistics can be kept in flat arrays of length C. All stochastic
components draw from named substreams derived from one run seed, which makes
runs bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np


class EdgeHMLError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EdgeHMLError):
    """A configuration value violates its constraint."""


class ShapeError(EdgeHMLError):
    """An array argument has the wrong length or dimensionality."""


class CapacityError(EdgeHMLError):
    """A pool operation would exceed the pool's fixed capacity."""


class FormatError(EdgeHMLError):
    """A file does not conform to its documented binary or text format."""


class EmptyBatchError(EdgeHMLError):
    """An operation that requires a nonempty batch received an empty one."""


class EmptyTestSetError(EdgeHMLError):
    """A task offered for evaluation has no test samples."""


class InsufficientDataError(EdgeHMLError):
    """A class does not have enough samples for the requested split."""


class SpecError(EdgeHMLError):
    """A stream-construction spec is internally inconsistent."""


class NonFiniteGradientError(EdgeHMLError):
    """A gradient passed to the optimizer contains NaN or infinity."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from the run seed and a component name.

    Two streams with different names are statistically independent; the same
    (seed, name) pair always yields the same sequence.
    """
    return np.random.default_rng([seed, *name.encode("utf-8")])


def round_half_up(x: float) -> int:
    """Round to the nearest integer, ties away from zero for positive x."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class Sample:
    """A feature vector with a stream-unique id. Features are float32."""

    id: int
    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 1:
            raise ShapeError(f"features must be 1-D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"sample {self.id}: features contain non-finite values")
        object.__setattr__(self, "features", feats)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.id == other.id and self.features.tobytes() == other.features.tobytes()

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class LabeledSample:
    sample: Sample
    label: int

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be nonnegative, got {self.label}")


@dataclass(frozen=True)
class PseudoLabeledSample:
    """An unlabeled sample carrying the model's own prediction as its label."""

    sample: Sample
    pseudo_label: int
    confidence: float

    def __post_init__(self):
        if self.pseudo_label < 0:
            raise ValueError(f"pseudo_label must be nonnegative, got {self.pseudo_label}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class Task:
    """One stage of the stream: a disjoint class subset with its data splits."""

    task_id: int
    classes: tuple[int, ...]
    labeled: tuple[LabeledSample, ...]
    unlabeled: tuple[Sample, ...]
    test: tuple[LabeledSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(sorted(self.classes)))
        object.__setattr__(self, "labeled", tuple(self.labeled))
        object.__setattr__(self, "unlabeled", tuple(self.unlabeled))
        object.__setattr__(self, "test", tuple(self.test))
        cls = set(self.classes)
        for s in self.labeled:
            if s.label not in cls:
                raise ValueError(f"task {self.task_id}: labeled sample with out-of-task label {s.label}")
        for s in self.test:
            if s.label not in cls:
                raise ValueError(f"task {self.task_id}: test sample with out-of-task label {s.label}")


@dataclass(frozen=True)
class TaskStream:
    """An ordered task sequence over C global classes in a D-dim feature space."""

    tasks: tuple[Task, ...]
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        seen: set[int] = set()
        for task in self.tasks:
            cls = set(task.classes)
            if cls & seen:
                raise ValueError(f"task {task.task_id}: classes overlap an earlier task")
            if not cls <= set(range(self.num_classes)):
                raise ValueError(f"task {task.task_id}: class outside [0, {self.num_classes})")
            seen |= cls


@dataclass(frozen=True)
class Hyperparams:
    """All run-level knobs.

    v1_frac / v2_frac are fractions of the per-task iteration budget; they are
    resolved to integer iteration indices (round half up) when a task starts.
    """

    tau: float = 0.95            # pseudo-label confidence threshold
    alpha: float = 1.0           # labeled-replay loss weight
    beta: float = 0.1            # unlabeled-replay loss weight
    eta: float = -0.5            # ramp amplitude
    xi: float = 0.5              # ramp offset
    v1_frac: float = 0.20        # fraction of iterations before the ramp starts
    v2_frac: float = 0.30        # fraction at which the ramp saturates
    p_admit: float = 0.5         # coin-flip probability for disk admission
    lr: float = 0.03
    mem_capacity: int = 200
    disk_capacity: int = 2000
    iters_per_task: int = 100
    batch_new: int = 10
    batch_replay: int = 32
    batch_unlabeled: int = 32
    hidden_dim: int = 32
    seed: int = 0
    task_incremental_eval: bool = True   # restrict test-time argmax to the task's classes
    replay_relabel: bool = False         # re-label replayed pseudo samples with the live model


HYPERPARAM_FIELDS = {f.name: f.type for f in fields(Hyperparams)}


def validate_config(h: Hyperparams, stream_meta: tuple[int, int, int]) -> Hyperparams:
    """Check every invariant and return h unchanged; idempotent.

    stream_meta is (num_tasks, num_classes, feature_dim). Raises ConfigError
    naming the first violated constraint.
    """
    num_tasks, num_classes, feature_dim = stream_meta
    if num_tasks < 0:
        raise ConfigError(f"num_tasks must be nonnegative, got {num_tasks}")
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")

    for name in ("tau", "alpha", "beta", "eta", "xi", "v1_frac", "v2_frac", "p_admit", "lr"):
        if not math.isfinite(getattr(h, name)):
            raise ConfigError(f"{name} must be finite")
    if not 0.0 < h.tau <= 1.0:
        raise ConfigError(f"tau out of range (0, 1], got {h.tau}")
    if not 0.0 <= h.v1_frac <= 1.0:
        raise ConfigError(f"v1_frac out of range [0, 1], got {h.v1_frac}")
    if not 0.0 <= h.v2_frac <= 1.0:
        raise ConfigError(f"v2_frac out of range [0, 1], got {h.v2_frac}")
    if h.v1_frac > h.v2_frac:
        raise ConfigError(f"v1_frac > v2_frac ({h.v1_frac} > {h.v2_frac})")
    if not 0.0 <= h.p_admit <= 1.0:
        raise ConfigError(f"p_admit out of range [0, 1], got {h.p_admit}")
    if h.lr < 0.0:
        raise ConfigError(f"lr must be nonnegative, got {h.lr}")
    if h.mem_capacity < 1:
        raise ConfigError(f"mem_capacity must be >= 1, got {h.mem_capacity}")
    if h.disk_capacity < h.mem_capacity:
        raise ConfigError(
            f"disk_capacity must be >= mem_capacity, got {h.disk_capacity} < {h.mem_capacity}"
        )
    if h.iters_per_task < 0:
        raise ConfigError(f"iters_per_task must be nonnegative, got {h.iters_per_task}")
    for name in ("batch_new", "batch_replay", "batch_unlabeled"):
        if getattr(h, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(h, name)}")
    if h.hidden_dim < 1:
        raise ConfigError(f"hidden_dim must be >= 1, got {h.hidden_dim}")
    if h.seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {h.seed}")

    v = h.iters_per_task
    v1 = round_half_up(h.v1_frac * v)
    v2 = round_half_up(h.v2_frac * v)
    if not 0 <= v1 <= v2 <= v:
        raise ConfigError(f"derived iteration bounds invalid: v1={v1}, v2={v2}, V={v}")
    return h


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blank lines allowed."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def coerce_value(name: str, text: str, target_type: type) -> object:
    """Convert a config string into the declared field type."""
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {target_type.__name__}") from None


def hyperparams_from_pairs(pairs: dict[str, str]) -> Hyperparams:
    """Build Hyperparams from raw string pairs. Unknown keys are an error."""
    type_by_name = {f.name: f.type for f in fields(Hyperparams)}
    kwargs = {}
    for key, value in pairs.items():
        if key not in type_by_name:
            raise ConfigError(f"unknown config key {key!r}")
        target = {"float": float, "int": int, "bool": bool}.get(type_by_name[key], str)
        kwargs[key] = coerce_value(key, value, target)
    return Hyperparams(**kwargs)


def load_config(path) -> Hyperparams:
    """Read a flat key/value config file into a Hyperparams bundle."""
    with open(path, "r", encoding="utf-8") as fh:
        pairs = parse_kv_text(fh.read(), source=str(path))
    return hyperparams_from_pairs(pairs)
