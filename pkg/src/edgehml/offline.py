"""Between-task exchange from the disk tier into RAM.

While training is paused, the current model scores the memory pool's labeled
samples, losses are accumulated per class, and sampling probabilities over
the disk pool are formed as inverse class frequency times normalized class
loss. Records drawn under those probabilities refill the memory pool's
unlabeled region. Two guards cover the degenerate inputs the raw formula does
not: classes with no disk records get probability zero, and an all-zero loss
vector falls back to pure inverse-frequency weights. Normalization is plain
L1 (the weights are already nonnegative).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import LabeledSample, ShapeError
from .disk_pool import DiskPool
from .learner import Model, _stack
from .memory_pool import MemoryPool

NORMALIZATION = "l1"


@dataclass
class ClassStats:
    class_loss: np.ndarray
    class_prob: np.ndarray


@dataclass
class OfflineReport:
    class_prob: np.ndarray
    requested: int
    drawn: int
    duration_s: float


def class_losses(model: Model, labeled: list[LabeledSample], num_classes: int) -> np.ndarray:
    """Per-class sums of cross-entropy over the given labeled samples.

    Classes absent from the list get zero. Pure forward pass, no update.
    """
    if model.num_classes != num_classes:
        raise ShapeError(
            f"model outputs {model.num_classes} classes, expected {num_classes}"
        )
    out = np.zeros(num_classes)
    if not labeled:
        return out
    x = _stack([s.sample for s in labeled])
    y = np.array([s.label for s in labeled])
    if y.max() >= num_classes:
        raise ShapeError(f"label {y.max()} outside [0, {num_classes})")
    probs = model.forward_batch(x)
    losses = -np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))
    np.add.at(out, y, losses)
    return out


def class_sampling_probs(class_num: np.ndarray, class_loss: np.ndarray) -> np.ndarray:
    """Sampling distribution over classes: rarer and harder classes get more mass.

    raw[i] = (sum(class_num) / class_num[i]) * (class_loss[i] / sum(class_loss))
    for nonempty classes, then L1-normalized. All zeros when the disk pool is
    empty; inverse-frequency fallback when every loss is zero.
    """
    class_num = np.asarray(class_num, dtype=float)
    class_loss = np.asarray(class_loss, dtype=float)
    if class_num.shape != class_loss.shape or class_num.ndim != 1:
        raise ShapeError(
            f"class_num {class_num.shape} and class_loss {class_loss.shape} must be "
            "1-D and equally long"
        )
    total_num = class_num.sum()
    if total_num == 0:
        return np.zeros_like(class_num)
    nonempty = class_num > 0
    raw = np.zeros_like(class_num)
    total_loss = class_loss.sum()
    if total_loss > 0:
        raw[nonempty] = (total_num / class_num[nonempty]) * (class_loss[nonempty] / total_loss)
    if raw.sum() == 0:
        raw[nonempty] = total_num / class_num[nonempty]
    return raw / raw.sum()


def run_offline_phase(
    model: Model, mem: MemoryPool, disk: DiskPool, rng: np.random.Generator
) -> OfflineReport:
    """Score, sample, and refill; the wall time is charged to training time."""
    t0 = time.perf_counter()
    disk.flush()
    k = mem.capacity - len(mem.labeled)
    losses = class_losses(model, mem.labeled, disk.num_classes)
    probs = class_sampling_probs(disk.class_num, losses)
    if k > 0 and disk.count > 0:
        drawn = disk.sample_by_class_prob(probs, k, rng)
    else:
        drawn = []
    mem.refill_unlabeled(drawn)
    return OfflineReport(probs, k, len(drawn), time.perf_counter() - t0)
