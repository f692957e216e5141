"""Run orchestration: per-task online loop, between-task exchange, evaluation.

Three variants share the loop:

  sft            supervised fine-tuning on each task's few labels; no pools
  labeled-replay adds the memory pool's labeled reservoir and its replay term
  edgehml        adds the disk pool (per-iteration admission), the unlabeled
                 replay term, the progressively weighted self-labeling loss,
                 and the between-task exchange

Iterations are counted from 1 within each task. Every iteration of the full
variant draws an unlabeled batch; its forward pass feeds the self-labeling
loss when the schedule weight is positive and the admission gate always.
Wall time covers training and exchange phases only; evaluation is excluded.

The accuracy matrix is lower-triangular: row k holds the accuracy on every
task t <= k measured after finishing task k, so the final row is the standard
end-of-stream score and its mean is the reported average accuracy.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigError,
    EmptyTestSetError,
    Hyperparams,
    LabeledSample,
    PseudoLabeledSample,
    Task,
    TaskStream,
    rng_stream,
    validate_config,
)
from .disk_pool import AdmissionVerdict, DiskPool, consider
from .learner import Model, sgd_step, total_loss
from .memory_pool import MemoryPool
from .offline import OfflineReport, run_offline_phase
from .schedule import ProgressiveSchedule

VARIANTS = ("sft", "labeled-replay", "edgehml")

CSV_COLUMNS = ("variant", "seed", "average_accuracy", "unsup_fraction", "iteration_time_s")
CSV_HEADER = "# edgehml-results v1"


@dataclass
class TaskMetrics:
    task_id: int
    iterations: int
    duration_s: float
    unsup_forward_count: int
    unsup_first_iter: int | None
    offered: int
    admitted: int
    reservoir_inserts: int


@dataclass
class RunReport:
    variant: str
    seed: int
    acc_matrix: np.ndarray
    average_accuracy: float
    unsup_fraction: float
    iteration_time_s: float
    per_task_offline_s: list[float]
    unsup_forward_count: int
    config_echo: Hyperparams
    per_task: list[TaskMetrics] = field(default_factory=list)
    offline_reports: list[OfflineReport] = field(default_factory=list)
    disk_eviction: str = "fifo-ring"
    disk_path: str | None = None

    def to_json_dict(self) -> dict:
        matrix = [
            [None if not np.isfinite(v) else float(v) for v in row]
            for row in self.acc_matrix
        ]
        return {
            "variant": self.variant,
            "seed": self.seed,
            "acc_matrix": matrix,
            "average_accuracy": self.average_accuracy,
            "unsup_fraction": self.unsup_fraction,
            "iteration_time_s": self.iteration_time_s,
            "per_task_offline_s": list(self.per_task_offline_s),
            "unsup_forward_count": self.unsup_forward_count,
            "disk_eviction": self.disk_eviction,
            "disk_path": self.disk_path,
            "config": dataclasses.asdict(self.config_echo),
            "per_task": [dataclasses.asdict(m) for m in self.per_task],
            "offline_phases": [
                {
                    "class_prob": [float(p) for p in rep.class_prob],
                    "requested": rep.requested,
                    "drawn": rep.drawn,
                    "duration_s": rep.duration_s,
                }
                for rep in self.offline_reports
            ],
        }

    def csv_row(self) -> str:
        return ",".join([
            self.variant,
            str(self.seed),
            f"{self.average_accuracy:.6f}",
            f"{self.unsup_fraction:.6f}",
            f"{self.iteration_time_s:.6f}",
        ])


def average_accuracy(acc_matrix: np.ndarray) -> float:
    """Mean of the final row, i.e. end-of-stream accuracy averaged over tasks."""
    matrix = np.asarray(acc_matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError(f"need a nonempty 2-D accuracy matrix, got shape {matrix.shape}")
    final = matrix[-1]
    final = final[np.isfinite(final)]
    if final.size == 0:
        raise ValueError("final accuracy row is empty")
    return float(final.mean())


def evaluate(model: Model, tasks_seen: list[Task], restrict_to_task_classes: bool = True) -> list[float]:
    """Test accuracy per task; argmax restricted to each task's own classes."""
    accs = []
    for task in tasks_seen:
        if not task.test:
            raise EmptyTestSetError(f"task {task.task_id} has no test samples")
        x = np.stack([s.sample.features for s in task.test]).astype(float)
        y = np.array([s.label for s in task.test])
        probs = model.forward_batch(x)
        if restrict_to_task_classes:
            cls = np.array(task.classes)
            pred = cls[np.argmax(probs[:, cls], axis=1)]
        else:
            pred = np.argmax(probs, axis=1)
        accs.append(float(np.mean(pred == y)))
    return accs


def train_task(
    model: Model,
    task: Task,
    mem: MemoryPool | None,
    disk: DiskPool | None,
    sched: ProgressiveSchedule,
    h: Hyperparams,
    rng: np.random.Generator,
    variant: str = "edgehml",
) -> TaskMetrics:
    """Run the online loop for one task and return its counters."""
    metrics = TaskMetrics(
        task_id=task.task_id, iterations=h.iters_per_task, duration_s=0.0,
        unsup_forward_count=0, unsup_first_iter=None, offered=0, admitted=0,
        reservoir_inserts=0,
    )
    if h.iters_per_task == 0:
        return metrics

    labeled = list(task.labeled)
    order = [labeled[int(i)] for i in rng.permutation(len(labeled))]
    task_classes = set(task.classes)
    inserted_ids: set[int] = set()
    ptr = 0
    t0 = time.perf_counter()

    for v in range(1, h.iters_per_task + 1):
        new_batch = [order[(ptr + i) % len(order)] for i in range(h.batch_new)]
        ptr = (ptr + h.batch_new) % len(order)

        if variant == "sft" or mem is None:
            replay_lab, replay_unlab = [], []
        else:
            replay_lab, replay_unlab = mem.sample_replay_batch(
                h.batch_replay, h.batch_replay, rng
            )
        if h.replay_relabel and replay_unlab:
            replay_unlab = _relabel(model, replay_unlab)

        if variant == "edgehml" and task.unlabeled:
            k = min(h.batch_unlabeled, len(task.unlabeled))
            idx = rng.choice(len(task.unlabeled), size=k, replace=False)
            unlab_batch = [task.unlabeled[int(i)] for i in idx]
        else:
            unlab_batch = []

        gamma = sched.gamma(v) if variant == "edgehml" else 0.0
        result = total_loss(model, new_batch, replay_lab, replay_unlab, unlab_batch, gamma, h)
        sgd_step(model, result.grads, h.lr)

        if result.unlab_probs is not None:
            metrics.unsup_forward_count += 1
            if metrics.unsup_first_iter is None:
                metrics.unsup_first_iter = v

        if variant == "edgehml" and unlab_batch and disk is not None:
            if result.unlab_probs is not None:
                probs_mat = result.unlab_probs
            else:
                probs_mat = model.forward_batch(
                    np.stack([s.features for s in unlab_batch]).astype(float)
                )
            for u, p in zip(unlab_batch, probs_mat):
                metrics.offered += 1
                decision = consider(
                    u, p, task_classes, h.tau, h.p_admit, rng,
                    num_classes=model.num_classes,
                )
                if decision.verdict is AdmissionVerdict.ADMITTED:
                    disk.append(decision.sample)
                    metrics.admitted += 1

        if variant != "sft" and mem is not None:
            for s in new_batch:
                if s.sample.id not in inserted_ids:
                    inserted_ids.add(s.sample.id)
                    outcome = mem.insert_labeled(s, rng)
                    if outcome.stored:
                        metrics.reservoir_inserts += 1

    metrics.duration_s = time.perf_counter() - t0
    return metrics


def _relabel(model: Model, replay_unlab: list[PseudoLabeledSample]) -> list[PseudoLabeledSample]:
    """Optional experiment: replace stored pseudo-labels with live predictions."""
    x = np.stack([s.sample.features for s in replay_unlab]).astype(float)
    probs = model.forward_batch(x)
    fresh = probs.argmax(axis=1)
    return [
        PseudoLabeledSample(s.sample, int(c), float(p[c]))
        for s, c, p in zip(replay_unlab, fresh, probs)
    ]


def run_stream(
    stream: TaskStream,
    h: Hyperparams,
    variant: str = "edgehml",
    disk_path: str | None = None,
) -> RunReport:
    """Train across the whole stream and assemble the run report.

    The disk pool file is only created for the full variant; when no path is
    given a temporary file is used and removed afterwards.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    num_tasks = len(stream.tasks)
    h = validate_config(h, (num_tasks, stream.num_classes, stream.feature_dim))
    sched = ProgressiveSchedule.from_hyperparams(h)

    model = Model.init(
        stream.feature_dim, h.hidden_dim, stream.num_classes,
        rng_stream(h.seed, "model-init"),
    )
    mem = MemoryPool(h.mem_capacity) if variant != "sft" else None

    disk = None
    temp_pool = False
    if variant == "edgehml":
        if disk_path is None:
            fd, disk_path = tempfile.mkstemp(suffix=".pool")
            os.close(fd)
            temp_pool = True
        disk = DiskPool.create(disk_path, h.disk_capacity, stream.feature_dim, stream.num_classes)

    acc = np.full((num_tasks, num_tasks), np.nan)
    per_task: list[TaskMetrics] = []
    offline_reports: list[OfflineReport] = []
    iteration_time = 0.0
    try:
        for k, task in enumerate(stream.tasks):
            rng_task = rng_stream(h.seed, f"{variant}/task-{task.task_id}")
            tm = train_task(model, task, mem, disk, sched, h, rng_task, variant)
            per_task.append(tm)
            iteration_time += tm.duration_s

            acc[k, : k + 1] = evaluate(
                model, list(stream.tasks[: k + 1]), h.task_incremental_eval
            )

            if variant == "edgehml" and k < num_tasks - 1:
                rep = run_offline_phase(
                    model, mem, disk, rng_stream(h.seed, f"offline-{k}")
                )
                offline_reports.append(rep)
                iteration_time += rep.duration_s

            if mem is not None:
                assert mem.occupancy <= mem.capacity
            if disk is not None:
                assert int(disk.class_num.sum()) == disk.count
    finally:
        if disk is not None:
            disk.close()
        if temp_pool:
            os.unlink(disk_path)

    if variant == "edgehml" and h.iters_per_task > 0:
        unsup_fraction = sched.unsupervised_fraction()
    else:
        unsup_fraction = 0.0

    return RunReport(
        variant=variant,
        seed=h.seed,
        acc_matrix=acc,
        average_accuracy=average_accuracy(acc),
        unsup_fraction=unsup_fraction,
        iteration_time_s=iteration_time,
        per_task_offline_s=[rep.duration_s for rep in offline_reports],
        unsup_forward_count=sum(m.unsup_forward_count for m in per_task),
        config_echo=h,
        per_task=per_task,
        offline_reports=offline_reports,
        disk_path=None if temp_pool else disk_path,
    )
