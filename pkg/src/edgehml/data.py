"""Task-stream construction.

Synthetic streams place one isotropic unit-variance Gaussian cluster per class,
with means in seeded random directions at a configurable radius, and partition
the classes into tasks in seeded random order. The few labeled samples per
class are also kept in the unlabeled set, so the unlabeled stream is a superset
of the labeled one. File-based streams read a plain-text feature table and are
split the same way.

Feature file format: a header line "C D N" (class count, feature dim, record
count) followed by N lines of "label f_1 ... f_D", whitespace separated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    FormatError,
    InsufficientDataError,
    LabeledSample,
    Sample,
    SpecError,
    Task,
    TaskStream,
    rng_stream,
)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    feature_dim: int = 16
    tasks: int = 5
    classes_per_task: int = 2
    labels_per_class: int = 5
    unlabeled_per_class: int = 500
    test_per_class: int = 100
    cluster_separation: float = 3.0
    seed: int = 0


SYNTH_FIELDS = (
    "num_classes", "feature_dim", "tasks", "classes_per_task", "labels_per_class",
    "unlabeled_per_class", "test_per_class", "cluster_separation",
)


def synth_stream(spec: SynthSpec) -> TaskStream:
    """Deterministic Gaussian-cluster stream for the given spec."""
    if spec.tasks < 1 or spec.classes_per_task < 1:
        raise SpecError("tasks and classes_per_task must be >= 1")
    if spec.tasks * spec.classes_per_task > spec.num_classes:
        raise SpecError(
            f"{spec.tasks} tasks x {spec.classes_per_task} classes exceed "
            f"{spec.num_classes} available classes"
        )
    if spec.labels_per_class < 1:
        raise SpecError("labels_per_class must be >= 1")
    if spec.labels_per_class > spec.unlabeled_per_class:
        raise SpecError("labels_per_class cannot exceed unlabeled_per_class")
    if spec.test_per_class < 1:
        raise SpecError("test_per_class must be >= 1")
    if not spec.cluster_separation > 0:
        raise SpecError("cluster_separation must be positive")
    if spec.feature_dim < 1:
        raise SpecError("feature_dim must be >= 1")

    rng = rng_stream(spec.seed, "synth")
    dirs = rng.standard_normal((spec.num_classes, spec.feature_dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = spec.cluster_separation * dirs / norms

    next_id = 0
    per_class_unlabeled: list[list[Sample]] = []
    per_class_labeled: list[list[LabeledSample]] = []
    per_class_test: list[list[LabeledSample]] = []
    for c in range(spec.num_classes):
        train = means[c] + rng.standard_normal((spec.unlabeled_per_class, spec.feature_dim))
        test = means[c] + rng.standard_normal((spec.test_per_class, spec.feature_dim))
        unlabeled = []
        for row in train:
            unlabeled.append(Sample(next_id, row))
            next_id += 1
        labeled = [LabeledSample(s, c) for s in unlabeled[: spec.labels_per_class]]
        test_samples = []
        for row in test:
            test_samples.append(LabeledSample(Sample(next_id, row), c))
            next_id += 1
        per_class_unlabeled.append(unlabeled)
        per_class_labeled.append(labeled)
        per_class_test.append(test_samples)

    order = rng.permutation(spec.num_classes)
    tasks = []
    for t in range(spec.tasks):
        classes = sorted(int(c) for c in order[t * spec.classes_per_task:(t + 1) * spec.classes_per_task])
        labeled = [s for c in classes for s in per_class_labeled[c]]
        unlabeled = [s for c in classes for s in per_class_unlabeled[c]]
        test = [s for c in classes for s in per_class_test[c]]
        mix = rng.permutation(len(unlabeled))
        tasks.append(Task(
            task_id=t,
            classes=tuple(classes),
            labeled=tuple(labeled),
            unlabeled=tuple(unlabeled[i] for i in mix),
            test=tuple(test),
        ))
    return TaskStream(tuple(tasks), spec.num_classes, spec.feature_dim)


def load_feature_dataset(path) -> tuple[list[LabeledSample], int, int]:
    """Parse a feature file into labeled samples plus its (C, D) header."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: missing header line")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"{path}:1: header must be 'C D N', got {lines[0]!r}")
    try:
        num_classes, dim, n = (int(v) for v in head)
    except ValueError:
        raise FormatError(f"{path}:1: header fields must be integers") from None
    if num_classes < 1 or dim < 1 or n < 0:
        raise FormatError(f"{path}:1: header values out of range")
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != n:
        raise FormatError(f"{path}: header promises {n} records, found {len(body)}")

    samples = []
    for i, line in enumerate(body):
        lineno = i + 2
        parts = line.split()
        if len(parts) != 1 + dim:
            raise FormatError(
                f"{path}:{lineno}: expected label plus {dim} features, got {len(parts)} fields"
            )
        try:
            label = int(parts[0])
            feats = np.array([float(v) for v in parts[1:]], dtype=np.float32)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
        if not 0 <= label < num_classes:
            raise FormatError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
        if not np.all(np.isfinite(feats)):
            raise FormatError(f"{path}:{lineno}: non-finite feature value")
        samples.append(LabeledSample(Sample(i, feats), label))
    return samples, num_classes, dim


def save_feature_dataset(path, samples: list[LabeledSample], num_classes: int, dim: int) -> None:
    """Write the documented text format; float32 values round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{num_classes} {dim} {len(samples)}\n")
        for s in samples:
            feats = " ".join(repr(float(v)) for v in s.sample.features)
            fh.write(f"{s.label} {feats}\n")


def split_tasks(
    dataset: tuple[list[LabeledSample], int, int],
    tasks: int,
    classes_per_task: int,
    labels_per_class: int,
    test_fraction: float,
    seed: int,
) -> TaskStream:
    """Partition a labeled dataset into a disjoint-class task stream.

    Per class, a seeded shuffle splits off a held-out test fraction; of the
    remainder, labels_per_class samples keep their labels and every remaining
    sample (including those) joins the unlabeled set.
    """
    samples, num_classes, dim = dataset
    if tasks < 1 or classes_per_task < 1:
        raise SpecError("tasks and classes_per_task must be >= 1")
    if tasks * classes_per_task > num_classes:
        raise SpecError(
            f"{tasks} tasks x {classes_per_task} classes exceed {num_classes} classes"
        )
    if not 0.0 < test_fraction < 1.0:
        raise SpecError(f"test_fraction must be in (0, 1), got {test_fraction}")

    by_class: dict[int, list[LabeledSample]] = {c: [] for c in range(num_classes)}
    for s in samples:
        by_class[s.label].append(s)

    rng = rng_stream(seed, "split")
    order = rng.permutation(num_classes)
    assignment = [
        sorted(int(c) for c in order[t * classes_per_task:(t + 1) * classes_per_task])
        for t in range(tasks)
    ]

    test_by_class: dict[int, list[LabeledSample]] = {}
    labeled_by_class: dict[int, list[LabeledSample]] = {}
    unlabeled_by_class: dict[int, list[Sample]] = {}
    for classes in assignment:
        for c in classes:
            pool = by_class[c]
            n_test = int(round(test_fraction * len(pool)))
            if n_test < 1 or len(pool) - n_test < labels_per_class:
                raise InsufficientDataError(
                    f"class {c}: {len(pool)} samples cannot supply a test split of "
                    f"{n_test} plus {labels_per_class} labels"
                )
            perm = rng.permutation(len(pool))
            shuffled = [pool[int(i)] for i in perm]
            test_by_class[c] = shuffled[:n_test]
            train = shuffled[n_test:]
            labeled_by_class[c] = train[:labels_per_class]
            unlabeled_by_class[c] = [s.sample for s in train]

    out = []
    for t, classes in enumerate(assignment):
        unlabeled = [s for c in classes for s in unlabeled_by_class[c]]
        mix = rng.permutation(len(unlabeled))
        out.append(Task(
            task_id=t,
            classes=tuple(classes),
            labeled=tuple(s for c in classes for s in labeled_by_class[c]),
            unlabeled=tuple(unlabeled[int(i)] for i in mix),
            test=tuple(s for c in classes for s in test_by_class[c]),
        ))
    return TaskStream(tuple(out), num_classes, dim)
