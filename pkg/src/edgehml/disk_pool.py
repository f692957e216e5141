"""Disk-tier replay pool.

Online phase: unlabeled samples pass a confidence gate, a target-class check,
and an admission coin; admitted records are appended to a fixed-size ring file
(FIFO eviction once full). A RAM index maps each slot to its file offset and
pseudo-label, and per-class record counts are kept alongside, so the online
phase never reads the file. Records are only read back during the between-task
exchange.

File layout (little-endian):
    header, 32 bytes: magic "EHMLPOOL", version u16, feature dim u16,
        capacity u32, count u32, write_cursor u32, 8 reserved bytes
    record, 16 + 4*D bytes at offset 32 + slot*record_size:
        sample id u64, pseudo_label u32, confidence f32, features D*f32

The header's count/cursor are rewritten on flush (once per offline phase),
not on every append; recovery via rebuild_index is therefore best-effort up
to the last flush.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    FormatError,
    PseudoLabeledSample,
    Sample,
    ShapeError,
)

MAGIC = b"EHMLPOOL"
VERSION = 1
HEADER_SIZE = 32
_HEADER_FMT = "<8sHHIII8x"


class AdmissionVerdict(enum.Enum):
    ADMITTED = "admitted"
    LOW_CONFIDENCE = "low_confidence"
    OUT_OF_TASK = "out_of_task"
    COIN = "coin"


@dataclass(frozen=True)
class AdmissionDecision:
    verdict: AdmissionVerdict
    sample: PseudoLabeledSample | None = None


def consider(
    u: Sample,
    probs: np.ndarray,
    task_classes: set[int],
    tau: float,
    p_admit: float,
    rng: np.random.Generator,
    num_classes: int,
) -> AdmissionDecision:
    """Decide whether one unlabeled sample enters the disk pool.

    Rejections are checked in order: confidence below tau, predicted class
    outside the current task, then the admission coin. Argmax ties break to
    the lowest class index. The coin is only flipped for candidates that pass
    both checks, so the decision is deterministic given the rng substream state.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (num_classes,):
        raise ShapeError(f"probs must have shape ({num_classes},), got {probs.shape}")
    pseudo = int(np.argmax(probs))
    conf = float(probs[pseudo])
    if conf < tau:
        return AdmissionDecision(AdmissionVerdict.LOW_CONFIDENCE)
    if pseudo not in task_classes:
        return AdmissionDecision(AdmissionVerdict.OUT_OF_TASK)
    if rng.random() >= p_admit:
        return AdmissionDecision(AdmissionVerdict.COIN)
    return AdmissionDecision(
        AdmissionVerdict.ADMITTED, PseudoLabeledSample(u, pseudo, conf)
    )


class DiskPool:
    """Ring file of pseudo-labeled records with a RAM offset index."""

    def __init__(self, *, path, capacity, feature_dim, num_classes, file, count, write_cursor, writable):
        self.path = path
        self.capacity = capacity
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.count = count
        self.write_cursor = write_cursor
        self.record_size = 16 + 4 * feature_dim
        self.index: dict[int, tuple[int, int]] = {}
        self.class_num = np.zeros(num_classes, dtype=np.int64)
        self._file = file
        self._writable = writable

    @classmethod
    def create(cls, path, capacity: int, feature_dim: int, num_classes: int) -> "DiskPool":
        """Start a fresh pool file, truncating anything already at path."""
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if feature_dim < 1 or feature_dim > 0xFFFF:
            raise ValueError(f"feature_dim must be in [1, 65535], got {feature_dim}")
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        fh = open(path, "w+b")
        pool = cls(
            path=path, capacity=capacity, feature_dim=feature_dim,
            num_classes=num_classes, file=fh, count=0, write_cursor=0, writable=True,
        )
        pool.flush()
        return pool

    @classmethod
    def rebuild_index(cls, path, num_classes: int | None = None, writable: bool = True) -> "DiskPool":
        """Reopen a pool file and reconstruct index and class counts by scanning.

        Capacity, count, and cursor come from the header (they are persisted
        there at flush time). When num_classes is omitted it is inferred as
        max(pseudo_label) + 1 over the scanned records.
        """
        fh = open(path, "r+b" if writable else "rb")
        try:
            header = fh.read(HEADER_SIZE)
            if len(header) < HEADER_SIZE:
                raise FormatError(f"{path}: file too short for a pool header")
            magic, version, dim, capacity, count, cursor = struct.unpack(_HEADER_FMT, header)
            if magic != MAGIC:
                raise FormatError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise FormatError(f"{path}: unsupported version {version}")
            if capacity < 1 or dim < 1:
                raise FormatError(f"{path}: invalid header (capacity={capacity}, dim={dim})")
            if count > capacity:
                raise FormatError(f"{path}: count {count} exceeds capacity {capacity}")
            if count < capacity and cursor != count:
                raise FormatError(f"{path}: cursor {cursor} inconsistent with count {count}")
            if count == capacity and cursor >= capacity:
                raise FormatError(f"{path}: cursor {cursor} out of range")

            record_size = 16 + 4 * dim
            fh.seek(0, os.SEEK_END)
            if fh.tell() < HEADER_SIZE + count * record_size:
                raise FormatError(f"{path}: file truncated ({count} records expected)")

            labels = []
            records = []
            for slot in range(count):
                offset = HEADER_SIZE + slot * record_size
                fh.seek(offset)
                blob = fh.read(record_size)
                try:
                    _, label, _ = struct.unpack_from("<QIf", blob)
                except struct.error as exc:
                    raise FormatError(f"{path}: record {slot} undecodable: {exc}") from exc
                labels.append(label)
                records.append((slot, offset, label))

            inferred = (max(labels) + 1) if labels else 1
            if num_classes is None:
                num_classes = inferred
            elif labels and inferred > num_classes:
                raise FormatError(
                    f"{path}: record label {inferred - 1} outside [0, {num_classes})"
                )
            pool = cls(
                path=path, capacity=capacity, feature_dim=dim, num_classes=num_classes,
                file=fh, count=count, write_cursor=cursor, writable=writable,
            )
            for slot, offset, label in records:
                pool.index[slot] = (offset, label)
                pool.class_num[label] += 1
            return pool
        except Exception:
            fh.close()
            raise

    def append(self, ps: PseudoLabeledSample) -> int:
        """Write one record at the cursor, overwriting the oldest when full."""
        feats = ps.sample.features
        if feats.shape != (self.feature_dim,):
            raise ShapeError(
                f"features must have shape ({self.feature_dim},), got {feats.shape}"
            )
        if not 0 <= ps.pseudo_label < self.num_classes:
            raise ShapeError(
                f"pseudo_label {ps.pseudo_label} outside [0, {self.num_classes})"
            )
        slot = self.write_cursor
        offset = HEADER_SIZE + slot * self.record_size
        payload = struct.pack("<QIf", ps.sample.id, ps.pseudo_label, ps.confidence)
        payload += feats.astype("<f4", copy=False).tobytes()
        # State is only updated after the write succeeds.
        self._file.seek(offset)
        self._file.write(payload)
        if self.count == self.capacity:
            _, old_label = self.index[slot]
            self.class_num[old_label] -= 1
        else:
            self.count += 1
        self.index[slot] = (offset, ps.pseudo_label)
        self.class_num[ps.pseudo_label] += 1
        self.write_cursor = (slot + 1) % self.capacity
        return slot

    def read_slot(self, slot: int) -> PseudoLabeledSample:
        offset, _ = self.index[slot]
        self._file.seek(offset)
        blob = self._file.read(self.record_size)
        if len(blob) < self.record_size:
            raise FormatError(f"{self.path}: short read at slot {slot}")
        sample_id, label, conf = struct.unpack_from("<QIf", blob)
        feats = np.frombuffer(blob, dtype="<f4", offset=16, count=self.feature_dim)
        return PseudoLabeledSample(Sample(sample_id, feats.copy()), label, float(conf))

    def sample_by_class_prob(
        self, class_prob: np.ndarray, k: int, rng: np.random.Generator
    ) -> list[PseudoLabeledSample]:
        """Draw up to k records without replacement within this call.

        Each draw picks a class by class_prob, renormalized over classes that
        still have unused records, then a uniform unused record of that class.
        Stops early when every positive-probability class is exhausted.
        """
        class_prob = np.asarray(class_prob, dtype=float)
        if class_prob.shape != (self.num_classes,):
            raise ShapeError(
                f"class_prob must have shape ({self.num_classes},), got {class_prob.shape}"
            )
        remaining: dict[int, list[int]] = {}
        for slot in sorted(self.index):
            _, label = self.index[slot]
            remaining.setdefault(label, []).append(slot)

        out: list[PseudoLabeledSample] = []
        for _ in range(max(k, 0)):
            weights = np.where(
                [bool(remaining.get(c)) for c in range(self.num_classes)], class_prob, 0.0
            )
            total = weights.sum()
            if total <= 0.0:
                break
            c = int(rng.choice(self.num_classes, p=weights / total))
            slots = remaining[c]
            i = int(rng.integers(len(slots)))
            slots[i], slots[-1] = slots[-1], slots[i]
            out.append(self.read_slot(slots.pop()))
        return out

    def flush(self):
        """Persist the header (count, cursor) and sync file contents."""
        header = struct.pack(
            _HEADER_FMT, MAGIC, VERSION, self.feature_dim,
            self.capacity, self.count, self.write_cursor,
        )
        self._file.seek(0)
        self._file.write(header)
        self._file.flush()
        os.fsync(self._file.fileno())

    def close(self):
        if self._file.closed:
            return
        if self._writable:
            self.flush()
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def snapshot(self) -> tuple:
        """Hashable summary of the in-memory state, for round-trip checks."""
        return (
            self.count,
            self.write_cursor,
            tuple(self.class_num.tolist()),
            tuple(sorted(self.index.items())),
        )
