"""RAM-tier replay pool.

A fixed number of slots shared by two regions: labeled samples managed by
reservoir sampling (uniform inclusion over everything ever offered) and an
unlabeled region that is wholly replaced by each between-task exchange.
Labeled occupancy always wins; a colliding insert evicts a random unlabeled
entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CapacityError, LabeledSample, PseudoLabeledSample


@dataclass(frozen=True)
class InsertOutcome:
    stored: bool
    slot: int | None = None


class MemoryPool:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise CapacityError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.labeled: list[LabeledSample] = []
        self.unlabeled: list[PseudoLabeledSample] = []
        self.seen_labeled = 0

    @property
    def occupancy(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def insert_labeled(self, s: LabeledSample, rng: np.random.Generator) -> InsertOutcome:
        """Offer one labeled sample to the reservoir.

        While the labeled region has room the sample is stored unconditionally,
        evicting a uniformly random unlabeled entry if the pool is packed.
        Once the labeled region fills the whole pool, the n-th offer replaces a
        uniformly random labeled slot with probability capacity/n.
        """
        self.seen_labeled += 1
        if len(self.labeled) < self.capacity:
            if self.occupancy >= self.capacity:
                victim = int(rng.integers(len(self.unlabeled)))
                self.unlabeled.pop(victim)
            self.labeled.append(s)
            return InsertOutcome(True, len(self.labeled) - 1)
        # One draw decides both acceptance (j < capacity) and the victim slot.
        j = int(rng.integers(self.seen_labeled))
        if j < self.capacity:
            self.labeled[j] = s
            return InsertOutcome(True, j)
        return InsertOutcome(False)

    def refill_unlabeled(self, samples: list[PseudoLabeledSample]) -> int:
        """Replace the whole unlabeled region; the caller sizes the request."""
        free = self.capacity - len(self.labeled)
        if len(samples) > free:
            raise CapacityError(
                f"refill of {len(samples)} exceeds free capacity {free} "
                f"({len(self.labeled)} labeled of {self.capacity} slots)"
            )
        self.unlabeled = list(samples)
        return len(samples)

    def sample_replay_batch(
        self, k_lab: int, k_unlab: int, rng: np.random.Generator
    ) -> tuple[list[LabeledSample], list[PseudoLabeledSample]]:
        """Uniform draws without replacement from each region; pool unchanged."""
        return _draw(self.labeled, k_lab, rng), _draw(self.unlabeled, k_unlab, rng)


def _draw(region: list, k: int, rng: np.random.Generator) -> list:
    n = len(region)
    if k <= 0 or n == 0:
        return []
    idx = rng.choice(n, size=min(k, n), replace=False)
    return [region[int(i)] for i in idx]
