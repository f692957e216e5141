"""Progressive weight for the unsupervised objective.

The weight is zero for the first part of each task, follows a cosine ramp
between two iteration thresholds, and stays at its saturated value until the
task ends. Iterations are counted from 1 within every task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import Hyperparams, round_half_up


@dataclass(frozen=True)
class ProgressiveSchedule:
    v1: int
    v2: int
    eta: float = -0.5
    xi: float = 0.5
    total_iters: int = 100

    def __post_init__(self):
        if not 0 <= self.v1 <= self.v2 <= self.total_iters:
            raise ValueError(
                f"need 0 <= v1 <= v2 <= total, got v1={self.v1}, v2={self.v2}, "
                f"total={self.total_iters}"
            )

    @classmethod
    def from_hyperparams(cls, h: Hyperparams) -> "ProgressiveSchedule":
        v = h.iters_per_task
        return cls(
            v1=round_half_up(h.v1_frac * v),
            v2=round_half_up(h.v2_frac * v),
            eta=h.eta,
            xi=h.xi,
            total_iters=v,
        )

    def gamma(self, v: int) -> float:
        """Unsupervised weight at iteration v (zero/ramp/saturated)."""
        if v < self.v1:
            return 0.0
        if v >= self.v2:
            return self.eta * math.cos(math.pi) + self.xi
        return self.eta * math.cos(math.pi * (v - self.v1) / (self.v2 - self.v1)) + self.xi

    def unsupervised_fraction(self) -> float:
        """Share of iterations on which the unsupervised term is evaluated."""
        if self.total_iters <= 0:
            raise ValueError("total_iters must be positive")
        return (self.total_iters - self.v1) / self.total_iters
