"""A small differentiable classifier and the composite training objective.

One-hidden-layer MLP (tanh) with a softmax head, manual backpropagation, and
plain SGD. The objective combines three cross-entropy terms: the current
labeled batch, replay from the memory pool (labeled plus stored-pseudo-label
unlabeled, weighted alpha/beta), and a confidence-masked self-labeling term
whose targets are the model's own argmax treated as constants. When the
schedule weight is exactly zero the self-labeling term is skipped without
performing any forward pass.

Checkpoint format (little-endian): magic "EHMLMODL", version u16, then
feature/hidden/class dims as u16 each, then w1, b1, w2, b2 flattened
row-major as float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    EmptyBatchError,
    FormatError,
    Hyperparams,
    LabeledSample,
    NonFiniteGradientError,
    PseudoLabeledSample,
    Sample,
    ShapeError,
)

MODEL_MAGIC = b"EHMLMODL"
MODEL_VERSION = 1

_LOG_FLOOR = 1e-300


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, model: "Model") -> "Gradients":
        return cls(*(np.zeros_like(p) for p in model.params()))

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def add_scaled(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for mine, theirs in zip(self.params(), other.params()):
            mine += scale * theirs
        return self


@dataclass
class LossBreakdown:
    l_s: float
    l_m: float
    l_u: float
    gamma: float
    total: float


@dataclass
class TotalLossResult:
    breakdown: LossBreakdown
    grads: Gradients
    unlab_probs: np.ndarray | None   # reusable by the admission gate; None if skipped
    confident_count: int


class Model:
    """MLP of shape D -> H -> C with tanh hidden activation and softmax output."""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray):
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        h, d = self.w1.shape
        c = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (c, h) or self.b2.shape != (c,):
            raise ShapeError("inconsistent parameter shapes")

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, num_classes: int,
             rng: np.random.Generator) -> "Model":
        """Gaussian weights scaled by 1/sqrt(fan-in), zero biases."""
        w1 = rng.standard_normal((hidden_dim, feature_dim)) / np.sqrt(feature_dim)
        w2 = rng.standard_normal((num_classes, hidden_dim)) / np.sqrt(hidden_dim)
        return cls(w1, np.zeros(hidden_dim), w2, np.zeros(num_classes))

    @classmethod
    def zeros(cls, feature_dim: int, hidden_dim: int, num_classes: int) -> "Model":
        return cls(
            np.zeros((hidden_dim, feature_dim)), np.zeros(hidden_dim),
            np.zeros((num_classes, hidden_dim)), np.zeros(num_classes),
        )

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class-probability vector for one feature vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.feature_dim,):
            raise ShapeError(f"input must have shape ({self.feature_dim},), got {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self._forward_cached(x)
        return probs

    def _forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities plus the hidden activations needed for backprop."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ShapeError(f"batch must have shape (B, {self.feature_dim}), got {x.shape}")
        hidden = np.tanh(x @ self.w1.T + self.b1)
        logits = hidden @ self.w2.T + self.b2
        logits -= logits.max(axis=1, keepdims=True)
        expz = np.exp(logits)
        probs = expz / expz.sum(axis=1, keepdims=True)
        return probs, hidden

    def _backward(self, x: np.ndarray, hidden: np.ndarray, dlogits: np.ndarray) -> Gradients:
        gw2 = dlogits.T @ hidden
        gb2 = dlogits.sum(axis=0)
        dhidden = dlogits @ self.w2
        dz1 = dhidden * (1.0 - hidden**2)
        gw1 = dz1.T @ x
        gb1 = dz1.sum(axis=0)
        return Gradients(gw1, gb1, gw2, gb2)


def _stack(samples: list[Sample]) -> np.ndarray:
    return np.stack([s.features for s in samples]).astype(float)


def _mean_ce(model: Model, x: np.ndarray, targets: np.ndarray) -> tuple[float, Gradients]:
    """Mean cross-entropy of a batch against integer targets, with gradients."""
    probs, hidden = model._forward_cached(x)
    n = x.shape[0]
    picked = probs[np.arange(n), targets]
    loss = float(-np.log(np.clip(picked, _LOG_FLOOR, None)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return loss, model._backward(x, hidden, dlogits)


def supervised_loss(model: Model, batch: list[LabeledSample]) -> tuple[float, Gradients]:
    if not batch:
        raise EmptyBatchError("supervised loss requires a nonempty batch")
    x = _stack([s.sample for s in batch])
    y = np.array([s.label for s in batch])
    return _mean_ce(model, x, y)


def memory_loss(
    model: Model,
    lab: list[LabeledSample],
    unlab: list[PseudoLabeledSample],
    alpha: float,
    beta: float,
) -> tuple[float, Gradients]:
    """Replay term: alpha * CE(labeled) + beta * CE(unlabeled vs stored labels).

    Either list may be empty and then contributes zero.
    """
    total = 0.0
    grads = Gradients.zeros_like(model)
    if lab:
        l, g = _mean_ce(model, _stack([s.sample for s in lab]), np.array([s.label for s in lab]))
        total += alpha * l
        grads.add_scaled(g, alpha)
    if unlab:
        l, g = _mean_ce(
            model,
            _stack([s.sample for s in unlab]),
            np.array([s.pseudo_label for s in unlab]),
        )
        total += beta * l
        grads.add_scaled(g, beta)
    return total, grads


def _masked_self_ce(
    model: Model, x: np.ndarray, probs: np.ndarray, hidden: np.ndarray, tau: float
) -> tuple[float, Gradients, int]:
    """Confidence-masked CE against the model's own argmax, targets held constant."""
    maxp = probs.max(axis=1)
    mask = maxp >= tau
    n_conf = int(mask.sum())
    if n_conf == 0:
        return 0.0, Gradients.zeros_like(model), 0
    targets = probs.argmax(axis=1)
    loss = float(-np.log(np.clip(maxp[mask], _LOG_FLOOR, None)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(x.shape[0]), targets] -= 1.0
    dlogits *= mask[:, None] / n_conf
    return loss, model._backward(x, hidden, dlogits), n_conf


def unsupervised_loss(
    model: Model, batch: list[Sample], tau: float
) -> tuple[float, Gradients, int]:
    """Self-labeling loss over samples the model is confident about.

    Returns (loss, gradients, confident_count); all zero when no sample
    clears the threshold. No gradient flows through the pseudo-targets.
    """
    if not batch:
        return 0.0, Gradients.zeros_like(model), 0
    x = _stack(batch)
    probs, hidden = model._forward_cached(x)
    return _masked_self_ce(model, x, probs, hidden, tau)


def total_loss(
    model: Model,
    new_batch: list[LabeledSample],
    replay_lab: list[LabeledSample],
    replay_unlab: list[PseudoLabeledSample],
    unlab_batch: list[Sample],
    gamma: float,
    h: Hyperparams,
) -> TotalLossResult:
    """Compose the three loss terms; gamma == 0 skips the unsupervised forward.

    The unlabeled batch's probabilities are returned so the caller can feed
    the same forward pass into the admission gate.
    """
    l_s, grads = supervised_loss(model, new_batch)
    l_m, g_m = memory_loss(model, replay_lab, replay_unlab, h.alpha, h.beta)
    grads.add_scaled(g_m)

    l_u = 0.0
    unlab_probs = None
    confident = 0
    if gamma != 0.0 and unlab_batch:
        x = _stack(unlab_batch)
        unlab_probs, hidden = model._forward_cached(x)
        l_u, g_u, confident = _masked_self_ce(model, x, unlab_probs, hidden, h.tau)
        grads.add_scaled(g_u, gamma)

    total = l_s + l_m + gamma * l_u
    return TotalLossResult(
        LossBreakdown(l_s, l_m, l_u, gamma, total), grads, unlab_probs, confident
    )


def sgd_step(model: Model, grads: Gradients, lr: float) -> Model:
    """In-place update theta <- theta - lr * grad; returns the same model."""
    for p, g in zip(model.params(), grads.params()):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("gradient contains NaN or infinity")
    for p, g in zip(model.params(), grads.params()):
        p -= lr * g
    assert all(np.all(np.isfinite(p)) for p in model.params())
    return model


def save_checkpoint(model: Model, path) -> None:
    header = struct.pack(
        "<8sHHHH", MODEL_MAGIC, MODEL_VERSION,
        model.feature_dim, model.hidden_dim, model.num_classes,
    )
    flat = np.concatenate([p.ravel() for p in model.params()]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"{path}: file too short for a model header")
        magic, version, d, hdim, c = struct.unpack("<8sHHHH", header)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        n_params = hdim * d + hdim + c * hdim + c
        blob = fh.read()
    if len(blob) != 4 * n_params:
        raise FormatError(f"{path}: expected {4 * n_params} parameter bytes, got {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4").astype(float)
    w1, rest = flat[: hdim * d].reshape(hdim, d), flat[hdim * d:]
    b1, rest = rest[:hdim], rest[hdim:]
    w2, b2 = rest[: c * hdim].reshape(c, hdim), rest[c * hdim:]
    return Model(w1, b1, w2, b2)
