"""A small ReLU MLP with exact manual gradients and deterministic SGD.

All parameters live in a single flat float64 vector. The layout metadata
(name, offset, length) alternates weight/bias entries per layer, which is
enough to recover every layer shape: the bias length gives the fan-out and
the weight length divided by it gives the fan-in. Every operation here is a
pure function of its arguments, so concurrent callers are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, InputError
from .seeding import stream

LayoutEntry = tuple[str, int, int]

# Relative slack when comparing a norm against a clipping threshold: a vector
# rescaled exactly onto the threshold sphere can overshoot by a few ulps, and
# without the slack clipping would not be idempotent.
_CLIP_SLACK = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the classifier: input -> hidden layers -> classes."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    num_classes: int = 3
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("hidden widths must be >= 1")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    def layout(self) -> tuple[LayoutEntry, ...]:
        entries: list[LayoutEntry] = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(self.layer_dims()):
            entries.append((f"layer{i}_w", offset, fan_in * fan_out))
            offset += fan_in * fan_out
            entries.append((f"layer{i}_b", offset, fan_out))
            offset += fan_out
        return tuple(entries)

    @property
    def num_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


@dataclass(frozen=True)
class WeightVector:
    """Flat float64 parameter/update vector plus layer-boundary metadata."""

    values: np.ndarray
    layout: tuple[LayoutEntry, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError(f"values must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("weight vector contains non-finite values")
        offset = 0
        for name, off, length in self.layout:
            if off != offset or length < 0:
                raise ConfigurationError(f"layout entry {name!r} breaks contiguity")
            offset += length
        if offset != values.shape[0]:
            raise ConfigurationError(
                f"layout covers {offset} entries but vector has {values.shape[0]}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "WeightVector":
        return WeightVector(values, self.layout)

    def __add__(self, other: "WeightVector") -> "WeightVector":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "WeightVector") -> "WeightVector":
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "WeightVector":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class TrainConfig:
    """Plain mini-batch SGD settings for one client's local training."""

    learning_rate: float
    local_epochs: int = 1
    batch_size: int = 32
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        # learning_rate == 0 is allowed as the documented no-movement case.
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.local_epochs < 1:
            raise ConfigurationError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be > 0 when set")


def _layer_views(values: np.ndarray, layout: tuple[LayoutEntry, ...]):
    """(W, b, w_slice, b_slice) per layer, as views into the flat vector."""
    if len(layout) % 2 != 0:
        raise ConfigurationError("layout must alternate weight/bias entries")
    views = []
    for i in range(0, len(layout), 2):
        _, w_off, w_len = layout[i]
        _, b_off, b_len = layout[i + 1]
        if b_len == 0 or w_len % b_len != 0:
            raise ConfigurationError("bias length does not divide weight length")
        fan_out = b_len
        fan_in = w_len // b_len
        w_slice = slice(w_off, w_off + w_len)
        b_slice = slice(b_off, b_off + b_len)
        views.append((values[w_slice].reshape(fan_in, fan_out), values[b_slice], w_slice, b_slice))
    return views


def init_weights(spec: ModelSpec, seed: int) -> WeightVector:
    """Uniform fan-in-scaled init: every entry ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in))."""
    rng = stream(seed, "init")
    chunks = []
    for fan_in, fan_out in spec.layer_dims():
        limit = np.sqrt(1.0 / fan_in)
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out))
    return WeightVector(np.concatenate(chunks), spec.layout())


def _forward(values: np.ndarray, layout: tuple[LayoutEntry, ...], X: np.ndarray):
    """Returns (per-layer inputs, logits). ReLU on all but the last layer."""
    layers = _layer_views(values, layout)
    if X.shape[1] != layers[0][0].shape[0]:
        raise ConfigurationError(
            f"batch has {X.shape[1]} features, model expects {layers[0][0].shape[0]}"
        )
    acts = [X]
    a = X
    for i, (W, b, _, _) in enumerate(layers):
        z = a @ W + b
        if i < len(layers) - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return acts, z


def _loss_and_grad_flat(values: np.ndarray, layout, X: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradient as a flat array."""
    layers = _layer_views(values, layout)
    num_classes = layers[-1][0].shape[1]
    if y.min() < 0 or y.max() >= num_classes:
        raise ConfigurationError(f"labels must lie in [0, {num_classes})")
    acts, logits = _forward(values, layout, X)

    batch = X.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(batch), y].mean())

    grad = np.zeros_like(values)
    G = np.exp(log_probs)
    G[np.arange(batch), y] -= 1.0
    G /= batch
    for i in reversed(range(len(layers))):
        W, _, w_slice, b_slice = layers[i]
        grad[w_slice] = (acts[i].T @ G).ravel()
        grad[b_slice] = G.sum(axis=0)
        if i > 0:
            G = (G @ W.T) * (acts[i] > 0)
    return loss, grad


def loss_and_grad(w: WeightVector, batch: Dataset) -> tuple[float, WeightVector]:
    """Mean softmax cross-entropy over the batch plus the exact gradient.

    Raises:
        InputError: empty batch.
        ConfigurationError: feature or label dimensions do not match the layout.
    """
    if len(batch) == 0:
        raise InputError("batch is empty")
    loss, grad = _loss_and_grad_flat(w.values, w.layout, batch.features, batch.labels)
    return loss, w.with_values(grad)


def _clip_flat(g: np.ndarray, threshold: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if norm <= threshold * (1.0 + _CLIP_SLACK):
        return g
    return g * (threshold / norm)


def clip_gradient(g: WeightVector, threshold: float) -> WeightVector:
    """Rescale g onto the L2 ball of the given radius; below it, g is returned as-is."""
    if threshold <= 0:
        raise ConfigurationError("threshold must be > 0")
    clipped = _clip_flat(g.values, threshold)
    return g if clipped is g.values else g.with_values(clipped)


def _sgd_epoch(
    values: np.ndarray,
    layout,
    X: np.ndarray,
    y: np.ndarray,
    learning_rate: float,
    batch_size: int,
    grad_clip: float | None,
    rng: np.random.Generator,
) -> None:
    """One shuffled pass over (X, y), updating `values` in place."""
    perm = rng.permutation(X.shape[0])
    for start in range(0, len(perm), batch_size):
        idx = perm[start : start + batch_size]
        _, grad = _loss_and_grad_flat(values, layout, X[idx], y[idx])
        if grad_clip is not None:
            grad = _clip_flat(grad, grad_clip)
        values -= learning_rate * grad


def local_train(w: WeightVector, d: Dataset, cfg: TrainConfig) -> WeightVector:
    """The training function T: returns the update u = w_final - w.

    Runs ``cfg.local_epochs`` epochs of shuffled mini-batch SGD with optional
    per-batch gradient clipping. The shuffle stream for epoch e derives from
    (cfg.seed, "shuffle", e), so the result is a pure function of
    (w, d, cfg).
    """
    if len(d) == 0:
        raise InputError("training dataset is empty")
    values = w.values.copy()
    for epoch in range(cfg.local_epochs):
        _sgd_epoch(
            values,
            w.layout,
            d.features,
            d.labels,
            cfg.learning_rate,
            cfg.batch_size,
            cfg.grad_clip,
            stream(cfg.seed, "shuffle", epoch),
        )
    return w.with_values(values - w.values)


def evaluate(w: WeightVector, d: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label (ties -> lowest class)."""
    if len(d) == 0:
        raise InputError("evaluation dataset is empty")
    _, logits = _forward(w.values, w.layout, d.features)
    return float((np.argmax(logits, axis=1) == d.labels).mean())
