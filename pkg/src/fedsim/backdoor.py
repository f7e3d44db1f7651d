"""Trigger patterns, dataset poisoning, trigger splitting, and ASR measurement."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import InputError
from .model import WeightVector, _forward
from .seeding import stream


@dataclass(frozen=True)
class TriggerSpec:
    """A feature-space trigger.

    ``mask`` weights each feature's trigger strength and ``pattern`` holds the
    trigger values; applying the trigger blends the pattern into the input with
    weight ``blend_alpha * mask``. A patch trigger uses a 0/1 mask and
    blend_alpha 1 (hard overwrite on its footprint).
    """

    kind: str  # "patch" | "blended"
    mask: np.ndarray
    pattern: np.ndarray
    target_label: int
    blend_alpha: float = 1.0

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        pattern = np.asarray(self.pattern, dtype=np.float64)
        if self.kind not in ("patch", "blended"):
            raise InputError(f"unknown trigger kind {self.kind!r}")
        if mask.shape != pattern.shape or mask.ndim != 1:
            raise InputError("mask and pattern must be 1-D vectors of equal length")
        if mask.min() < 0.0 or mask.max() > 1.0:
            raise InputError("mask entries must lie in [0, 1]")
        if pattern.min() < 0.0 or pattern.max() > 1.0:
            raise InputError("pattern entries must lie in [0, 1]")
        if not 0.0 < self.blend_alpha <= 1.0:
            raise InputError("blend_alpha must lie in (0, 1]")
        if self.kind == "patch":
            if not np.all(np.isin(mask, (0.0, 1.0))):
                raise InputError("patch triggers need a 0/1 mask")
            if self.blend_alpha != 1.0:
                raise InputError("patch triggers use blend_alpha = 1")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pattern", pattern)

    @property
    def footprint(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def patch_trigger(
    dim: int, target_label: int, size: int = 4, start: int = 0, value: float = 1.0
) -> TriggerSpec:
    """A contiguous hard patch of `size` features starting at `start`."""
    if not 0 <= start <= start + size <= dim:
        raise InputError("patch footprint exceeds the feature range")
    mask = np.zeros(dim)
    mask[start : start + size] = 1.0
    pattern = np.zeros(dim)
    pattern[start : start + size] = value
    return TriggerSpec("patch", mask, pattern, target_label)


def blended_trigger(
    dim: int, target_label: int, blend_alpha: float = 0.2, pattern_seed: int = 0
) -> TriggerSpec:
    """A full-image blended trigger with a seeded pseudo-random pattern."""
    pattern = stream(pattern_seed, "trigger_pattern").uniform(0.0, 1.0, size=dim)
    return TriggerSpec("blended", np.ones(dim), pattern, target_label, blend_alpha)


def apply_trigger(x: np.ndarray, t: TriggerSpec) -> np.ndarray:
    """Blend the trigger into one feature vector: (1 - a*mask)*x + a*mask*pattern.

    The result is clamped to [0, 1]; the convex blend only leaves the unit
    box by rounding error, but downstream datasets require the bound exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != t.mask.shape:
        raise InputError(f"input has {x.shape[0]} features, trigger expects {t.mask.shape[0]}")
    return _apply_trigger_rows(x, t)


def _apply_trigger_rows(X: np.ndarray, t: TriggerSpec) -> np.ndarray:
    weight = t.blend_alpha * t.mask
    return np.clip((1.0 - weight) * X + weight * t.pattern, 0.0, 1.0)


def poison_dataset(d: Dataset, t: TriggerSpec, poison_fraction: float, seed: int) -> Dataset:
    """Copy of d with a random round(fraction*|d|) subset triggered and relabeled."""
    if len(d) == 0:
        raise InputError("cannot poison an empty dataset")
    if not 0.0 < poison_fraction <= 1.0:
        raise InputError("poison_fraction must lie in (0, 1]")
    count = int(round(poison_fraction * len(d)))
    chosen = stream(seed, "poison").permutation(len(d))[:count]
    features = d.features.copy()
    labels = d.labels.copy()
    features[chosen] = _apply_trigger_rows(features[chosen], t)
    labels[chosen] = t.target_label
    return Dataset(features, labels)


def asr(w: WeightVector, d_clean: Dataset, t: TriggerSpec) -> float:
    """Attack success rate: triggered non-target samples classified as the target.

    Samples whose true label already equals the target are excluded so a
    constant-target model cannot inflate the rate for free.
    """
    eligible = d_clean.labels != t.target_label
    if not np.any(eligible):
        raise InputError("no samples with a non-target label to measure ASR on")
    X = _apply_trigger_rows(d_clean.features[eligible], t)
    _, logits = _forward(w.values, w.layout, X)
    return float((np.argmax(logits, axis=1) == t.target_label).mean())


def split_trigger_dba(t: TriggerSpec, m: int) -> list[TriggerSpec]:
    """Partition a patch trigger's footprint into m disjoint sub-triggers.

    Each sub-trigger keeps the pattern and target; applying all m in sequence
    reproduces the full trigger.
    """
    if t.kind != "patch":
        raise InputError("only patch triggers can be split")
    if m < 1:
        raise InputError("m must be >= 1")
    footprint = t.footprint
    if len(footprint) < m:
        raise InputError(f"footprint has {len(footprint)} features, cannot split into {m}")
    if m == 1:
        return [t]
    subs = []
    for part in np.array_split(footprint, m):
        mask = np.zeros_like(t.mask)
        mask[part] = 1.0
        subs.append(replace(t, mask=mask))
    return subs
