"""Clipped super-fine-tuning: a two-phase cyclic LR schedule plus per-batch
gradient clipping, run on the aggregator's small clean set after training.

The schedule is a linear sawtooth. Phase 1 cycles peak at ``lr_max1``, phase
2 cycles at ``lr_max2``, and every cycle decays linearly down to ``lr_base``
over ``cycle_length`` epochs. The final model interpolates between the input
weights and the fine-tuned weights with weight ``gamma`` (1 = plain
fine-tuned weights).
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import Dataset
from .errors import ConfigurationError, InputError
from .model import WeightVector, _sgd_epoch
from .seeding import stream


@dataclass(frozen=True)
class CsftConfig:
    lr_base: float = 3e-4
    lr_max1: float = 0.1
    lr_max2: float = 1e-3
    total_epochs: int = 100
    cycle_length: int = 10
    phase1_fraction: float = 0.5
    grad_clip: float | None = 2.0
    gamma: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_base <= self.lr_max2 <= self.lr_max1:
            raise ConfigurationError("need lr_max1 >= lr_max2 >= lr_base > 0")
        if self.cycle_length < 2:
            raise ConfigurationError("cycle_length must be >= 2")
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be >= 1")
        if not 0.0 < self.phase1_fraction < 1.0:
            raise ConfigurationError("phase1_fraction must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be > 0 when set")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    @property
    def phase1_epochs(self) -> int:
        return int(round(self.phase1_fraction * self.total_epochs))


def schedule_lr(epoch: int, cfg: CsftConfig) -> float:
    """Learning rate for one fine-tuning epoch.

    Exact peak at every cycle start, exact ``lr_base`` at every cycle end;
    linear in between. Cycles restart at the phase boundary.
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    phase1 = cfg.phase1_epochs
    if epoch < phase1:
        peak, position = cfg.lr_max1, epoch % cfg.cycle_length
    else:
        peak, position = cfg.lr_max2, (epoch - phase1) % cfg.cycle_length
    last = cfg.cycle_length - 1
    if position == 0:
        return peak
    if position == last:
        return cfg.lr_base
    return peak + (cfg.lr_base - peak) * (position / last)


def csft(w: WeightVector, f: Dataset, cfg: CsftConfig) -> WeightVector:
    """Fine-tune w on the clean set f under the cyclic schedule.

    Each epoch runs shuffled mini-batch SGD at that epoch's scheduled rate,
    clipping every batch gradient at ``cfg.grad_clip``. The epoch shuffle
    stream is the same labeled stream local training uses, so a constant
    schedule reproduces plain SGD fine-tuning exactly.
    """
    if len(f) == 0:
        raise InputError("fine-tuning dataset is empty")
    if cfg.gamma == 0.0:
        return w
    values = w.values.copy()
    for epoch in range(cfg.total_epochs):
        _sgd_epoch(
            values,
            w.layout,
            f.features,
            f.labels,
            schedule_lr(epoch, cfg),
            cfg.batch_size,
            cfg.grad_clip,
            stream(cfg.seed, "shuffle", epoch),
        )
    if cfg.gamma == 1.0:
        return w.with_values(values)
    return w.with_values((1.0 - cfg.gamma) * w.values + cfg.gamma * values)
