"""The federated training loop and experiment driver.

Each round runs three phases: benign clients train locally on their clean
shards; the adversary, holding a snapshot of every benign update and the
aggregator's configuration, crafts the malicious submissions; the server
aggregates and adds the result to the global model. Per-round metrics
(accuracy, ASR, the crafting alpha, the benign/malicious update gap delta,
and Krum's selection) form the trace.

Determinism contract: every stochastic choice derives from
``master_seed`` through labeled streams (see seeding.py), so two runs of an
equal config produce bitwise-identical results, and benign clients may train
concurrently without changing anything.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .aggregation import AggregatorConfig, ClientUpdate, aggregate
from .attacks import (
    AdaptiveKrumParams,
    AdversaryOracle,
    adaptive_krum,
    adaptive_mom,
    adaptive_norm,
    constrain_and_scale,
    malicious_local_updates,
    neurotoxin_mask,
    replacement,
)
from .backdoor import TriggerSpec, asr, blended_trigger, patch_trigger, poison_dataset, split_trigger_dba
from .csft import CsftConfig, csft
from .data import Dataset, gen_synthetic, load_idx, partition_dirichlet, partition_iid
from .errors import ConfigurationError, CraftFailureError
from .model import ModelSpec, TrainConfig, WeightVector, evaluate, init_weights, local_train
from .seeding import derive_seed

ATTACK_KINDS = (
    "none",
    "adaptive_krum",
    "adaptive_norm",
    "adaptive_mom",
    "replacement",
    "constrain_and_scale",
    "neurotoxin",
    "dba",
)

SWEEP_AXES = ("finetune_fraction", "csft_epochs", "norm_threshold", "m", "grad_clip")


@dataclass(frozen=True)
class DataConfig:
    """Dataset source plus partition settings."""

    source: str = "synthetic"  # "synthetic" | "idx"
    num_classes: int = 3
    dim: int = 32
    per_class_train: int = 500
    per_class_val: int = 200
    noise: float = 0.08
    class_separation: float = 1.0
    train_images: str | None = None
    train_labels: str | None = None
    val_images: str | None = None
    val_labels: str | None = None
    partition: str = "iid"  # "iid" | "dirichlet"
    dirichlet_alpha: float = 0.5
    finetune_fraction: float = 0.04


@dataclass(frozen=True)
class TriggerConfig:
    """Serializable trigger description; realized once the feature dim is known."""

    kind: str = "patch"
    target_label: int = 0
    size: int = 4
    start: int = 0
    value: float = 1.0
    blend_alpha: float = 0.2
    pattern_seed: int = 0

    def build(self, dim: int) -> TriggerSpec:
        if self.kind == "patch":
            return patch_trigger(dim, self.target_label, self.size, self.start, self.value)
        if self.kind == "blended":
            return blended_trigger(dim, self.target_label, self.blend_alpha, self.pattern_seed)
        raise ConfigurationError(f"unknown trigger kind {self.kind!r}")


@dataclass(frozen=True)
class AttackConfig:
    """Which crafting strategy malicious clients use, plus its parameters."""

    kind: str = "none"
    poison_fraction: float = 0.5
    beta: float = 1.5
    use_bisection: bool = False
    bisection_tol: float = 1e-3
    bisection_max_iters: int = 40
    scale_factor: float = 1000.0
    boost: float | None = None  # replacement; defaults to n at runtime
    threshold: float | None = None  # constrain_and_scale / adaptive_norm override
    keep_fraction: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 20
    m: int = 1
    s: int = 20
    total_rounds: int = 30
    master_seed: int = 0
    model: ModelSpec = field(default_factory=lambda: ModelSpec(input_dim=32))
    data: DataConfig = field(default_factory=DataConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    benign_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.2, local_epochs=1)
    )
    malicious_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.2, local_epochs=3)
    )
    csft: CsftConfig | None = None


@dataclass(frozen=True)
class EpochRecord:
    round: int
    accuracy: float
    asr: float
    alpha: float | None = None
    delta: float | None = None
    krum_selected: int | None = None
    selected_is_malicious: bool | None = None


@dataclass(frozen=True)
class RunResult:
    trace: tuple[EpochRecord, ...]
    final_train_acc: float
    final_train_asr: float
    train_attack_success: bool
    ft_acc: float | None = None
    ft_asr: float | None = None
    acc_diff: float | None = None
    ft_attack_success: bool | None = None


class RoundState(NamedTuple):
    round_index: int
    weights: WeightVector
    prev_benign_mean: WeightVector | None


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    results: tuple[RunResult, ...]


def update_gap(benign_mean: WeightVector, malicious_mean: WeightVector) -> float:
    """L2 gap between the mean benign and mean (submitted) malicious updates."""
    return float(np.linalg.norm(benign_mean.values - malicious_mean.values))


def validate_config(cfg: ExperimentConfig) -> None:
    """Structural invariants, with messages naming the violated constraint."""
    if cfg.n < 1:
        raise ConfigurationError("n must be >= 1")
    if cfg.aggregator.rule == "krum" and not 2 * cfg.aggregator.m_assumed + 2 < cfg.n:
        raise ConfigurationError(
            f"krum requires 2m+2 < n, got m_assumed={cfg.aggregator.m_assumed}, n={cfg.n}"
        )
    if not 0 <= cfg.m < cfg.n / 2:
        raise ConfigurationError(f"need a malicious minority: m < n/2, got m={cfg.m}, n={cfg.n}")
    if not 1 <= cfg.s <= cfg.n:
        raise ConfigurationError(f"subset size must satisfy 1 <= s <= n, got s={cfg.s}")
    if cfg.total_rounds < 0:
        raise ConfigurationError("total_rounds must be >= 0")
    if cfg.aggregator.rule in ("mom", "robust_mom") and cfg.aggregator.num_groups > cfg.s:
        raise ConfigurationError(
            f"{cfg.aggregator.rule} num_groups={cfg.aggregator.num_groups} exceeds s={cfg.s}"
        )
    if cfg.attack.kind not in ATTACK_KINDS:
        raise ConfigurationError(f"unknown attack kind {cfg.attack.kind!r}")
    if cfg.m == 0 and cfg.attack.kind != "none":
        raise ConfigurationError("an attack needs m >= 1 malicious clients")
    if cfg.attack.kind == "adaptive_krum" and cfg.aggregator.rule != "krum":
        raise ConfigurationError("adaptive_krum attacks a krum aggregator")
    if cfg.attack.kind in ("adaptive_norm", "constrain_and_scale"):
        if cfg.attack.threshold is None and cfg.aggregator.rule != "norm_bound":
            raise ConfigurationError(
                f"{cfg.attack.kind} needs a norm_bound aggregator or attack.threshold"
            )
    if cfg.attack.kind == "dba" and cfg.trigger.kind != "patch":
        raise ConfigurationError("dba splits a patch trigger")
    if not 0 <= cfg.trigger.target_label < cfg.model.num_classes:
        raise ConfigurationError("trigger target_label outside the class range")
    if cfg.data.source == "synthetic":
        if cfg.model.input_dim != cfg.data.dim:
            raise ConfigurationError(
                f"model input_dim={cfg.model.input_dim} != data dim={cfg.data.dim}"
            )
        if cfg.model.num_classes != cfg.data.num_classes:
            raise ConfigurationError(
                f"model num_classes={cfg.model.num_classes} != data num_classes={cfg.data.num_classes}"
            )
    elif cfg.data.source == "idx":
        missing = [
            name
            for name in ("train_images", "train_labels", "val_images", "val_labels")
            if getattr(cfg.data, name) is None
        ]
        if missing:
            raise ConfigurationError(f"idx data source needs paths: {', '.join(missing)}")
    else:
        raise ConfigurationError(f"unknown data source {cfg.data.source!r}")
    if cfg.data.partition not in ("iid", "dirichlet"):
        raise ConfigurationError(f"unknown partition {cfg.data.partition!r}")
    if cfg.csft is not None and cfg.data.finetune_fraction <= 0:
        raise ConfigurationError("csft needs finetune_fraction > 0")


def _build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.data.source == "idx":
        train = load_idx(cfg.data.train_images, cfg.data.train_labels)
        val = load_idx(cfg.data.val_images, cfg.data.val_labels)
        if train.num_features != cfg.model.input_dim:
            raise ConfigurationError(
                f"idx data has {train.num_features} features, model expects {cfg.model.input_dim}"
            )
        return train, val
    # One draw covers train and validation so both share the class blobs; the
    # first per_class_train samples of each class block go to training.
    d = cfg.data
    total = gen_synthetic(
        derive_seed(cfg.master_seed, "data"),
        d.num_classes,
        d.dim,
        d.per_class_train + d.per_class_val,
        d.noise,
        d.class_separation,
    )
    block = d.per_class_train + d.per_class_val
    train_idx, val_idx = [], []
    for c in range(d.num_classes):
        start = c * block
        train_idx.extend(range(start, start + d.per_class_train))
        val_idx.extend(range(start + d.per_class_train, start + block))
    return total.subset(np.array(train_idx)), total.subset(np.array(val_idx))


class Experiment:
    """One fully-prepared experiment: datasets, shards, trigger, initial model."""

    def __init__(self, cfg: ExperimentConfig):
        validate_config(cfg)
        self.cfg = cfg
        self.train_data, self.val_data = _build_datasets(cfg)
        seed = cfg.master_seed

        if cfg.data.partition == "iid":
            plan = partition_iid(
                self.train_data, cfg.n, cfg.data.finetune_fraction, derive_seed(seed, "split")
            )
        else:
            plan = partition_dirichlet(
                self.train_data,
                cfg.n,
                cfg.data.dirichlet_alpha,
                cfg.data.finetune_fraction,
                derive_seed(seed, "split"),
            )
        self.shards = [self.train_data.subset(idx) for idx in plan.client_indices]
        self.finetune_set = self.train_data.subset(plan.finetune_indices)

        self.trigger = cfg.trigger.build(self.train_data.num_features)
        self.malicious_ids = frozenset(range(cfg.n - cfg.m, cfg.n))
        if cfg.attack.kind == "dba" and cfg.m > 1:
            client_triggers = split_trigger_dba(self.trigger, cfg.m)
        else:
            client_triggers = [self.trigger] * cfg.m
        self.poisoned_shards = {
            cid: poison_dataset(
                self.shards[cid],
                client_triggers[k],
                cfg.attack.poison_fraction,
                derive_seed(seed, "poison", cid),
            )
            for k, cid in enumerate(sorted(self.malicious_ids))
        }
        self.initial_weights = init_weights(cfg.model, derive_seed(seed, "init"))

    def initial_state(self) -> RoundState:
        return RoundState(0, self.initial_weights, None)

    def _participants(self, round_index: int) -> list[int]:
        cfg = self.cfg
        if cfg.s == cfg.n:
            return list(range(cfg.n))
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "subset", round_index))
        return sorted(int(i) for i in rng.choice(cfg.n, size=cfg.s, replace=False))

    def _benign_updates(
        self, weights: WeightVector, round_index: int, benign_ids: list[int], workers: int
    ) -> list[ClientUpdate]:
        cfg = self.cfg

        def train_one(cid: int) -> ClientUpdate:
            per_client = replace(
                cfg.benign_train, seed=derive_seed(cfg.master_seed, "train", round_index, cid)
            )
            return ClientUpdate(cid, local_train(weights, self.shards[cid], per_client))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(train_one, benign_ids))
        return [train_one(cid) for cid in benign_ids]

    def _craft_submissions(
        self,
        weights: WeightVector,
        round_index: int,
        mal_ids: list[int],
        oracle: AdversaryOracle | None,
        prev_benign_mean: WeightVector | None,
    ) -> tuple[list[ClientUpdate], float | None, WeightVector]:
        """Returns (malicious submissions, alpha if recorded, their mean)."""
        cfg = self.cfg
        attack = cfg.attack
        mal_cfg = replace(
            cfg.malicious_train, seed=derive_seed(cfg.master_seed, "train_mal", round_index)
        )
        local_updates, w_m = malicious_local_updates(
            weights, [self.poisoned_shards[cid] for cid in mal_ids], mal_cfg
        )

        alpha = None
        if attack.kind in ("none", "dba"):
            submissions = list(zip(mal_ids, local_updates))
        elif attack.kind == "neurotoxin":
            if prev_benign_mean is None:
                submissions = list(zip(mal_ids, local_updates))
            else:
                mask = neurotoxin_mask(prev_benign_mean, attack.keep_fraction)
                submissions = [
                    (cid, u.with_values(u.values * mask))
                    for cid, u in zip(mal_ids, local_updates)
                ]
        elif attack.kind == "adaptive_krum":
            params = AdaptiveKrumParams(
                beta=attack.beta,
                use_bisection=attack.use_bisection,
                bisection_tol=attack.bisection_tol,
                bisection_max_iters=attack.bisection_max_iters,
            )
            if oracle is None:
                crafted = w_m
            else:
                try:
                    result = adaptive_krum(oracle, w_m, len(mal_ids), params)
                    crafted, alpha = result.update, result.alpha
                except CraftFailureError:
                    crafted = w_m  # no surviving alpha: submit the raw mean
            submissions = [(cid, crafted) for cid in mal_ids]
        elif attack.kind in ("adaptive_norm", "constrain_and_scale"):
            threshold = attack.threshold
            if threshold is None:
                threshold = cfg.aggregator.threshold
            crafter = adaptive_norm if attack.kind == "adaptive_norm" else constrain_and_scale
            crafted = crafter(w_m, threshold)
            submissions = [(cid, crafted) for cid in mal_ids]
        elif attack.kind == "adaptive_mom":
            crafted = adaptive_mom(w_m, attack.scale_factor)
            submissions = [(cid, crafted) for cid in mal_ids]
        elif attack.kind == "replacement":
            boost = attack.boost if attack.boost is not None else float(cfg.n)
            backdoored = weights + w_m
            base_oracle = oracle or AdversaryOracle([], cfg.aggregator, weights)
            crafted = replacement(base_oracle, backdoored, boost)
            submissions = [(cid, crafted) for cid in mal_ids]
        else:
            raise ConfigurationError(f"unknown attack kind {attack.kind!r}")

        updates = [ClientUpdate(cid, u) for cid, u in submissions]
        submitted_mean = w_m.with_values(np.mean([u.update.values for u in updates], axis=0))
        return updates, alpha, submitted_mean

    def run_round(self, state: RoundState, workers: int = 1) -> tuple[RoundState, EpochRecord]:
        """One federated round: train, craft, aggregate, measure."""
        cfg = self.cfg
        round_index, weights, prev_benign_mean = state
        participants = self._participants(round_index)
        benign_ids = [i for i in participants if i not in self.malicious_ids]
        mal_ids = [i for i in participants if i in self.malicious_ids]

        benign_updates = self._benign_updates(weights, round_index, benign_ids, workers)
        benign_mean_update = None
        if benign_updates:
            benign_mean_update = weights.with_values(
                np.mean([u.update.values for u in benign_updates], axis=0)
            )

        alpha = None
        delta = None
        all_updates = list(benign_updates)
        if mal_ids:
            oracle = None
            if benign_updates:
                oracle = AdversaryOracle(list(benign_updates), cfg.aggregator, weights)
            malicious_updates, alpha, submitted_mean = self._craft_submissions(
                weights, round_index, mal_ids, oracle, prev_benign_mean
            )
            all_updates += malicious_updates
            if benign_mean_update is not None:
                delta = update_gap(benign_mean_update, submitted_mean)

        round_update, report = aggregate(
            all_updates, cfg.aggregator, derive_seed(cfg.master_seed, "agg", round_index)
        )
        new_weights = weights + round_update

        record = EpochRecord(
            round=round_index,
            accuracy=evaluate(new_weights, self.val_data),
            asr=asr(new_weights, self.val_data, self.trigger),
            alpha=alpha,
            delta=delta,
            krum_selected=report.selected if report is not None else None,
            selected_is_malicious=(
                report.selected in self.malicious_ids if report is not None else None
            ),
        )
        return RoundState(round_index + 1, new_weights, benign_mean_update), record


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    """Run all rounds, then the optional clipped fine-tuning stage.

    An attack stage counts as successful when its ASR exceeds 0.5.
    """
    exp = Experiment(cfg)
    state = exp.initial_state()
    trace = []
    for _ in range(cfg.total_rounds):
        state, record = exp.run_round(state, workers=workers)
        trace.append(record)

    final_acc = evaluate(state.weights, exp.val_data)
    final_asr = asr(state.weights, exp.val_data, exp.trigger)

    ft_acc = ft_asr = acc_diff = ft_success = None
    if cfg.csft is not None:
        ft_cfg = replace(cfg.csft, seed=derive_seed(cfg.master_seed, "csft"))
        ft_weights = csft(state.weights, exp.finetune_set, ft_cfg)
        ft_acc = evaluate(ft_weights, exp.val_data)
        ft_asr = asr(ft_weights, exp.val_data, exp.trigger)
        acc_diff = ft_acc - final_acc
        ft_success = ft_asr > 0.5

    return RunResult(
        trace=tuple(trace),
        final_train_acc=final_acc,
        final_train_asr=final_asr,
        train_attack_success=final_asr > 0.5,
        ft_acc=ft_acc,
        ft_asr=ft_asr,
        acc_diff=acc_diff,
        ft_attack_success=ft_success,
    )


def apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "finetune_fraction":
        return replace(cfg, data=replace(cfg.data, finetune_fraction=float(value)))
    if axis == "m":
        return replace(cfg, m=int(value))
    if axis == "norm_threshold":
        if cfg.aggregator.rule != "norm_bound":
            raise ConfigurationError("norm_threshold sweep needs a norm_bound aggregator")
        return replace(cfg, aggregator=replace(cfg.aggregator, threshold=float(value)))
    if axis == "csft_epochs":
        if cfg.csft is None:
            raise ConfigurationError("csft_epochs sweep needs a csft block")
        return replace(cfg, csft=replace(cfg.csft, total_epochs=int(value)))
    if axis == "grad_clip":
        if cfg.csft is None:
            raise ConfigurationError("grad_clip sweep needs a csft block")
        clip = None if value in (0, None) else float(value)
        return replace(cfg, csft=replace(cfg.csft, grad_clip=clip))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: list[float],
    repeats: int = 1,
    workers: int = 1,
) -> list[SweepPoint]:
    """Independent runs along one config axis.

    Repeat 0 keeps the base master seed (a single-value, single-repeat sweep
    reproduces ``run_experiment`` exactly); further repeats derive fresh
    seeds, shared across values so comparisons are paired.
    """
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    points = []
    for value in values:
        cfg_v = apply_axis(cfg, axis, value)
        results = []
        for rep in range(repeats):
            seed = cfg.master_seed if rep == 0 else derive_seed(cfg.master_seed, "sweep_rep", rep)
            results.append(run_experiment(replace(cfg_v, master_seed=seed), workers=workers))
        points.append(SweepPoint(axis=axis, value=float(value), results=tuple(results)))
    return points
