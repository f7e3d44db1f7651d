"""Deterministic federated-learning simulator: backdoor attacks, robust
aggregation defenses, and clipped cyclic fine-tuning, with a batch CLI."""

from .aggregation import (
    AggregatorConfig,
    ClientUpdate,
    KrumReport,
    aggregate,
    fed_avg,
    krum,
    mom,
    norm_bound,
    robust_mom,
)
from .attacks import (
    AdaptiveKrumParams,
    AdaptiveKrumResult,
    AdversaryOracle,
    adaptive_krum,
    adaptive_mom,
    adaptive_norm,
    constrain_and_scale,
    malicious_local_updates,
    neurotoxin_mask,
    replacement,
)
from .backdoor import (
    TriggerSpec,
    apply_trigger,
    asr,
    blended_trigger,
    patch_trigger,
    poison_dataset,
    split_trigger_dba,
)
from .config import config_from_dict, config_to_dict, echo_config, parse_config
from .csft import CsftConfig, csft, schedule_lr
from .data import (
    Dataset,
    PartitionPlan,
    gen_synthetic,
    load_idx,
    partition_dirichlet,
    partition_iid,
)
from .model import (
    ModelSpec,
    TrainConfig,
    WeightVector,
    clip_gradient,
    evaluate,
    init_weights,
    local_train,
    loss_and_grad,
)
from .orchestrator import (
    AttackConfig,
    DataConfig,
    EpochRecord,
    Experiment,
    ExperimentConfig,
    RunResult,
    SweepPoint,
    TriggerConfig,
    run_experiment,
    sweep,
    update_gap,
    validate_config,
)
from .report import OutputBundle, mean_ci, summarize, write_outputs

__version__ = "0.1.0"

__all__ = [
    "AdaptiveKrumParams",
    "AdaptiveKrumResult",
    "AdversaryOracle",
    "AggregatorConfig",
    "AttackConfig",
    "ClientUpdate",
    "CsftConfig",
    "DataConfig",
    "Dataset",
    "EpochRecord",
    "Experiment",
    "ExperimentConfig",
    "KrumReport",
    "ModelSpec",
    "OutputBundle",
    "PartitionPlan",
    "RunResult",
    "SweepPoint",
    "TrainConfig",
    "TriggerConfig",
    "TriggerSpec",
    "WeightVector",
    "adaptive_krum",
    "adaptive_mom",
    "adaptive_norm",
    "aggregate",
    "apply_trigger",
    "asr",
    "blended_trigger",
    "clip_gradient",
    "config_from_dict",
    "config_to_dict",
    "constrain_and_scale",
    "csft",
    "echo_config",
    "evaluate",
    "fed_avg",
    "gen_synthetic",
    "init_weights",
    "krum",
    "load_idx",
    "local_train",
    "loss_and_grad",
    "malicious_local_updates",
    "mean_ci",
    "mom",
    "neurotoxin_mask",
    "norm_bound",
    "parse_config",
    "partition_dirichlet",
    "partition_iid",
    "patch_trigger",
    "poison_dataset",
    "replacement",
    "robust_mom",
    "run_experiment",
    "schedule_lr",
    "split_trigger_dba",
    "summarize",
    "sweep",
    "update_gap",
    "validate_config",
    "write_outputs",
]
