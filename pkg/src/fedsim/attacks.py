"""Malicious update crafting.

The adaptive attacker holds a full snapshot of the round: every benign
update plus the aggregator's rule and parameters. Against Krum it simulates
the defense locally and places the malicious mean on a sphere around the
benign mean that is just tight enough to win selection; against
norm-bounding it rides the clipping threshold exactly; against
median-of-means it scales the update to drag group means.

Simplified baseline forms (model replacement, constrain-and-scale,
magnitude-masked updates, split triggers) live here as well so runs can be
compared against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregatorConfig, ClientUpdate, krum
from .data import Dataset
from .errors import ConfigurationError, CraftFailureError, DegenerateUpdateError, InputError
from .model import TrainConfig, WeightVector, local_train


@dataclass(frozen=True)
class AdversaryOracle:
    """Everything the adaptive attacker knows when it has to submit."""

    benign_updates: list[ClientUpdate]
    aggregator: AggregatorConfig
    global_weights: WeightVector


@dataclass(frozen=True)
class AdaptiveKrumParams:
    beta: float = 1.5
    use_bisection: bool = False
    bisection_tol: float = 1e-3
    bisection_max_iters: int = 40

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigurationError("beta must be > 0")
        if self.bisection_tol <= 0:
            raise ConfigurationError("bisection_tol must be > 0")
        if self.bisection_max_iters < 1:
            raise ConfigurationError("bisection_max_iters must be >= 1")


@dataclass(frozen=True)
class AdaptiveKrumResult:
    update: WeightVector
    alpha: float
    used_bisection: bool


def malicious_local_updates(
    w: WeightVector, poisoned_shards: list[Dataset], cfg: TrainConfig
) -> tuple[list[WeightVector], WeightVector]:
    """Train each malicious client on its poisoned shard; also return the mean."""
    if not poisoned_shards:
        raise InputError("need at least one poisoned shard")
    updates = [local_train(w, shard, cfg) for shard in poisoned_shards]
    mean = w.with_values(np.mean([u.values for u in updates], axis=0))
    return updates, mean


def benign_mean(oracle: AdversaryOracle) -> WeightVector:
    if not oracle.benign_updates:
        raise InputError("oracle holds no benign updates")
    values = np.mean([u.update.values for u in oracle.benign_updates], axis=0)
    return oracle.benign_updates[0].update.with_values(values)


def project_onto_sphere(
    w_m: WeightVector, w_b: WeightVector, r: float
) -> tuple[WeightVector, float]:
    """Pull w_m toward w_b onto the sphere of radius r (never extrapolates).

    Returns (alpha * w_m + (1 - alpha) * w_b, alpha) with
    alpha = min(1, r / ||w_b - w_m||).
    """
    dist = (w_b - w_m).norm()
    if dist == 0.0:
        return w_m, 1.0
    alpha = min(1.0, r / dist)
    return alpha * w_m + (1.0 - alpha) * w_b, alpha


def _simulate_krum(oracle: AdversaryOracle, candidate: WeightVector, m: int):
    """Run the defender's Krum over benign updates plus m copies of candidate."""
    next_id = max(u.client_id for u in oracle.benign_updates) + 1
    malicious_ids = tuple(range(next_id, next_id + m))
    submissions = list(oracle.benign_updates) + [
        ClientUpdate(cid, candidate) for cid in malicious_ids
    ]
    _, report = krum(
        submissions, oracle.aggregator.m_assumed, oracle.aggregator.krum_distance
    )
    return report, malicious_ids


def _bisect_alpha(
    oracle: AdversaryOracle,
    w_m: WeightVector,
    w_b: WeightVector,
    m: int,
    params: AdaptiveKrumParams,
) -> AdaptiveKrumResult:
    def accepted(alpha: float) -> bool:
        candidate = alpha * w_m + (1.0 - alpha) * w_b
        report, malicious_ids = _simulate_krum(oracle, candidate, m)
        return report.selected in malicious_ids

    budget = params.bisection_max_iters
    tol = params.bisection_tol

    if accepted(1.0):
        return AdaptiveKrumResult(w_m, 1.0, True)
    budget -= 1

    # Scan geometrically downward for any accepted point to bracket against
    # the rejected upper end. The floor sits far below tol so boundaries
    # smaller than the tolerance are still found.
    lo, hi = None, 1.0
    alpha = 0.5
    while budget > 0 and alpha >= 1e-12:
        budget -= 1
        if accepted(alpha):
            lo = alpha
            break
        hi = alpha
        alpha /= 2.0
    if lo is None:
        raise CraftFailureError("no alpha in (0, 1] wins Krum selection")

    while budget > 0 and hi - lo > tol:
        budget -= 1
        mid = (lo + hi) / 2.0
        if accepted(mid):
            lo = mid
        else:
            hi = mid

    crafted = lo * w_m + (1.0 - lo) * w_b
    return AdaptiveKrumResult(crafted, lo, True)


def adaptive_krum(
    oracle: AdversaryOracle,
    w_m: WeightVector,
    m: int,
    params: AdaptiveKrumParams = AdaptiveKrumParams(),
) -> AdaptiveKrumResult:
    """Craft the update all m malicious clients submit against Krum.

    Simulates the defender's Krum over the benign updates plus m copies of
    the malicious mean, reads off the lowest benign score and the number of
    benign neighbors p of the malicious copy, and pulls the malicious mean
    onto the sphere of radius r = beta * score / p around the benign mean.
    With ``use_bisection`` (or when p = 0) it instead searches for the
    largest alpha in (0, 1] that still wins selection.

    Raises:
        CraftFailureError: bisection found no accepted alpha.
    """
    if oracle.aggregator.rule != "krum":
        raise ConfigurationError("adaptive_krum needs a krum aggregator in the oracle")
    if m < 1:
        raise InputError("m must be >= 1")
    w_b = benign_mean(oracle)
    if np.array_equal(w_m.values, w_b.values):
        return AdaptiveKrumResult(w_m, 1.0, False)
    if params.use_bisection:
        return _bisect_alpha(oracle, w_m, w_b, m, params)

    report, malicious_ids = _simulate_krum(oracle, w_m, m)
    benign_scores = [
        report.score_of(u.client_id) for u in oracle.benign_updates
    ]
    lowest_benign_score = min(benign_scores)
    neighbor_ids = report.neighbors_of(malicious_ids[0])
    p = sum(1 for cid in neighbor_ids if cid not in malicious_ids)
    if p == 0:
        return _bisect_alpha(oracle, w_m, w_b, m, params)

    r = params.beta * lowest_benign_score / p
    crafted, alpha = project_onto_sphere(w_m, w_b, r)
    return AdaptiveKrumResult(crafted, alpha, False)


def adaptive_norm(w_m: WeightVector, threshold: float) -> WeightVector:
    """Scale the malicious mean exactly onto the clipping sphere."""
    if threshold <= 0:
        raise ConfigurationError("threshold must be > 0")
    norm = w_m.norm()
    if norm == 0.0:
        raise DegenerateUpdateError("cannot scale a zero update to the norm threshold")
    return w_m * (threshold / norm)


def constrain_and_scale(w_m: WeightVector, threshold: float) -> WeightVector:
    """Train-then-scale baseline: identical contract to adaptive_norm."""
    return adaptive_norm(w_m, threshold)


def adaptive_mom(w_m: WeightVector, scale_factor: float) -> WeightVector:
    """Scale the malicious mean so its groups' means drag the median."""
    if scale_factor < 1:
        raise InputError("scale_factor must be >= 1")
    return w_m * scale_factor


def replacement(oracle: AdversaryOracle, w_backdoored: WeightVector, boost: float) -> WeightVector:
    """Model replacement: submit boost * (backdoored model - global model).

    With boost = n, FedAvg's 1/n cancels and the aggregate moves the global
    model (almost) onto the backdoored weights.
    """
    if boost <= 0:
        raise InputError("boost must be > 0")
    return boost * (w_backdoored - oracle.global_weights)


def neurotoxin_mask(previous_benign_aggregate: WeightVector, keep_fraction: float) -> np.ndarray:
    """Boolean mask of the keep_fraction smallest-magnitude coordinates.

    Masking a malicious update to coordinates the benign aggregate barely
    moved approximates hiding in low-traffic parameters.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise InputError("keep_fraction must lie in (0, 1]")
    values = previous_benign_aggregate.values
    count = int(round(keep_fraction * len(values)))
    mask = np.zeros(len(values), dtype=bool)
    order = np.argsort(np.abs(values), kind="stable")
    mask[order[:count]] = True
    return mask
