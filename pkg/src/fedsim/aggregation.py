"""Aggregation rules: FedAvg plus the first-line defenses.

Aggregators see only (client_id, update) pairs. Whether a client is
malicious is bookkeeping that lives in the orchestrator; it is deliberately
not representable here, so no defense can cheat by reading it.

All rules are pure functions of (updates, parameters, seed). Updates are
canonicalized into ascending client_id order first, so the caller's list
order never affects the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .model import WeightVector, _clip_flat
from .seeding import derive_seed, stream

RULES = ("fedavg", "krum", "norm_bound", "mom", "robust_mom")


@dataclass(frozen=True)
class ClientUpdate:
    """One client's submitted update for a round."""

    client_id: int
    update: WeightVector


@dataclass(frozen=True)
class AggregatorConfig:
    """Which defense runs at aggregation time, plus its parameters."""

    rule: str = "fedavg"
    m_assumed: int | None = None  # krum: number of malicious clients tolerated
    threshold: float | None = None  # norm_bound: L2 ceiling
    num_groups: int | None = None  # mom / robust_mom
    k_repeats: int | None = None  # robust_mom
    krum_distance: str = "squared"  # "squared" (classic) or "plain" L2

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown aggregation rule {self.rule!r}")
        if self.rule == "krum":
            if self.m_assumed is None or self.m_assumed < 0:
                raise ConfigurationError("krum requires m_assumed >= 0")
            if self.krum_distance not in ("squared", "plain"):
                raise ConfigurationError("krum_distance must be 'squared' or 'plain'")
        if self.rule == "norm_bound" and (self.threshold is None or self.threshold <= 0):
            raise ConfigurationError("norm_bound requires threshold > 0")
        if self.rule in ("mom", "robust_mom"):
            if self.num_groups is None or self.num_groups < 2:
                raise ConfigurationError(f"{self.rule} requires num_groups >= 2")
        if self.rule == "robust_mom" and (self.k_repeats is None or self.k_repeats < 1):
            raise ConfigurationError("robust_mom requires k_repeats >= 1")


@dataclass(frozen=True)
class KrumReport:
    """Scores and neighbor sets from one Krum pass, in ascending client_id order."""

    client_ids: tuple[int, ...]
    scores: np.ndarray
    neighbor_sets: tuple[tuple[int, ...], ...]
    selected: int
    distance: str = "squared"

    def score_of(self, client_id: int) -> float:
        return float(self.scores[self.client_ids.index(client_id)])

    def neighbors_of(self, client_id: int) -> tuple[int, ...]:
        return self.neighbor_sets[self.client_ids.index(client_id)]


def _canonical(updates: list[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise InputError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate client ids in the round")
    layout = ordered[0].update.layout
    for u in ordered:
        if u.update.layout != layout:
            raise InputError(f"client {u.client_id} submitted a mismatched layout")
    return ordered


def fed_avg(updates: list[ClientUpdate]) -> WeightVector:
    """Element-wise mean of all updates."""
    ordered = _canonical(updates)
    stacked = np.stack([u.update.values for u in ordered])
    return ordered[0].update.with_values(stacked.mean(axis=0))


def krum(
    updates: list[ClientUpdate], m_assumed: int, distance: str = "squared"
) -> tuple[WeightVector, KrumReport]:
    """Select the update with the smallest sum of distances to its nearest peers.

    Each update is scored by the sum of its distances (squared L2 by default)
    to its n - m_assumed - 2 nearest neighbors, self excluded. The lowest
    score wins; ties go to the lowest client_id, and neighbor ties to the
    lower client_id as well.

    Raises:
        ConfigurationError: unless 2 * m_assumed + 2 < n.
    """
    ordered = _canonical(updates)
    n = len(ordered)
    # The experiment layer enforces the strict 2m+2 < n; accepting equality here
    # keeps the n - m - 2 = 1 single-neighbor edge case computable.
    if not 2 * m_assumed + 2 <= n:
        raise ConfigurationError(f"krum needs 2*m + 2 <= n, got m={m_assumed}, n={n}")
    if distance not in ("squared", "plain"):
        raise ConfigurationError("distance must be 'squared' or 'plain'")

    ids = np.array([u.client_id for u in ordered])
    stacked = np.stack([u.update.values for u in ordered])
    diffs = stacked[:, None, :] - stacked[None, :, :]
    dist = (diffs**2).sum(axis=2)
    if distance == "plain":
        dist = np.sqrt(dist)

    num_neighbors = n - m_assumed - 2
    scores = np.empty(n)
    neighbor_sets = []
    for i in range(n):
        others = np.delete(np.arange(n), i)
        order = others[np.lexsort((ids[others], dist[i, others]))]
        neighbors = order[:num_neighbors]
        scores[i] = dist[i, neighbors].sum()
        neighbor_sets.append(tuple(int(ids[j]) for j in neighbors))

    selected_pos = int(np.argmin(scores))  # ties: first = lowest client_id
    report = KrumReport(
        client_ids=tuple(int(i) for i in ids),
        scores=scores,
        neighbor_sets=tuple(neighbor_sets),
        selected=int(ids[selected_pos]),
        distance=distance,
    )
    return ordered[selected_pos].update, report


def norm_bound(updates: list[ClientUpdate], threshold: float) -> WeightVector:
    """Rescale every update onto the L2 ball of the threshold, then average."""
    if threshold <= 0:
        raise ConfigurationError("threshold must be > 0")
    ordered = _canonical(updates)
    clipped = [
        ClientUpdate(u.client_id, u.update.with_values(_clip_flat(u.update.values, threshold)))
        for u in ordered
    ]
    return fed_avg(clipped)


def mom(updates: list[ClientUpdate], num_groups: int, seed: int) -> WeightVector:
    """Median-of-means: per layer, element-wise median of random group averages.

    For every layout entry the clients are shuffled by a seed-derived
    permutation and dealt round-robin into num_groups groups; the output
    coordinates are the element-wise median of the group means (an even group
    count takes the midpoint of the two middle values).
    """
    ordered = _canonical(updates)
    n = len(ordered)
    if num_groups < 2:
        raise ConfigurationError("num_groups must be >= 2")
    if num_groups > n:
        raise ConfigurationError(f"num_groups={num_groups} exceeds {n} clients")

    stacked = np.stack([u.update.values for u in ordered])
    out = np.empty(stacked.shape[1])
    for layer_index, (_, offset, length) in enumerate(ordered[0].update.layout):
        perm = stream(seed, "mom_layer", layer_index).permutation(n)
        block = stacked[:, offset : offset + length]
        group_means = np.stack(
            [block[perm[g::num_groups]].mean(axis=0) for g in range(num_groups)]
        )
        out[offset : offset + length] = np.median(group_means, axis=0)
    return ordered[0].update.with_values(out)


def robust_mom(
    updates: list[ClientUpdate], num_groups: int, k_repeats: int, seed: int
) -> WeightVector:
    """Average of k independent median-of-means runs with re-derived partitions."""
    if k_repeats < 1:
        raise ConfigurationError("k_repeats must be >= 1")
    medians = [
        mom(updates, num_groups, derive_seed(seed, "mom_rep", r)).values
        for r in range(k_repeats)
    ]
    ordered = _canonical(updates)
    # When every repetition agrees the mean is that value exactly; averaging
    # k identical float arrays would round (k*x/k != x for most x).
    if all(np.array_equal(m, medians[0]) for m in medians[1:]):
        return ordered[0].update.with_values(medians[0])
    return ordered[0].update.with_values(np.mean(medians, axis=0))


def aggregate(
    updates: list[ClientUpdate], cfg: AggregatorConfig, seed: int
) -> tuple[WeightVector, KrumReport | None]:
    """Dispatch to the configured rule; only Krum produces a report."""
    if cfg.rule == "fedavg":
        return fed_avg(updates), None
    if cfg.rule == "krum":
        return krum(updates, cfg.m_assumed, cfg.krum_distance)
    if cfg.rule == "norm_bound":
        return norm_bound(updates, cfg.threshold), None
    if cfg.rule == "mom":
        return mom(updates, cfg.num_groups, seed), None
    if cfg.rule == "robust_mom":
        return robust_mom(updates, cfg.num_groups, cfg.k_repeats, seed), None
    raise ConfigurationError(f"unknown aggregation rule {cfg.rule!r}")
