"""Placement policies compared by the replay harness."""

from __future__ import annotations

from ..errors import InvalidParams
from ..placement import (
    GroupPolicy,
    Heuristic,
    KernelHint,
    KMeansModel,
    Learned,
    PlacementEngine,
    RuleSet,
    builtin_rules,
)

POLICIES = ("valet", "valet-learn", "single", "temp4")

# Distance in feature space past which an open starts a new learned stream.
LEARN_SPAWN_RADIUS = 0.35


def single_stream() -> Heuristic:
    """Every file on stream 0: the no-hint baseline."""
    return Heuristic(RuleSet((), 0))


def four_level(stream: int) -> int:
    """Collapse a stream onto one of the four kernel lifetime levels."""
    return stream % len(KernelHint)


def make_placement(policy, zone_capacity, stream_budget=8, seed=0, rules=None,
                   batch_size=8) -> PlacementEngine:
    """Fresh placement engine for ``policy``.

    ``rules`` overrides the built-in combined rule set for ``valet`` and
    ``temp4``. Lifetime groups rotate every quarter zone per stream.
    """
    groups = GroupPolicy(quantum=max(zone_capacity // 4, 1))
    if policy == "valet":
        return PlacementEngine(Heuristic(rules or builtin_rules("valet")), groups)
    if policy == "valet-learn":
        model = KMeansModel(k=stream_budget, batch_size=batch_size, rng_seed=seed,
                            spawn_radius=LEARN_SPAWN_RADIUS)
        return PlacementEngine(Learned(model), groups)
    if policy == "single":
        return PlacementEngine(single_stream(), groups)
    if policy == "temp4":
        return PlacementEngine(Heuristic(rules or builtin_rules("valet")), groups, stream_map=four_level)
    raise InvalidParams(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")


def baseline_policies(zone_capacity, stream_budget=8, seed=0, rules=None):
    """The two no-Valet baselines: one shared stream, and the four kernel levels."""
    return {name: make_placement(name, zone_capacity, stream_budget, seed, rules)
            for name in ("single", "temp4")}
