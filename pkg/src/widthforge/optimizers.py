"""Width search strategies behind one interface.

``uniform`` returns the all-ones vector at zero cost. ``slimming`` trains a
grown network once, ranks all channels globally by importance score, and
keeps the largest feasible prefix. ``greedy`` grows the network and then
repeatedly removes a group of channels from whichever unit hurts the
accuracy proxy least, until the MAC budget is met. A brute-force oracle
enumerates small instances exactly for testing regret.

Every optimizer output applied to its architecture satisfies
flops(result) <= flops(base); the extrapolation stage later pins that to
equality within tolerance.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .archspec import (
    ArchSpec,
    WidthVector,
    apply_width,
    arch_digest,
    flops,
    round_channels,
    width_units,
)
from .evaluators import Evaluator, EvaluatorBudget, EvaluatorError
from .jsonio import canonical_dumps, format_fraction
from .projection import DatasetSpec

ALGORITHMS = ("uniform", "slimming", "greedy")
PLUGIN_ALGORITHMS = ("dmcp", "morphnet")


class OptimizerError(RuntimeError):
    """Search failure: no feasible width or exhausted budget mid-flight."""


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "greedy"
    grow_factor: Fraction = Fraction(3, 2)
    prune_group: int = 8
    seed: int = 0
    # Reserved for external differentiable plug-ins; carried, never read here.
    plugin_params: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "grow_factor", Fraction(self.grow_factor))
        if self.algorithm not in ALGORITHMS + PLUGIN_ALGORITHMS:
            raise OptimizerError(f"unknown algorithm {self.algorithm!r}")
        if self.grow_factor < 1:
            raise OptimizerError("grow_factor must be >= 1")
        if self.prune_group < 1:
            raise OptimizerError("prune_group must be >= 1")

    def to_dict(self) -> dict:
        doc = {
            "algorithm": self.algorithm,
            "grow_factor": format_fraction(self.grow_factor),
            "prune_group": self.prune_group,
            "seed": self.seed,
        }
        if self.plugin_params is not None:
            doc["plugin_params"] = self.plugin_params
        return doc


@dataclass
class AuditLog:
    """Trace of every evaluation an optimizer issued, in decision order."""

    entries: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def record(self, arch: ArchSpec, accuracy_proxy: float, cost_flops: int) -> None:
        cumulative = self.total_cost_flops + cost_flops
        self.entries.append(
            {
                "index": len(self.entries),
                "arch_digest": arch_digest(arch),
                "accuracy_proxy": accuracy_proxy,
                "cost_flops": cost_flops,
                "cumulative_cost_flops": cumulative,
            }
        )

    @property
    def total_cost_flops(self) -> int:
        return self.entries[-1]["cumulative_cost_flops"] if self.entries else 0

    @property
    def total_evaluations(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "schema": "widthforge.audit@1",
            "evaluations": self.entries,
            "total_evaluations": self.total_evaluations,
            "total_cost_flops": self.total_cost_flops,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return canonical_dumps(self.to_dict())


def optimize_uniform(arch: ArchSpec, cfg: OptimizerConfig | None = None) -> WidthVector:
    """Baseline: keep every width as-is. Costs zero evaluations."""
    return WidthVector.ones(len(width_units(arch)))


def _counts_to_vector(counts: dict[str, int], units) -> WidthVector:
    return WidthVector(tuple(Fraction(counts[u.id], u.base) for u in units))


def _flops_at_counts(arch: ArchSpec, units, counts: dict[str, int], resolution: int) -> int:
    w = _counts_to_vector(counts, units)
    return flops(apply_width(arch, w), resolution).total


def optimize_slimming(
    arch: ArchSpec,
    ds: DatasetSpec,
    evaluator: Evaluator,
    cfg: OptimizerConfig,
    budget: EvaluatorBudget | None = None,
    audit: AuditLog | None = None,
) -> WidthVector:
    """Train wide once, rank all channels globally, keep the feasible prefix.

    The grown architecture is evaluated a single time for channel scores.
    Channels across all non-fixed units are sorted by descending score (ties
    favor lower channel index, then lower unit index, so symmetric scores
    prune symmetrically), and the longest prefix whose induced architecture
    stays within the base MAC count is kept, floored at one channel per unit.
    Coupled layers share their unit's kept count by construction.
    """
    budget = budget or EvaluatorBudget()
    units = width_units(arch)
    base_flops = flops(arch, ds.resolution).total

    grown = apply_width(arch, WidthVector.uniform(len(units), cfg.grow_factor))
    result = evaluator.evaluate(grown, ds, budget)
    if audit is not None:
        audit.record(grown, result.accuracy_proxy, result.cost_flops)

    ranked: list[tuple[float, int, int]] = []
    for ui, unit in enumerate(width_units(grown)):
        scores = result.channel_scores[unit.id]
        for ci, score in enumerate(scores):
            ranked.append((-score, ci, ui))
    ranked.sort()

    def counts_for_prefix(k: int) -> dict[str, int]:
        kept = {u.id: 0 for u in units}
        for _, _, ui in ranked[:k]:
            kept[units[ui].id] += 1
        return {uid: max(1, c) for uid, c in kept.items()}

    lo, hi = 0, len(ranked)
    # Largest prefix whose induced architecture stays within budget.
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _flops_at_counts(arch, units, counts_for_prefix(mid), ds.resolution) <= base_flops:
            lo = mid
        else:
            hi = mid - 1
    counts = counts_for_prefix(lo)
    if _flops_at_counts(arch, units, counts, ds.resolution) > base_flops:
        raise OptimizerError("even one channel per unit exceeds the MAC budget")
    return _counts_to_vector(counts, units)


def optimize_greedy(
    arch: ArchSpec,
    ds: DatasetSpec,
    evaluator: Evaluator,
    cfg: OptimizerConfig,
    budget: EvaluatorBudget | None = None,
    audit: AuditLog | None = None,
    max_workers: int = 1,
) -> WidthVector:
    """Grow, then repeatedly drop the least-damaging group of channels.

    Each round tentatively removes ``prune_group`` channels from every unit
    that still can shrink, scores every candidate, and commits the removal
    with the highest surviving proxy (ties break on the lowest unit index,
    never on evaluation completion order). Stops once MACs fall to or below
    the base architecture's. If the evaluation budget runs out first, the
    current widths are returned and the audit log is flagged.
    """
    if cfg.grow_factor <= 1:
        raise OptimizerError("greedy needs grow_factor > 1 to have room to prune")
    if not getattr(evaluator, "concurrency_safe", False):
        max_workers = 1
    budget = budget or EvaluatorBudget()
    units = width_units(arch)
    base_flops = flops(arch, ds.resolution).total
    counts = {u.id: round_channels(u.base * cfg.grow_factor) for u in units}
    evaluations = 0

    def evaluate_candidate(candidate_counts: dict[str, int]) -> tuple[float, int, ArchSpec]:
        candidate = apply_width(arch, _counts_to_vector(candidate_counts, units))
        res = evaluator.evaluate(candidate, ds, budget)
        return res.accuracy_proxy, res.cost_flops, candidate

    while _flops_at_counts(arch, units, counts, ds.resolution) > base_flops:
        shrinkable = [u for u in units if counts[u.id] > 1]
        if not shrinkable:
            raise OptimizerError(
                "MAC budget unreachable: every unit is already at one channel"
            )
        candidates = []
        for u in shrinkable:
            trial = dict(counts)
            trial[u.id] = max(1, counts[u.id] - cfg.prune_group)
            candidates.append((u, trial))
        if evaluations + len(candidates) > budget.max_evaluations:
            if audit is not None:
                audit.flags.append("budget-exhausted")
            break
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(lambda c: evaluate_candidate(c[1]), candidates))
        else:
            results = [evaluate_candidate(trial) for _, trial in candidates]
        evaluations += len(candidates)
        if audit is not None:
            for proxy, cost, cand_arch in results:
                audit.record(cand_arch, proxy, cost)
        best_index = max(
            range(len(candidates)),
            key=lambda i: (results[i][0], -i),
        )
        counts = candidates[best_index][1]
    return _counts_to_vector(counts, units)


def brute_force_oracle(
    arch: ArchSpec,
    ds: DatasetSpec,
    evaluator: Evaluator,
    choices_per_unit: Sequence[Sequence[Fraction]],
    budget: EvaluatorBudget | None = None,
) -> tuple[WidthVector, float]:
    """Exhaustive search over a finite multiplier grid, for small instances.

    Enumerates every combination, filters to flops <= base flops, and
    returns the feasible maximizer of the accuracy proxy. Ties resolve to
    the first combination in lexicographic choice order.
    """
    budget = budget or EvaluatorBudget()
    units = width_units(arch)
    if len(choices_per_unit) != len(units):
        raise OptimizerError(
            f"need one choice set per unit ({len(units)}), got {len(choices_per_unit)}"
        )
    space = 1
    for choices in choices_per_unit:
        if not choices:
            raise OptimizerError("empty choice set")
        space *= len(choices)
    if space > 10**6:
        raise OptimizerError(f"search space {space} exceeds 10^6 combinations")
    base_flops = flops(arch, ds.resolution).total
    best: tuple[float, WidthVector] | None = None
    for combo in itertools.product(*[list(c) for c in choices_per_unit]):
        w = WidthVector(tuple(Fraction(x) for x in combo))
        candidate = apply_width(arch, w)
        if flops(candidate, ds.resolution).total > base_flops:
            continue
        proxy = evaluator.evaluate(candidate, ds, budget).accuracy_proxy
        if best is None or proxy > best[0]:
            best = (proxy, w)
    if best is None:
        raise OptimizerError("no feasible width in the choice grid")
    return best[1], best[0]


def run_optimizer(
    arch: ArchSpec,
    ds: DatasetSpec,
    evaluator: Evaluator | None,
    cfg: OptimizerConfig,
    budget: EvaluatorBudget | None = None,
    audit: AuditLog | None = None,
    max_workers: int = 1,
) -> WidthVector:
    """Dispatch on cfg.algorithm; plug-in ids are reserved but external."""
    if cfg.algorithm == "uniform":
        return optimize_uniform(arch, cfg)
    if cfg.algorithm in PLUGIN_ALGORITHMS:
        raise EvaluatorError(
            f"{cfg.algorithm} is an external plug-in algorithm; "
            "no built-in implementation"
        )
    if evaluator is None:
        raise EvaluatorError(f"{cfg.algorithm} requires an evaluator")
    if cfg.algorithm == "slimming":
        return optimize_slimming(arch, ds, evaluator, cfg, budget, audit)
    return optimize_greedy(arch, ds, evaluator, cfg, budget, audit, max_workers)
