"""Model-wise rank search: restricted spaces, rejection pruning, two stages.

Stage 1 walks the cost down from a starting rank set: every iteration it
samples candidate rank sets whose cost reduction lands in a margin window
around the current target reduction, scores them, prunes everything at or
below the accuracy threshold into a dominance-box rejection space, and
accepts the best candidate if it clears the threshold (halving the target
reduction otherwise). Stage 2 fine-tunes the accepted sets from last to
first until one clears the 0.2-epoch and 1-epoch thresholds.
"""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .accuracy import (AccuracyModel, STAGE_FINETUNE02, STAGE_FINETUNE1,
                       score_candidates)
from .cost import CostModel, max_rank_set, total_cost
from .model import NetworkModel

log = logging.getLogger(__name__)

DEFAULT_DELTA_S = 0.01
DEFAULT_DELTA_M = 0.1
DEFAULT_DELTA_R = 0.05
DEFAULT_N_CANDIDATES = 200
SAMPLE_ATTEMPT_FACTOR = 50
EXHAUSTIVE_MAX_LAYERS = 4
EXHAUSTIVE_MAX_POINTS = 100_000


class SearchError(RuntimeError):
    pass


class NoCandidatesError(SearchError):
    """The sampler found no rank set in the cost window after its budget."""


@dataclass
class SearchConfig:
    delta_s: float = DEFAULT_DELTA_S
    delta_m: float = DEFAULT_DELTA_M
    delta_r: float = DEFAULT_DELTA_R
    sigma: int | None = None          # auto when None
    delta_c_min: int | None = None    # auto: max(1, delta_c_0 // 16)
    n_candidates: int = DEFAULT_N_CANDIDATES
    seed: int = 0
    start: str = "max"                # "max" | "half-cost"
    max_iterations: int = 200
    score_workers: int = 1


@dataclass
class SpaceConstraints:
    """Per-layer rank boundaries and step intervals."""

    r_max_init: tuple[int, ...]
    r_max: list[int]                  # current upper boundary, shrinks over time
    r_min: tuple[int, ...]
    step: tuple[int, ...]
    delta_s: float = DEFAULT_DELTA_S
    delta_m: float = DEFAULT_DELTA_M


@dataclass
class ReductionPlan:
    """Cost-reduction schedule for the iteration loop."""

    delta_c: int
    sigma: int
    delta_r: float
    delta_c_min: int

    def rank_caps(self, constraints: SpaceConstraints, eps: Sequence[int]) -> list[int]:
        """Per-layer bound on how much rank one candidate may remove."""
        caps = []
        for e, r_hi, r_lo in zip(eps, constraints.r_max, constraints.r_min):
            cap = math.floor(min(self.delta_c / e,
                                 2.0 * self.delta_r * r_hi,
                                 r_hi - r_lo))
            caps.append(max(0, cap))
        return caps


class RejectionFrontier:
    """Union of dominance boxes, kept as an antichain of box ceilings.

    A rank set is rejected iff it is elementwise <= some recorded ceiling.
    """

    def __init__(self, ceilings: Sequence[tuple[int, ...]] = ()):
        self.maximal_sets: list[tuple[int, ...]] = []
        for c in ceilings:
            self.insert(c)

    @staticmethod
    def _leq(a, b) -> bool:
        return all(x <= y for x, y in zip(a, b))

    def insert(self, ranks: Sequence[int]):
        ranks = tuple(ranks)
        for ceiling in self.maximal_sets:
            if self._leq(ranks, ceiling):
                return
        self.maximal_sets = [c for c in self.maximal_sets if not self._leq(c, ranks)]
        self.maximal_sets.append(ranks)

    def contains(self, ranks: Sequence[int]) -> bool:
        ranks = tuple(ranks)
        return any(self._leq(ranks, ceiling) for ceiling in self.maximal_sets)

    def __len__(self):
        return len(self.maximal_sets)


@dataclass
class TraceRecord:
    iteration: int
    delta_c: int
    candidate_count: int
    best_score: float
    accepted: bool
    ranks: tuple[int, ...]
    cost: int
    rejected: int

    def to_json(self) -> str:
        return json.dumps({
            "type": "iteration", "iteration": self.iteration, "delta_c": self.delta_c,
            "candidates": self.candidate_count, "best_score": self.best_score,
            "accepted": self.accepted, "ranks": list(self.ranks), "cost": self.cost,
            "rejected": self.rejected}, sort_keys=True)


@dataclass
class SearchTrace:
    seed: int
    layer_names: tuple[str, ...]
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def accepted(self) -> list[TraceRecord]:
        return [r for r in self.records if r.accepted]

    def dump(self, path):
        lines = [json.dumps({"type": "header", "seed": self.seed,
                             "layers": list(self.layer_names)}, sort_keys=True)]
        lines += [r.to_json() for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SearchTrace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise SearchError(f"{path}: empty trace file")
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise SearchError(f"{path}: first record is not a trace header")
        trace = cls(seed=header["seed"], layer_names=tuple(header["layers"]))
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            trace.records.append(TraceRecord(
                iteration=rec["iteration"], delta_c=rec["delta_c"],
                candidate_count=rec["candidates"], best_score=rec["best_score"],
                accepted=rec["accepted"], ranks=tuple(rec["ranks"]),
                cost=rec["cost"], rejected=rec["rejected"]))
        return trace


def init_search(model: NetworkModel, cm: CostModel, config: SearchConfig
                ) -> tuple[SpaceConstraints, ReductionPlan, tuple[int, ...]]:
    """Derive boundaries, step sizes, the reduction schedule and R_0."""
    r_max_init = max_rank_set(model, cm)
    r_min = tuple(math.ceil(config.delta_m * r) for r in r_max_init)
    step = tuple(max(1, math.floor(config.delta_s * r)) for r in r_max_init)
    for idx, (lo, hi) in zip(cm.optimized_layers, zip(r_min, r_max_init)):
        if lo > hi:
            raise SearchError(
                f"layer {model.layers[idx].name!r}: minimum rank {lo} exceeds maximum {hi}")
    constraints = SpaceConstraints(r_max_init=r_max_init, r_max=list(r_max_init),
                                   r_min=r_min, step=step,
                                   delta_s=config.delta_s, delta_m=config.delta_m)
    c_max = total_cost(model, cm, r_max_init)
    delta_c0 = max(1, math.floor(config.delta_r * c_max))
    sigma = config.sigma
    if sigma is None:
        sigma = max(min(e * s for e, s in zip(cm.coefficients, step)),
                    math.floor(0.01 * delta_c0))
    delta_c_min = config.delta_c_min
    if delta_c_min is None:
        delta_c_min = max(1, delta_c0 // 16)
    plan = ReductionPlan(delta_c=delta_c0, sigma=int(sigma),
                         delta_r=config.delta_r, delta_c_min=int(delta_c_min))
    if config.start == "half-cost":
        r0 = half_cost_ranks(model, cm, constraints)
    else:
        r0 = r_max_init
    return constraints, plan, r0


def half_cost_ranks(model: NetworkModel, cm: CostModel,
                    constraints: SpaceConstraints) -> tuple[int, ...]:
    """Uniformly scale all ranks, bisecting to ~50% of the maximum cost."""
    r_max = constraints.r_max_init
    c_max = total_cost(model, cm, r_max)
    target = 0.5 * c_max

    def ranks_at(t: float) -> tuple[int, ...]:
        return tuple(min(hi, max(lo, round(t * hi)))
                     for lo, hi in zip(constraints.r_min, r_max))

    lo_t, hi_t = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo_t + hi_t)
        if total_cost(model, cm, ranks_at(mid)) > target:
            hi_t = mid
        else:
            lo_t = mid
    return ranks_at(hi_t)


def _delta_cost(eps, delta):
    return sum(e * d for e, d in zip(eps, delta))


def sample_candidates(plan: ReductionPlan, constraints: SpaceConstraints,
                      eps: Sequence[int], r_prev: Sequence[int],
                      frontier: RejectionFrontier, n_c: int,
                      rng: random.Random) -> list[tuple[int, ...]]:
    """Draw up to n_c rank sets whose reduction lands in the sigma window.

    Small lattices are enumerated exhaustively; large ones are sampled with a
    greedy cost repair. If nothing fits, sigma is widened once (x2) before
    giving up with NoCandidatesError.
    """
    caps = plan.rank_caps(constraints, eps)
    r_prev = tuple(r_prev)

    def collect(sigma: int) -> list[tuple[int, ...]]:
        lo, hi = plan.delta_c - sigma, plan.delta_c + sigma
        steps = constraints.step
        grid = [cap // s for cap, s in zip(caps, steps)]
        points = math.prod(g + 1 for g in grid)
        found: list[tuple[int, ...]] = []
        if len(grid) <= EXHAUSTIVE_MAX_LAYERS and points <= EXHAUSTIVE_MAX_POINTS:
            def rec(layer, delta, cost):
                if cost > hi:
                    return
                if layer == len(grid):
                    if cost >= lo and any(delta):
                        cand = tuple(r - d for r, d in zip(r_prev, delta))
                        if all(c >= m for c, m in zip(cand, constraints.r_min)) \
                                and not frontier.contains(cand):
                            found.append(cand)
                    return
                s = steps[layer]
                for n in range(grid[layer] + 1):
                    rec(layer + 1, delta + [n * s], cost + eps[layer] * n * s)

            rec(0, [], 0)
            found.sort()
            if len(found) > n_c:
                found = sorted(rng.sample(found, n_c))
            return found

        seen = set()
        budget = SAMPLE_ATTEMPT_FACTOR * n_c
        for _ in range(budget):
            delta = [rng.randint(0, g) * s for g, s in zip(grid, steps)]
            cost = _delta_cost(eps, delta)
            # greedy repair toward the window: nudge the layer whose step
            # closes the largest share of the remaining gap
            for _ in range(8 * len(grid)):
                if lo <= cost <= hi:
                    break
                gap = plan.delta_c - cost
                best_l, best_abs = -1, abs(gap)
                for l, (g, s) in enumerate(zip(grid, steps)):
                    unit = eps[l] * s
                    if gap > 0 and delta[l] + s <= g * s:
                        new_abs = abs(gap - unit)
                    elif gap < 0 and delta[l] - s >= 0:
                        new_abs = abs(gap + unit)
                    else:
                        continue
                    if new_abs < best_abs:
                        best_abs, best_l = new_abs, l
                if best_l < 0:
                    break
                delta[best_l] += steps[best_l] if gap > 0 else -steps[best_l]
                cost = _delta_cost(eps, delta)
            if not (lo <= cost <= hi) or not any(delta):
                continue
            cand = tuple(r - d for r, d in zip(r_prev, delta))
            if cand in seen:
                continue
            if any(c < m for c, m in zip(cand, constraints.r_min)):
                continue
            if frontier.contains(cand):
                continue
            seen.add(cand)
            found.append(cand)
            if len(found) >= n_c:
                break
        return found

    result = collect(plan.sigma)
    if not result:
        result = collect(2 * plan.sigma)
    if not result:
        raise NoCandidatesError(
            f"no candidate in window delta_c={plan.delta_c} sigma={plan.sigma}")
    return result


def reject_and_update(frontier: RejectionFrontier,
                      scored: Sequence[tuple[tuple[int, ...], float]],
                      tau_a: float) -> int:
    """Insert every scored set at or below tau_a as a dominance-box ceiling."""
    rejected = 0
    for ranks, acc in scored:
        if acc <= tau_a:
            frontier.insert(ranks)
            rejected += 1
    return rejected


def select_step(scored: Sequence[tuple[tuple[int, ...], float]], tau_a: float,
                model: NetworkModel, cm: CostModel
                ) -> tuple[bool, tuple[int, ...], float]:
    """Pick the best-scoring set; ties go to lower cost, then lexicographic.

    Returns (accepted, ranks, score); accepted is score > tau_a.
    """
    if not scored:
        raise SearchError("select_step needs a non-empty scored list")
    best = min(scored, key=lambda item: (-item[1], total_cost(model, cm, item[0]), item[0]))
    ranks, score = best
    return score > tau_a, ranks, score


@dataclass
class Stage2Result:
    ranks: tuple[int, ...]
    passed: bool
    checked: int


def run_stage1(model: NetworkModel, cm: CostModel, accuracy_model: AccuracyModel,
               evaluator, config: SearchConfig,
               trace_path=None) -> SearchTrace:
    """Iterative cost minimization subject to the score0 threshold tau_a."""
    constraints, plan, r_current = init_search(model, cm, config)
    layer_names = tuple(model.layers[i].name for i in cm.optimized_layers)
    frontier = RejectionFrontier()
    rng = random.Random(config.seed)
    trace = SearchTrace(seed=config.seed, layer_names=layer_names)
    tau_a = accuracy_model.tau_a

    if config.start == "half-cost":
        constraints.r_max = list(r_current)

    for i in range(1, config.max_iterations + 1):
        if plan.delta_c < plan.delta_c_min:
            break
        try:
            candidates = sample_candidates(plan, constraints, cm.coefficients,
                                           r_current, frontier,
                                           config.n_candidates, rng)
        except NoCandidatesError:
            if plan.delta_c <= plan.delta_c_min:
                break
            plan.delta_c = max(1, plan.delta_c // 2)
            continue
        scored = score_candidates(evaluator, layer_names, candidates,
                                  max_workers=config.score_workers)
        rejected = reject_and_update(frontier, scored, tau_a)
        accepted, best_ranks, best_score = select_step(scored, tau_a, model, cm)
        delta_c_used = plan.delta_c
        if accepted:
            r_current = best_ranks
            constraints.r_max = list(best_ranks)
            trace.records.append(TraceRecord(
                iteration=i, delta_c=delta_c_used, candidate_count=len(candidates),
                best_score=best_score, accepted=True, ranks=best_ranks,
                cost=total_cost(model, cm, best_ranks), rejected=rejected))
        else:
            trace.records.append(TraceRecord(
                iteration=i, delta_c=delta_c_used, candidate_count=len(candidates),
                best_score=best_score, accepted=False, ranks=r_current,
                cost=total_cost(model, cm, r_current), rejected=rejected))
            plan.delta_c = max(1, plan.delta_c // 2)
            if plan.delta_c <= plan.delta_c_min:
                break
    if trace_path is not None:
        trace.dump(trace_path)
    return trace


def run_stage2(trace: SearchTrace, accuracy_model: AccuracyModel, evaluator,
               fallback: Sequence[int] | None = None) -> Stage2Result:
    """Fine-tune accepted sets from last to first until thresholds pass."""
    accepted = trace.accepted
    if not accepted:
        raise SearchError("stage 2 needs at least one accepted rank set")
    names = trace.layer_names
    checked = 0
    for record in reversed(accepted):
        ranks = dict(zip(names, record.ranks))
        checked += 1
        acc02 = evaluator.evaluate(ranks, STAGE_FINETUNE02)
        if acc02 < accuracy_model.tau_b:
            continue
        acc1 = evaluator.evaluate(ranks, STAGE_FINETUNE1)
        if acc1 < accuracy_model.tau_c:
            continue
        return Stage2Result(ranks=record.ranks, passed=True, checked=checked)
    log.warning("no accepted rank set cleared the fine-tuning thresholds; "
                "falling back to the calibration model")
    fb = tuple(fallback) if fallback is not None else accepted[0].ranks
    return Stage2Result(ranks=fb, passed=False, checked=checked)
