"""Comparison searches: layer-wise greedy descent and exhaustive scan."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

from .accuracy import STAGE_SCORE0
from .cost import CostModel, total_cost
from .model import NetworkModel
from .search import SearchConfig, SearchError, init_search

DEFAULT_GRID_LIMIT = 1_000_000


@dataclass
class BaselineResult:
    ranks: tuple[int, ...] | None
    cost: int | None
    iterations: int
    evaluator_calls: int
    feasible: bool


def _names(model: NetworkModel, cm: CostModel) -> tuple[str, ...]:
    return tuple(model.layers[i].name for i in cm.optimized_layers)


def layerwise_greedy(model: NetworkModel, cm: CostModel, evaluator, tau_a: float,
                     config: SearchConfig | None = None) -> BaselineResult:
    """Reduce one layer's rank per iteration, keeping accuracy maximal.

    Stops when every single-layer reduction either drops the accuracy to
    tau_a or below, or would cross the layer's minimum rank.
    """
    config = config or SearchConfig()
    constraints, _, _ = init_search(model, cm, config)
    names = _names(model, cm)
    current = tuple(constraints.r_max_init)
    calls = 0
    iterations = 0
    while True:
        iterations += 1
        best = None
        for l, step in enumerate(constraints.step):
            reduced = current[l] - step
            if reduced < constraints.r_min[l]:
                continue
            trial = current[:l] + (reduced,) + current[l + 1:]
            acc = evaluator.evaluate(dict(zip(names, trial)), STAGE_SCORE0)
            calls += 1
            if acc > tau_a and (best is None or acc > best[1]):
                best = (trial, acc)
        if best is None:
            break
        current = best[0]
    return BaselineResult(ranks=current, cost=total_cost(model, cm, current),
                          iterations=iterations, evaluator_calls=calls, feasible=True)


def rank_grid(constraints) -> list[list[int]]:
    """Reachable per-layer values: r_max_init minus multiples of the step."""
    grids = []
    for hi, lo, s in zip(constraints.r_max_init, constraints.r_min, constraints.step):
        values = list(range(hi, lo - 1, -s))
        grids.append(sorted(values))
    return grids


def brute_force(model: NetworkModel, cm: CostModel, evaluator, tau_a: float,
                config: SearchConfig | None = None,
                grid_limit: int = DEFAULT_GRID_LIMIT) -> BaselineResult:
    """Exact minimum-cost feasible rank set over the full lattice.

    Among equal-cost feasible sets the lexicographically smaller rank
    vector wins.
    """
    config = config or SearchConfig()
    constraints, _, _ = init_search(model, cm, config)
    names = _names(model, cm)
    grids = rank_grid(constraints)
    size = math.prod(len(g) for g in grids)
    if size > grid_limit:
        raise SearchError(f"lattice has {size} points, above the limit {grid_limit}")
    best = None
    calls = 0
    for ranks in product(*grids):
        acc = evaluator.evaluate(dict(zip(names, ranks)), STAGE_SCORE0)
        calls += 1
        if acc <= tau_a:
            continue
        key = (total_cost(model, cm, ranks), ranks)
        if best is None or key < best[0]:
            best = (key, ranks)
    if best is None:
        return BaselineResult(ranks=None, cost=None, iterations=1,
                              evaluator_calls=calls, feasible=False)
    (cost, _), ranks = best
    return BaselineResult(ranks=ranks, cost=cost, iterations=1,
                          evaluator_calls=calls, feasible=True)
