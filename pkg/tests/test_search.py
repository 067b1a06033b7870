import json
import math
import random
from itertools import product

import numpy as np
import pytest

from rankforge.accuracy import AccuracyModel, AffineMap, SyntheticOracle
from rankforge.cost import CostModel, total_cost
from rankforge.model import LayerSpec, NetworkModel
from rankforge.search import (NoCandidatesError, RejectionFrontier, SearchConfig,
                              SearchTrace, half_cost_ranks, init_search,
                              reject_and_update, run_stage1, run_stage2,
                              sample_candidates, select_step)


def grid_model(r_maxes, coefficients=None, target="parameters"):
    """FC-layer model whose per-layer max ranks equal r_maxes exactly."""
    layers = tuple(
        LayerSpec(name=f"l{i}", kind="fully_connected", d=1, S=2 * m, T=2 * m)
        for i, m in enumerate(r_maxes))
    model = NetworkModel(layers=layers)
    coeffs = tuple(coefficients or (1,) * len(r_maxes))
    cm = CostModel(target=target, optimized_layers=tuple(range(len(layers))),
                   coefficients=coeffs, fixed_cost=0)
    return model, cm


def flat_model(tau=0.0):
    return AccuracyModel(f_a=AffineMap(1, 0), f_b=AffineMap(1, 0), f_c=AffineMap(1, 0),
                         tau_a=tau, tau_b=tau, tau_c=tau, target_accuracy=tau)


def oracle_from(fn, n_layers):
    return SyntheticOracle([f"l{i}" for i in range(n_layers)], fn)


# ---------------------------------------------------------------- init_search

def test_init_single_layer_boundaries():
    model, cm = grid_model([100])
    constraints, plan, r0 = init_search(model, cm, SearchConfig(seed=1))
    assert constraints.r_min == (10,)
    assert constraints.step == (1,)
    assert r0 == (100,)


def test_init_step_floor():
    model, cm = grid_model([350])
    constraints, _, _ = init_search(model, cm, SearchConfig())
    assert constraints.step == (3,)


def test_init_delta_c0(alexnet):
    from rankforge.cost import build_cost_model, max_rank_set
    cm = build_cost_model(alexnet, "operations", "all_kernel_layers")
    config = SearchConfig()
    constraints, plan, _ = init_search(alexnet, cm, config)
    # independent brute-force summation of C_max
    c_max = 0
    for pos, idx in enumerate(cm.optimized_layers):
        c_max += cm.coefficients[pos] * constraints.r_max_init[pos]
    assert c_max == total_cost(alexnet, cm, max_rank_set(alexnet, cm))
    assert plan.delta_c == math.floor(config.delta_r * c_max)


def test_half_cost_start():
    model, cm = grid_model([100, 100])
    constraints, _, r0 = init_search(model, cm, SearchConfig(start="half-cost"))
    c = total_cost(model, cm, r0)
    assert c == pytest.approx(0.5 * 200, rel=0.03)


# ---------------------------------------------------------- sample_candidates

def test_sample_one_dimensional_exact():
    model, cm = grid_model([100])
    config = SearchConfig(sigma=0)
    constraints, plan, r0 = init_search(model, cm, config)
    plan.delta_c = 10
    out = sample_candidates(plan, constraints, cm.coefficients, r0,
                            RejectionFrontier(), 10, random.Random(0))
    assert out == [(90,)]


def test_sample_exhaustive_lattice():
    model, cm = grid_model([100, 100])
    config = SearchConfig(sigma=0, delta_r=0.05)
    constraints, plan, r0 = init_search(model, cm, config)
    plan.delta_c = 4
    out = sample_candidates(plan, constraints, cm.coefficients, r0,
                            RejectionFrontier(), 10, random.Random(0))
    expected = {(96, 100), (97, 99), (98, 98), (99, 97), (100, 96)}
    assert set(out) == expected


def test_sample_respects_frontier():
    model, cm = grid_model([100, 100])
    config = SearchConfig(sigma=0)
    constraints, plan, r0 = init_search(model, cm, config)
    plan.delta_c = 4
    frontier = RejectionFrontier([(96, 100)])
    out = sample_candidates(plan, constraints, cm.coefficients, r0,
                            frontier, 10, random.Random(0))
    assert (96, 100) not in out
    assert len(out) == 4


def test_sample_window_and_caps_random_path():
    # five layers forces the sampling path
    r_maxes = [60, 80, 100, 120, 140]
    model, cm = grid_model(r_maxes, coefficients=(3, 5, 7, 11, 13))
    config = SearchConfig(seed=3)
    constraints, plan, r0 = init_search(model, cm, config)
    caps = plan.rank_caps(constraints, cm.coefficients)
    out = sample_candidates(plan, constraints, cm.coefficients, r0,
                            RejectionFrontier(), 50, random.Random(3))
    assert out
    for cand in out:
        delta = [a - b for a, b in zip(r0, cand)]
        assert all(0 <= d <= c for d, c in zip(delta, caps))
        assert all(d % s == 0 for d, s in zip(delta, constraints.step))
        red = sum(e * d for e, d in zip(cm.coefficients, delta))
        assert plan.delta_c - plan.sigma <= red <= plan.delta_c + plan.sigma
        assert all(c >= m for c, m in zip(cand, constraints.r_min))


def test_sample_deterministic():
    r_maxes = [60, 80, 100, 120, 140]
    model, cm = grid_model(r_maxes, coefficients=(3, 5, 7, 11, 13))
    constraints, plan, r0 = init_search(model, cm, SearchConfig())
    a = sample_candidates(plan, constraints, cm.coefficients, r0,
                          RejectionFrontier(), 50, random.Random(7))
    b = sample_candidates(plan, constraints, cm.coefficients, r0,
                          RejectionFrontier(), 50, random.Random(7))
    assert a == b


def test_sample_empty_raises():
    model, cm = grid_model([100])
    config = SearchConfig(sigma=0)
    constraints, plan, r0 = init_search(model, cm, config)
    plan.delta_c = 7
    frontier = RejectionFrontier([(93,)])  # blocks the only candidate
    with pytest.raises(NoCandidatesError):
        sample_candidates(plan, constraints, cm.coefficients, r0,
                          frontier, 10, random.Random(0))


# ----------------------------------------------------------- RejectionFrontier

def test_frontier_dominance():
    f = RejectionFrontier()
    f.insert((5, 5))
    assert f.contains((4, 5))
    assert f.contains((5, 5))
    assert not f.contains((6, 5))


def test_frontier_antichain_pruning():
    f = RejectionFrontier()
    f.insert((5, 5))
    f.insert((6, 7))
    assert f.maximal_sets == [(6, 7)]
    f.insert((7, 6))
    assert set(f.maximal_sets) == {(6, 7), (7, 6)}


def test_reject_and_update_threshold_boundary():
    f = RejectionFrontier()
    scored = [((5, 5), 0.7), ((6, 6), 0.71), ((4, 9), 0.2)]
    n = reject_and_update(f, scored, 0.7)  # at-threshold scores are rejected too
    assert n == 2
    assert f.contains((5, 5)) and f.contains((4, 9))
    assert not f.contains((6, 6))


def test_frontier_vs_naive_oracle():
    rng = np.random.default_rng(0)
    for L in (2, 3, 4):
        f = RejectionFrontier()
        inserted = []
        for _ in range(500):
            point = tuple(int(x) for x in rng.integers(1, 21, size=L))
            if rng.random() < 0.4:
                f.insert(point)
                inserted.append(point)
            elif inserted:
                naive = any(all(a <= b for a, b in zip(point, box)) for box in inserted)
                assert f.contains(point) == naive
        # antichain invariant
        for a in f.maximal_sets:
            for b in f.maximal_sets:
                if a is not b:
                    assert not all(x <= y for x, y in zip(a, b))


# ----------------------------------------------------------------- select_step

def test_select_argmax():
    model, cm = grid_model([100, 100])
    scored = [((90, 90), 0.9), ((95, 95), 0.8)]
    accepted, ranks, score = select_step(scored, 0.7, model, cm)
    assert accepted and ranks == (90, 90) and score == 0.9


def test_select_all_below_threshold():
    model, cm = grid_model([100, 100])
    scored = [((90, 90), 0.5), ((95, 95), 0.6)]
    accepted, ranks, score = select_step(scored, 0.7, model, cm)
    assert not accepted and ranks == (95, 95)


def test_select_tie_break_oracle():
    model, cm = grid_model([100, 100], coefficients=(2, 3))
    rng = random.Random(1)
    for _ in range(50):
        scored = []
        for _ in range(8):
            ranks = (rng.randint(10, 100), rng.randint(10, 100))
            scored.append((ranks, rng.choice([0.8, 0.9])))
        accepted, ranks, score = select_step(scored, 0.1, model, cm)
        # oracle: documented total order applied literally
        expected = sorted(scored, key=lambda it: (-it[1],
                                                  total_cost(model, cm, it[0]),
                                                  it[0]))[0]
        assert (ranks, score) == expected


# ------------------------------------------------------------------- stage 1

def feasibility_oracle(r_dagger, r_max):
    """Monotone: 1.0 iff elementwise >= r_dagger, smoothly below otherwise."""

    def fn(vec):
        return min(min(r / d, 1.0) for r, d in zip(vec, r_dagger))

    return fn


def test_stage1_reaches_known_feasible_floor():
    r_maxes = [30, 30, 30]
    r_dagger = (12, 19, 7)
    model, cm = grid_model(r_maxes, coefficients=(2, 3, 5))
    oracle = oracle_from(feasibility_oracle(r_dagger, r_maxes), 3)
    # delta_r large enough that the per-layer cap stays positive near the floor
    config = SearchConfig(seed=11, n_candidates=200, delta_r=0.2)
    trace = run_stage1(model, cm, flat_model(0.99), oracle, config)
    final = trace.accepted[-1].ranks
    assert all(f >= d for f, d in zip(final, r_dagger))
    # brute-force the minimal feasible cost on the same grid
    constraints, _, _ = init_search(model, cm, config)
    feasible_costs = [
        sum(e * r for e, r in zip(cm.coefficients, ranks))
        for ranks in product(*[range(lo, hi + 1) for lo, hi in
                               zip(constraints.r_min, r_maxes)])
        if all(r >= d for r, d in zip(ranks, r_dagger))]
    optimum = min(feasible_costs)
    slack = sum(s for s in constraints.step) * len(r_maxes)
    assert total_cost(model, cm, final) <= optimum + cm_max_step(cm, constraints) + slack


def cm_max_step(cm, constraints):
    return max(e * s for e, s in zip(cm.coefficients, constraints.step))


def test_stage1_unconstrained_descent():
    model, cm = grid_model([50, 50])
    oracle = oracle_from(lambda vec: 1.0, 2)
    config = SearchConfig(seed=2, delta_r=0.2)
    trace = run_stage1(model, cm, flat_model(0.0), oracle, config)
    final = trace.accepted[-1].ranks
    constraints, plan, _ = init_search(model, cm, config)
    floor_cost = sum(e * m for e, m in zip(cm.coefficients, constraints.r_min))
    assert total_cost(model, cm, final) <= floor_cost + 2 * plan.delta_c_min


def test_stage1_accepted_costs_strictly_decrease():
    model, cm = grid_model([40, 40, 40])
    oracle = oracle_from(feasibility_oracle((15, 15, 15), [40, 40, 40]), 3)
    trace = run_stage1(model, cm, flat_model(0.99), oracle, SearchConfig(seed=5))
    costs = [r.cost for r in trace.accepted]
    assert costs and all(a > b for a, b in zip(costs, costs[1:]))
    for r in trace.accepted:
        assert r.best_score > 0.99


def test_stage1_r_max_update():
    # every accepted rank set is elementwise <= the previous one (Eq-9 style)
    model, cm = grid_model([40, 40])
    oracle = oracle_from(feasibility_oracle((10, 10), [40, 40]), 2)
    trace = run_stage1(model, cm, flat_model(0.99), oracle, SearchConfig(seed=6))
    accepted = [r.ranks for r in trace.accepted]
    for prev, cur in zip(accepted, accepted[1:]):
        assert all(c <= p for c, p in zip(cur, prev))


def test_stage1_delta_c_halves_on_failures():
    model, cm = grid_model([100, 100])
    oracle = oracle_from(lambda vec: 0.1, 2)  # nothing ever passes
    trace = run_stage1(model, cm, flat_model(0.99), oracle, SearchConfig(seed=3))
    deltas = [r.delta_c for r in trace.records]
    assert all(b == a // 2 for a, b in zip(deltas, deltas[1:]))
    assert not trace.accepted


def test_stage1_trace_byte_identical():
    model, cm = grid_model([40, 40, 40])
    config = SearchConfig(seed=9)
    oracle = oracle_from(feasibility_oracle((12, 12, 12), [40, 40, 40]), 3)
    out = []
    for _ in range(2):
        trace = run_stage1(model, cm, flat_model(0.95), oracle, config)
        lines = [json.dumps({"seed": trace.seed})] + [r.to_json() for r in trace.records]
        out.append("\n".join(lines))
    assert out[0] == out[1]


def test_stage1_candidates_respect_caps():
    # sampled reductions never exceed the per-layer caps, over many iterations
    r_maxes = [60, 80, 100, 120, 140]
    model, cm = grid_model(r_maxes, coefficients=(3, 5, 7, 11, 13))
    constraints, plan, r0 = init_search(model, cm, SearchConfig())
    rng = random.Random(0)
    frontier = RejectionFrontier()
    r_prev = r0
    for _ in range(50):
        caps = plan.rank_caps(constraints, cm.coefficients)
        try:
            cands = sample_candidates(plan, constraints, cm.coefficients, r_prev,
                                      frontier, 20, rng)
        except NoCandidatesError:
            break
        for cand in cands:
            delta = [a - b for a, b in zip(r_prev, cand)]
            assert all(0 <= d <= c for d, c in zip(delta, caps))
        r_prev = cands[0]
        constraints.r_max = list(r_prev)


def test_trace_dump_load_round_trip(tmp_path):
    model, cm = grid_model([40, 40])
    oracle = oracle_from(feasibility_oracle((10, 10), [40, 40]), 2)
    trace = run_stage1(model, cm, flat_model(0.9), oracle, SearchConfig(seed=4),
                       trace_path=tmp_path / "trace.jsonl")
    again = SearchTrace.load(tmp_path / "trace.jsonl")
    assert again.seed == trace.seed
    assert again.records == trace.records


# ------------------------------------------------------------------- stage 2

class ScriptedEvaluator:
    """Returns per-(ranks, stage) accuracies from a table; records calls."""

    def __init__(self, table, default=0.0):
        self.table = table
        self.default = default
        self.calls = []

    def evaluate(self, ranks, stage):
        key = (tuple(sorted(ranks.items())), stage)
        self.calls.append(key)
        return self.table.get(key, self.default)


def make_trace(accepted_ranks):
    from rankforge.search import TraceRecord
    trace = SearchTrace(seed=0, layer_names=("l0", "l1"))
    for i, ranks in enumerate(accepted_ranks, 1):
        trace.records.append(TraceRecord(
            iteration=i, delta_c=10, candidate_count=5, best_score=0.9,
            accepted=True, ranks=tuple(ranks), cost=100 - i, rejected=0))
    return trace


def test_stage2_last_passes_immediately():
    trace = make_trace([(30, 30), (20, 20)])
    am = flat_model(0.5)
    ev = ScriptedEvaluator({}, default=0.9)
    result = run_stage2(trace, am, ev)
    assert result.passed and result.ranks == (20, 20)
    assert len(ev.calls) == 2  # finetune02 + finetune1 only


def test_stage2_falls_back_to_previous():
    trace = make_trace([(30, 30), (20, 20)])
    am = flat_model(0.5)
    key_fail = ((("l0", 20), ("l1", 20)), "finetune1")
    ev = ScriptedEvaluator({key_fail: 0.1}, default=0.9)
    result = run_stage2(trace, am, ev)
    assert result.passed and result.ranks == (30, 30)


def test_stage2_tau_b_early_termination():
    trace = make_trace([(30, 30), (20, 20)])
    am = flat_model(0.5)
    key_fail = ((("l0", 20), ("l1", 20)), "finetune02")
    ev = ScriptedEvaluator({key_fail: 0.1}, default=0.9)
    result = run_stage2(trace, am, ev)
    assert result.ranks == (30, 30)
    # the failing set never reaches finetune1
    assert ((("l0", 20), ("l1", 20)), "finetune1") not in ev.calls


def test_stage2_all_fail_fallback():
    trace = make_trace([(40, 40), (30, 30), (20, 20)])
    am = flat_model(0.5)
    table = {}
    for ranks in [(40, 40), (30, 30), (20, 20)]:
        table[((("l0", ranks[0]), ("l1", ranks[1])), "finetune02")] = 0.9
        table[((("l0", ranks[0]), ("l1", ranks[1])), "finetune1")] = 0.1
    ev = ScriptedEvaluator(table)
    result = run_stage2(trace, am, ev, fallback=(50, 50))
    assert not result.passed
    assert result.ranks == (50, 50)
    assert len(ev.calls) == 2 * 3
