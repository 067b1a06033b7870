"""Command-line driver: plan, search, decompose, report.

Exit codes: 0 ok, 2 validation failure, 3 stage-2 fallback model returned,
4 evaluator handshake/protocol failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import accuracy as acc
from . import cost as costmod
from . import lowrank
from .external import EvaluatorConfig, ExternalEvaluator
from .model import (ModelError, NetworkModel, load_model, save_model,
                    validate_rank_set, write_weight_blob)
from .search import (SearchConfig, SearchError, SearchTrace, half_cost_ranks,
                     init_search, run_stage1, run_stage2)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FALLBACK = 3
EXIT_EVALUATOR = 4

EVALUATOR_ENV = "RANKFORGE_EVALUATOR"


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankforge",
                                     description="Model-wise automatic rank selection")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--model", help="model description file")
        p.add_argument("--target", choices=[costmod.TARGET_PARAMS, costmod.TARGET_OPS],
                       default=None)
        p.add_argument("--layers", choices=[costmod.SELECT_CONV_ONLY, costmod.SELECT_ALL],
                       default=None, dest="layer_selection")
        p.add_argument("--delta-s", type=float, default=None)
        p.add_argument("--delta-m", type=float, default=None)
        p.add_argument("--delta-r", type=float, default=None)
        p.add_argument("--sigma", type=int, default=None)
        p.add_argument("--candidates", type=int, default=None, dest="n_candidates")
        p.add_argument("--seed", type=int, default=None)

    p_plan = sub.add_parser("plan", help="print the search-space summary")
    common(p_plan)

    p_search = sub.add_parser("search", help="run stage-1 (and optionally stage-2) search")
    common(p_search)
    p_search.add_argument("--mu-star", type=float, default=None,
                          help="target accuracy in [0,1]")
    p_search.add_argument("--tau-a", type=float, default=None,
                          help="override the score0 threshold directly")
    p_search.add_argument("--evaluator", default=None,
                          help=f"external evaluator command (or ${EVALUATOR_ENV})")
    p_search.add_argument("--subset-fraction", type=float, default=None)
    p_search.add_argument("--cache", default=None, help="evaluation cache journal path")
    p_search.add_argument("--calibration", choices=["identity", "two-point"], default=None)
    p_search.add_argument("--start", choices=["max", "half-cost"], default=None)
    p_search.add_argument("--stage2", action="store_true")
    p_search.add_argument("--out", required=True, help="output directory")

    p_dec = sub.add_parser("decompose", help="decompose weights at selected ranks")
    common(p_dec)
    p_dec.add_argument("--ranks", required=True, help="JSON rank-set file")
    p_dec.add_argument("--out", required=True, help="output model file path")

    p_rep = sub.add_parser("report", help="render a trace to CSV files")
    p_rep.add_argument("--trace", required=True)
    p_rep.add_argument("--out", required=True, help="output directory")
    return parser


def _merged(args, key, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if getattr(args, "_config_file", None) and key in args._config_file:
        return args._config_file[key]
    return default


def _search_config(args) -> SearchConfig:
    cfg = SearchConfig()
    cfg.delta_s = float(_merged(args, "delta_s", cfg.delta_s))
    cfg.delta_m = float(_merged(args, "delta_m", cfg.delta_m))
    cfg.delta_r = float(_merged(args, "delta_r", cfg.delta_r))
    sigma = _merged(args, "sigma")
    cfg.sigma = int(sigma) if sigma is not None else None
    cfg.n_candidates = int(_merged(args, "n_candidates", cfg.n_candidates))
    cfg.seed = int(_merged(args, "seed", 0))
    cfg.start = _merged(args, "start", "max")
    return cfg


def _load_inputs(args):
    model_path = _merged(args, "model")
    if not model_path:
        raise ModelError("no model file given (--model or config key 'model')")
    model = load_model(model_path)
    target = _merged(args, "target", costmod.TARGET_OPS)
    selection = _merged(args, "layer_selection", costmod.SELECT_CONV_ONLY)
    cm = costmod.build_cost_model(model, target, selection)
    return model, cm


def cmd_plan(args) -> int:
    try:
        model, cm = _load_inputs(args)
        config = _search_config(args)
        constraints, plan, _ = init_search(model, cm, config)
    except (ModelError, costmod.CostError, SearchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    c_max = cm.cost(constraints.r_max_init)
    print(f"{'layer':<14}{'r_max':>8}{'r_min':>8}{'step':>6}{'epsilon':>14}")
    for pos, idx in enumerate(cm.optimized_layers):
        print(f"{model.layers[idx].name:<14}{constraints.r_max_init[pos]:>8}"
              f"{constraints.r_min[pos]:>8}{constraints.step[pos]:>6}"
              f"{cm.coefficients[pos]:>14}")
    print(f"C_max = {c_max}")
    print(f"delta_C_0 = {plan.delta_c}")
    print(f"sigma = {plan.sigma}")
    print(f"delta_C_min = {plan.delta_c_min}")
    return EXIT_OK


def _make_evaluator(args, model: NetworkModel, cm, config: SearchConfig):
    command = _merged(args, "evaluator") or os.environ.get(EVALUATOR_ENV)
    names = [model.layers[i].name for i in cm.optimized_layers]
    if command:
        subset = float(_merged(args, "subset_fraction", acc.DEFAULT_SUBSET_FRACTION))
        return ExternalEvaluator(command, subset_fraction=subset, seed=config.seed,
                                 cache_path=_merged(args, "cache")), True
    if all(name in model.weights for name in names):
        return acc.PcaEnergyProxy(model, names), False
    r_max = [costmod.max_rank(model.layers[i]) for i in cm.optimized_layers]
    return acc.power_mean_oracle(names, r_max), False


def _identity_accuracy_model(mu_star: float) -> acc.AccuracyModel:
    ident = acc.AffineMap(1.0, 0.0)
    return acc.AccuracyModel(f_a=ident, f_b=ident, f_c=ident,
                             tau_a=mu_star, tau_b=mu_star, tau_c=mu_star,
                             target_accuracy=mu_star)


def _calibrate(evaluator, model, cm, config, mu_star: float) -> acc.AccuracyModel:
    """Fit the chain from the max-cost and half-cost initial models."""
    constraints, _, _ = init_search(model, cm, config)
    names = [model.layers[i].name for i in cm.optimized_layers]
    points = []
    for ranks in (constraints.r_max_init, half_cost_ranks(model, cm, constraints)):
        rank_map = dict(zip(names, ranks))
        points.append(acc.EvalPoint(
            acc0=evaluator.evaluate(rank_map, acc.STAGE_SCORE0),
            acc02=evaluator.evaluate(rank_map, acc.STAGE_FINETUNE02),
            acc1=evaluator.evaluate(rank_map, acc.STAGE_FINETUNE1),
            acc_final=evaluator.evaluate(rank_map, acc.STAGE_FINAL)))
    return acc.fit_accuracy_model(points, mu_star)


def cmd_search(args) -> int:
    try:
        model, cm = _load_inputs(args)
        config = _search_config(args)
    except (ModelError, costmod.CostError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    mu_star = float(_merged(args, "mu_star", 0.5))
    try:
        evaluator, is_external = _make_evaluator(args, model, cm, config)
    except acc.EvaluatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    try:
        tau_a = _merged(args, "tau_a")
        calibration = _merged(args, "calibration") or ("two-point" if is_external else "identity")
        if tau_a is not None:
            accuracy_model = _identity_accuracy_model(float(tau_a))
        elif calibration == "two-point":
            accuracy_model = _calibrate(evaluator, model, cm, config, mu_star)
        else:
            accuracy_model = _identity_accuracy_model(mu_star)

        trace = run_stage1(model, cm, accuracy_model, evaluator, config,
                           trace_path=out_dir / "trace.jsonl")
        names = [model.layers[i].name for i in cm.optimized_layers]
        final = trace.accepted[-1].ranks if trace.accepted else None
        fallback_used = False
        if args.stage2:
            constraints, _, _ = init_search(model, cm, config)
            fallback = half_cost_ranks(model, cm, constraints)
            result = run_stage2(trace, accuracy_model, evaluator, fallback=fallback)
            final = result.ranks
            fallback_used = not result.passed
        if final is not None:
            (out_dir / "ranks.json").write_text(
                json.dumps(dict(zip(names, final)), indent=2, sort_keys=True) + "\n",
                encoding="utf-8")
        return EXIT_FALLBACK if fallback_used else EXIT_OK
    except acc.EvaluatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except SearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    finally:
        if hasattr(evaluator, "close"):
            evaluator.close()


def cmd_decompose(args) -> int:
    try:
        model, cm = _load_inputs(args)
        with open(args.ranks, encoding="utf-8") as fh:
            rank_map = {k: int(v) for k, v in json.load(fh).items()}
    except (ModelError, costmod.CostError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    names = [model.layers[i].name for i in cm.optimized_layers]
    missing = [n for n in names if n not in model.weights]
    if missing:
        print(f"error: layers without weights: {missing}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        ranks = validate_rank_set([rank_map[n] for n in names], len(names))
    except (KeyError, ModelError) as exc:
        print(f"error: bad rank set: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["[model]", f"source = {_merged(args, 'model')}", ""]
    for name, r in zip(names, ranks):
        layer = model.layer(name)
        dec = lowrank.decompose(model.weights[name], r, scheme=layer.scheme)
        for part, matrix in (("1", dec.K1), ("2", dec.K2)):
            blob = f"{out_path.stem}.{name}.{part}.bin"
            write_weight_blob(out_path.parent / blob, matrix)
            lines += [f"[sublayer {name}.{part}]", f"source = {name}",
                      f"part = {part}", f"rank = {r}", f"weights = {blob}", ""]
    out_path.write_text("\n".join(lines), encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        trace = SearchTrace.load(args.trace)
    except (SearchError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "cost_vs_iteration.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "delta_c", "cost", "best_score", "accepted"])
        for rec in trace.records:
            writer.writerow([rec.iteration, rec.delta_c, rec.cost,
                             f"{rec.best_score:.6f}", int(rec.accepted)])
    with open(out_dir / "accuracy_vs_cost.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cost", "accuracy"])
        for rec in trace.records:
            if rec.accepted:
                writer.writerow([rec.cost, f"{rec.best_score:.6f}"])
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    args._config_file = _load_config_file(args.config) if getattr(args, "config", None) else {}
    handler = {"plan": cmd_plan, "search": cmd_search,
               "decompose": cmd_decompose, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
