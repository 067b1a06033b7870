"""Command-line entry points: serve, selfcheck, export-model, record-golden."""
from __future__ import annotations

import argparse
import sys

from .export import export_model
from .selfcheck import record_golden, selfcheck
from .server import serve
from .session import SessionConfig


def _session_config(args) -> SessionConfig:
    return SessionConfig(seed=args.seed, n_train=args.train_size,
                         n_val=args.val_size, time_cap_s=args.time_cap)


def _build_parser():
    parser = argparse.ArgumentParser(prog="rfeval",
                                     description="Reference rankforge-eval evaluator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="answer protocol requests on stdio")
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--train-size", type=int, default=1000)
    p_serve.add_argument("--val-size", type=int, default=400)
    p_serve.add_argument("--time-cap", type=float, default=600.0,
                         help="wall-clock cap per fine-tuning call, seconds")

    p_check = sub.add_parser("selfcheck",
                             help="compare a live transcript against the golden one")
    p_rec = sub.add_parser("record-golden", help="re-record the golden transcript")
    p_rec.add_argument("--out", required=True)

    p_exp = sub.add_parser("export-model",
                           help="write the small CNN layer description file")
    p_exp.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        return serve(config=_session_config(args))
    if args.command == "selfcheck":
        return selfcheck()
    if args.command == "record-golden":
        record_golden(args.out)
        return 0
    if args.command == "export-model":
        export_model(args.out)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
