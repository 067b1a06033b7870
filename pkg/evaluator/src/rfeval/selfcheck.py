"""Protocol conformance check against a recorded golden transcript."""
from __future__ import annotations

import io
import json
from importlib import resources

from .server import serve
from .session import EvalSession, SessionConfig

GOLDEN_NAME = "transcript.jsonl"

# fixed request script (also the one used to record the golden transcript)
REQUEST_SCRIPT = [
    {"id": 1, "cmd": "evaluate", "stage": "score0",
     "ranks": {"conv1": 6, "conv2": 16, "conv3": 24, "conv4": 32, "fc5": 9},
     "subset_fraction": 0.1, "seed": 0},
    {"id": 2, "cmd": "evaluate", "stage": "score0",
     "ranks": {"conv1": 3, "conv2": 8, "conv3": 12, "conv4": 16, "fc5": 5},
     "subset_fraction": 0.1, "seed": 0},
    {"id": 3, "cmd": "evaluate", "stage": "finetune02",
     "ranks": {"conv1": 3, "conv2": 8, "conv3": 12, "conv4": 16, "fc5": 5},
     "subset_fraction": 0.1, "seed": 0},
    {"id": 4, "cmd": "evaluate", "stage": "bogus-stage",
     "ranks": {"conv1": 3}, "subset_fraction": 0.1, "seed": 0},
    "this is not json",
    {"id": 6, "cmd": "evaluate", "stage": "score0",
     "ranks": {"conv1": 3, "conv2": 8, "conv3": 12, "conv4": 16, "fc5": 5},
     "subset_fraction": 0.1, "seed": 0},
]


def run_script(session: EvalSession | None = None) -> list[str]:
    """Feed the fixed script through the server loop, return response lines."""
    stdin = io.StringIO("\n".join(
        req if isinstance(req, str) else json.dumps(req)
        for req in REQUEST_SCRIPT) + "\n")
    stdout = io.StringIO()
    serve(session=session, config=SessionConfig(), stdin=stdin, stdout=stdout)
    return stdout.getvalue().splitlines()


def load_golden() -> list[str]:
    ref = resources.files("rfeval").joinpath("golden", GOLDEN_NAME)
    return ref.read_text(encoding="utf-8").splitlines()


def record_golden(path) -> list[str]:
    lines = run_script()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return lines


def canonical(line: str) -> str:
    """Comparison form of a transcript line: wall-clock timing dropped."""
    obj = json.loads(line)
    if isinstance(obj, dict) and isinstance(obj.get("metadata"), dict):
        obj["metadata"].pop("seconds", None)
    return json.dumps(obj, sort_keys=True)


def selfcheck(out=None) -> int:
    """0 when the live transcript matches the golden one; 1 otherwise."""
    import sys

    out = out or sys.stdout
    golden = load_golden()
    live = run_script()
    status = 0
    for i, (g, l) in enumerate(zip(golden, live)):
        ok = canonical(g) == canonical(l)
        if not ok:
            status = 1
        print(f"line {i}: {'ok' if ok else 'MISMATCH'}", file=out)
        if not ok:
            print(f"  golden: {g}", file=out)
            print(f"  live:   {l}", file=out)
    if len(golden) != len(live):
        status = 1
        print(f"length mismatch: golden={len(golden)} live={len(live)}", file=out)
    print("selfcheck " + ("passed" if status == 0 else "FAILED"), file=out)
    return status
