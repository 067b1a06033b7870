"""stdio request loop for the rankforge-eval line protocol."""
from __future__ import annotations

import json
import sys

from .session import EvalSession, SessionConfig

PROTOCOL_NAME = "rankforge-eval"
PROTOCOL_VERSION = 1


def handle_request(session: EvalSession, line: str) -> dict:
    """One response object per request line; errors never kill the loop."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"malformed request: {exc}"}
    req_id = request.get("id") if isinstance(request, dict) else None
    if not isinstance(request, dict) or request.get("cmd") != "evaluate":
        return {"id": req_id, "error": "unsupported command"}
    ranks = request.get("ranks")
    if not isinstance(ranks, dict) or not ranks:
        return {"id": req_id, "error": "missing or empty 'ranks'"}
    stage = request.get("stage", "score0")
    try:
        result = session.evaluate(
            {str(k): int(v) for k, v in ranks.items()}, stage,
            subset_fraction=float(request.get("subset_fraction", 0.1)),
            seed=int(request.get("seed", 0)))
    except (ValueError, KeyError, TypeError) as exc:
        return {"id": req_id, "error": str(exc)}
    return {
        "id": req_id,
        "accuracy": round(result.accuracy, 6),
        "metadata": {
            "seconds": round(result.seconds, 3),
            "time_cap_s": session.config.time_cap_s,
            "capped": result.capped,
        },
    }


def serve(session: EvalSession | None = None, config: SessionConfig | None = None,
          stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    if session is None:
        session = EvalSession(config)
    print(json.dumps({"protocol": PROTOCOL_NAME, "version": PROTOCOL_VERSION}),
          file=stdout, flush=True)
    for line in stdin:
        if not line.strip():
            continue
        response = handle_request(session, line)
        print(json.dumps(response, sort_keys=True), file=stdout, flush=True)
    return 0
