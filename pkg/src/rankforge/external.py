"""Client for external evaluator processes speaking the rankforge-eval protocol.

One JSON message per line over the child's stdin/stdout. The child must send
a handshake line first: {"protocol": "rankforge-eval", "version": 1}.
Requests are strictly sequential (one outstanding id per process).
"""
from __future__ import annotations

import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .accuracy import DEFAULT_SUBSET_FRACTION, EvaluatorError, STAGES

PROTOCOL_NAME = "rankforge-eval"
PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 600.0


@dataclass
class EvaluatorConfig:
    """How to obtain accuracies: evaluator kind plus its knobs."""

    kind: str = "synthetic_oracle"  # external_process | pca_energy_proxy | synthetic_oracle
    subset_fraction: float = DEFAULT_SUBSET_FRACTION
    seed: int = 0
    command: str = ""
    timeout: float = DEFAULT_TIMEOUT
    cache_path: str | None = None
    extra: dict = field(default_factory=dict)


class EvaluationCache:
    """Append-only journal of (ranks, stage) -> accuracy, for resumable runs."""

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict[str, float] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._entries[record["key"]] = float(record["accuracy"])
        self._fh = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def key(ranks: Mapping[str, int], stage: str) -> str:
        return json.dumps({"ranks": dict(sorted(ranks.items())), "stage": stage},
                          sort_keys=True, separators=(",", ":"))

    def get(self, ranks, stage):
        return self._entries.get(self.key(ranks, stage))

    def put(self, ranks, stage, accuracy: float):
        key = self.key(ranks, stage)
        if key in self._entries:
            return
        self._entries[key] = accuracy
        self._fh.write(json.dumps({"key": key, "accuracy": accuracy}) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


class ExternalEvaluator:
    """Drives one evaluator child process over the line protocol."""

    def __init__(self, command, subset_fraction: float = DEFAULT_SUBSET_FRACTION,
                 seed: int = 0, timeout: float = DEFAULT_TIMEOUT, cache_path=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.subset_fraction = subset_fraction
        self.seed = seed
        self.timeout = timeout
        self.cache = EvaluationCache(cache_path) if cache_path else None
        self._proc: subprocess.Popen | None = None
        self._next_id = 0
        self._start()

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise EvaluatorError(f"cannot start evaluator {self.command!r}: {exc}") from exc
        handshake = self._read_line()
        try:
            msg = json.loads(handshake)
        except json.JSONDecodeError as exc:
            raise EvaluatorError(f"bad handshake line: {handshake!r}") from exc
        if msg.get("protocol") != PROTOCOL_NAME or msg.get("version") != PROTOCOL_VERSION:
            raise EvaluatorError(f"unsupported evaluator handshake: {msg!r}")

    def _read_line(self) -> str:
        result: dict = {}

        def reader():
            result["line"] = self._proc.stdout.readline()

        thread = threading.Thread(target=reader, daemon=True)
        thread.start()
        thread.join(self.timeout)
        if thread.is_alive():
            self._proc.kill()
            raise EvaluatorError(f"evaluator timed out after {self.timeout}s")
        line = result.get("line", "")
        if not line:
            raise EvaluatorError("evaluator closed its output stream")
        return line

    def evaluate(self, ranks: Mapping[str, int], stage: str) -> float:
        if stage not in STAGES:
            raise EvaluatorError(f"unknown stage {stage!r}")
        if self.cache is not None:
            hit = self.cache.get(ranks, stage)
            if hit is not None:
                return hit
        if self._proc is None or self._proc.poll() is not None:
            raise EvaluatorError("evaluator process is not running")
        self._next_id += 1
        request = {
            "id": self._next_id,
            "cmd": "evaluate",
            "ranks": {name: int(r) for name, r in ranks.items()},
            "stage": stage,
            "subset_fraction": self.subset_fraction,
            "seed": self.seed,
        }
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluatorError(f"evaluator process died: {exc}") from exc
        line = self._read_line()
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluatorError(f"malformed response line: {line!r}") from exc
        if response.get("id") != self._next_id:
            raise EvaluatorError(
                f"response id {response.get('id')!r} does not match request {self._next_id}")
        if "error" in response:
            raise EvaluatorError(f"evaluator error: {response['error']}")
        if "accuracy" not in response:
            raise EvaluatorError(f"response carries no accuracy: {response!r}")
        accuracy = float(response["accuracy"])
        if self.cache is not None:
            self.cache.put(ranks, stage, accuracy)
        return accuracy

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self.cache is not None:
            self.cache.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
