"""Accuracy models and evaluators.

An evaluator maps (rank set, training stage) to a scalar accuracy in [0, 1].
The fitted accuracy chain links the raw post-decomposition score to the
fine-tuned accuracy at 0.2 / 1 / final epochs, and inverting that chain
against a target accuracy yields the thresholds used by the search.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .lowrank import svd
from .model import NetworkModel

STAGE_SCORE0 = "score0"
STAGE_FINETUNE02 = "finetune02"
STAGE_FINETUNE1 = "finetune1"
STAGE_FINAL = "final"
STAGES = (STAGE_SCORE0, STAGE_FINETUNE02, STAGE_FINETUNE1, STAGE_FINAL)

DEFAULT_SUBSET_FRACTION = 0.10


class AccuracyError(ValueError):
    pass


class EvaluatorError(RuntimeError):
    """An evaluator failed (crash, timeout, protocol violation)."""


@dataclass(frozen=True)
class EvalPoint:
    """Accuracies of one calibration model at the four training stages."""

    acc0: float
    acc02: float
    acc1: float
    acc_final: float


@dataclass(frozen=True)
class AffineMap:
    alpha: float
    beta: float

    def __call__(self, x: float) -> float:
        return self.alpha * x + self.beta

    def invert(self, y: float) -> float:
        return (y - self.beta) / self.alpha


@dataclass(frozen=True)
class AccuracyModel:
    """Fitted chain f_a, f_b, f_c with thresholds derived from mu_star."""

    f_a: AffineMap
    f_b: AffineMap
    f_c: AffineMap
    tau_a: float
    tau_b: float
    tau_c: float
    target_accuracy: float


def _fit_line(xs: Sequence[float], ys: Sequence[float]) -> AffineMap:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.ptp(xs) == 0.0:
        raise AccuracyError("calibration points coincide; cannot fit a line")
    if len(xs) == 2:
        alpha = (ys[1] - ys[0]) / (xs[1] - xs[0])
    else:
        alpha, _ = np.polyfit(xs, ys, 1)
    beta = float(np.mean(ys) - alpha * np.mean(xs))
    alpha = float(alpha)
    if alpha <= 0.0:
        raise AccuracyError(f"fitted slope {alpha} is not positive")
    return AffineMap(alpha=alpha, beta=beta)


def fit_accuracy_model(points: Sequence[EvalPoint], mu_star: float) -> AccuracyModel:
    """Fit the stage-to-stage lines and invert them against mu_star.

    With exactly two points each line interpolates them exactly; with more,
    ordinary least squares.
    """
    if len(points) < 2:
        raise AccuracyError("need at least 2 calibration points")
    f_a = _fit_line([p.acc0 for p in points], [p.acc02 for p in points])
    f_b = _fit_line([p.acc02 for p in points], [p.acc1 for p in points])
    f_c = _fit_line([p.acc1 for p in points], [p.acc_final for p in points])
    tau_c = f_c.invert(mu_star)
    tau_b = f_b.invert(tau_c)
    tau_a = f_a.invert(tau_b)
    return AccuracyModel(f_a=f_a, f_b=f_b, f_c=f_c,
                         tau_a=tau_a, tau_b=tau_b, tau_c=tau_c,
                         target_accuracy=mu_star)


class SyntheticOracle:
    """Deterministic stand-in evaluator backed by a plain function of ranks.

    ``fn`` receives the rank vector in layer order and must return a value in
    [0, 1]. All stages return the same score unless a ``stage_offsets`` map is
    given.
    """

    def __init__(self, layer_names: Sequence[str], fn: Callable[[tuple[int, ...]], float],
                 stage_offsets: Mapping[str, float] | None = None):
        self.layer_names = tuple(layer_names)
        self.fn = fn
        self.stage_offsets = dict(stage_offsets or {})

    def evaluate(self, ranks: Mapping[str, int], stage: str = STAGE_SCORE0) -> float:
        if stage not in STAGES:
            raise EvaluatorError(f"unknown stage {stage!r}")
        vec = tuple(int(ranks[name]) for name in self.layer_names)
        value = float(self.fn(vec)) + self.stage_offsets.get(stage, 0.0)
        return min(1.0, max(0.0, value))


def power_mean_oracle(layer_names: Sequence[str], r_max: Sequence[int],
                      exponent: float = 0.1) -> SyntheticOracle:
    """Default synthetic oracle: product of (r_l / r_l^max) ** exponent."""
    r_max = tuple(r_max)

    def fn(vec):
        return math.prod((r / m) ** exponent for r, m in zip(vec, r_max))

    return SyntheticOracle(layer_names, fn)


class PcaEnergyProxy:
    """Retained singular-value energy proxy over the model's weight matrices.

    The score is exp(sum_l log(retained_l)) = prod_l retained_l, where
    retained_l is the fraction of squared singular-value mass kept at rank
    r_l. It is 1.0 at full rank and decreases monotonically with any rank.
    """

    def __init__(self, model: NetworkModel, layer_names: Sequence[str]):
        self.layer_names = tuple(layer_names)
        self._energies: dict[str, np.ndarray] = {}
        for name in self.layer_names:
            if name not in model.weights:
                raise EvaluatorError(f"pca_energy_proxy needs weights for layer {name!r}")
            sigma = svd(model.weights[name]).singular_values
            self._energies[name] = np.cumsum(sigma * sigma)

    def log_energy(self, ranks: Mapping[str, int]) -> float:
        total = 0.0
        for name in self.layer_names:
            cum = self._energies[name]
            r = min(int(ranks[name]), cum.size)
            if r < 1:
                raise EvaluatorError(f"layer {name!r}: rank must be >= 1")
            total += math.log(cum[r - 1] / cum[-1])
        return total

    def evaluate(self, ranks: Mapping[str, int], stage: str = STAGE_SCORE0) -> float:
        if stage not in STAGES:
            raise EvaluatorError(f"unknown stage {stage!r}")
        return math.exp(self.log_energy(ranks))


def score_candidates(evaluator, layer_names: Sequence[str],
                     candidates: Sequence[tuple[int, ...]],
                     max_workers: int = 1) -> list[tuple[tuple[int, ...], float]]:
    """Score each candidate rank vector at stage score0.

    Results are merged by input index, so the output order never depends on
    scheduling. Any evaluator failure aborts the whole batch.
    """
    if not candidates:
        raise AccuracyError("candidate list is empty")
    names = tuple(layer_names)

    def one(vec):
        return evaluator.evaluate(dict(zip(names, vec)), STAGE_SCORE0)

    if max_workers <= 1:
        scores = [one(vec) for vec in candidates]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            scores = list(pool.map(one, candidates))
    return [(tuple(vec), float(score)) for vec, score in zip(candidates, scores)]
