"""Parameter and operation cost model for decomposed kernel layers.

Counts are multiply-accumulate operations (1 MAC = 1 op); bias terms are
excluded. The per-layer coefficient eps_l is the cost of one unit of rank,
so the total cost of a rank set is a linear form sum(eps_l * r_l) plus the
fixed cost of layers excluded from optimization.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .model import KIND_CONV, LayerSpec, NetworkModel, SCHEME_CHANNEL, ValidationError

TARGET_PARAMS = "parameters"
TARGET_OPS = "operations"

SELECT_CONV_ONLY = "conv_only"
SELECT_ALL = "all_kernel_layers"


class CostError(ValueError):
    pass


def unit_params(layer: LayerSpec) -> int:
    """Parameters added per unit of rank."""
    if layer.scheme == SCHEME_CHANNEL:
        return layer.d * layer.d * layer.S + layer.T
    return layer.d * (layer.S + layer.T)


def unit_ops(layer: LayerSpec) -> int:
    """Multiply-accumulates added per unit of rank."""
    first = layer.S * layer.W1 * layer.H1
    second = layer.T * layer.W2 * layer.H2
    if layer.scheme == SCHEME_CHANNEL:
        return layer.d * layer.d * first + second
    return layer.d * (first + second)


def layer_params(layer: LayerSpec, r: int) -> int:
    """Parameter count of the decomposed layer at rank r."""
    if r < 1:
        raise CostError(f"rank must be >= 1, got {r}")
    return r * unit_params(layer)


def layer_ops(layer: LayerSpec, r: int) -> int:
    """Multiply-accumulate count of the decomposed layer at rank r."""
    if r < 1:
        raise CostError(f"rank must be >= 1, got {r}")
    return r * unit_ops(layer)


def original_params(layer: LayerSpec) -> int:
    """Parameter count of the undecomposed layer: d^2 * S * T."""
    return layer.d * layer.d * layer.S * layer.T


def original_ops(layer: LayerSpec) -> int:
    """MAC count of the undecomposed layer: d^2 * S * T * H * W."""
    return layer.d * layer.d * layer.S * layer.T * layer.H2 * layer.W2


def max_rank(layer: LayerSpec) -> int:
    """Largest rank whose decomposed parameter count stays within d^2*S*T."""
    r = original_params(layer) // unit_params(layer)
    if r < 1:
        raise CostError(f"layer {layer.name!r} too small to decompose (max rank 0)")
    return r


@dataclass(frozen=True)
class CostModel:
    """Linear cost of a rank set over the optimized layers.

    ``optimized_layers`` are indices into the model's layer list;
    ``coefficients`` is eps_l (cost per unit rank), index-aligned with them.
    ``fixed_cost`` covers excluded layers at their current configuration.
    """

    target: str
    optimized_layers: tuple[int, ...]
    coefficients: tuple[int, ...]
    fixed_cost: int

    def __post_init__(self):
        if not self.optimized_layers:
            raise CostError("no layers selected for optimization")
        if any(eps <= 0 for eps in self.coefficients):
            raise CostError("all cost coefficients must be positive")

    def cost(self, ranks) -> int:
        if len(ranks) != len(self.optimized_layers):
            raise CostError(
                f"rank set length {len(ranks)} != optimized layer count {len(self.optimized_layers)}"
            )
        return sum(eps * r for eps, r in zip(self.coefficients, ranks)) + self.fixed_cost


def build_cost_model(model: NetworkModel, target: str,
                     layer_selection: str = SELECT_CONV_ONLY) -> CostModel:
    """Derive per-layer coefficients for the chosen target and layer subset.

    Excluded layers contribute their max-rank decomposed cost to fixed_cost,
    so reported totals and speedups cover the whole network.
    """
    if target not in (TARGET_PARAMS, TARGET_OPS):
        raise CostError(f"unknown cost target {target!r}")
    if layer_selection not in (SELECT_CONV_ONLY, SELECT_ALL):
        raise CostError(f"unknown layer selection {layer_selection!r}")
    unit = unit_params if target == TARGET_PARAMS else unit_ops
    optimized, coefficients = [], []
    fixed = 0
    for idx, layer in enumerate(model.layers):
        selected = layer_selection == SELECT_ALL or layer.kind == KIND_CONV
        if selected:
            optimized.append(idx)
            coefficients.append(unit(layer))
        else:
            fixed += max_rank(layer) * unit(layer)
    if not optimized:
        raise CostError(f"selection {layer_selection!r} matches no layers")
    return CostModel(target=target, optimized_layers=tuple(optimized),
                     coefficients=tuple(coefficients), fixed_cost=fixed)


def total_cost(model: NetworkModel, cm: CostModel, ranks) -> int:
    """Cost of the whole network at the given rank set (optimized + fixed)."""
    for idx, r in zip(cm.optimized_layers, ranks):
        if r < 1:
            raise CostError(f"layer {model.layers[idx].name!r}: rank must be >= 1")
        if r > max_rank(model.layers[idx]):
            raise CostError(f"layer {model.layers[idx].name!r}: rank {r} exceeds max rank")
    return cm.cost(ranks)


def max_rank_set(model: NetworkModel, cm: CostModel) -> tuple[int, ...]:
    return tuple(max_rank(model.layers[idx]) for idx in cm.optimized_layers)


def undecomposed_total(model: NetworkModel, target: str) -> int:
    """Whole-network cost of the original (undecomposed) model."""
    fn = original_params if target == TARGET_PARAMS else original_ops
    return sum(fn(layer) for layer in model.layers)


def speedup(model: NetworkModel, cm: CostModel, ranks) -> float:
    """Undecomposed-baseline cost divided by the decomposed cost."""
    return undecomposed_total(model, cm.target) / total_cost(model, cm, ranks)


def write_cost_report(model: NetworkModel, cm: CostModel, ranks, path):
    """Per-layer CSV: name, rank, params, ops, share of target cost, totals."""
    ranks = list(ranks)
    by_index = dict(zip(cm.optimized_layers, ranks))
    rows = []
    for idx, layer in enumerate(model.layers):
        r = by_index.get(idx, max_rank(layer))
        rows.append((layer.name, r, layer_params(layer, r), layer_ops(layer, r)))
    total_col = sum(row[2] if cm.target == TARGET_PARAMS else row[3] for row in rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "rank", "params", "ops", "share"])
        for name, r, p, c in rows:
            share = (p if cm.target == TARGET_PARAMS else c) / total_col
            writer.writerow([name, r, p, c, f"{share:.6f}"])
        writer.writerow(["total", "", sum(r[2] for r in rows), sum(r[3] for r in rows), ""])
        writer.writerow(["speedup_vs_undecomposed",
                         f"{undecomposed_total(model, cm.target) / cm.cost(ranks):.4f}",
                         "", "", ""])
