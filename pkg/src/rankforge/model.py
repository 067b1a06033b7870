"""Network description: layer dimensions, optional weights, and file formats."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KIND_CONV = "convolutional"
KIND_FC = "fully_connected"
SCHEME_SPATIAL = "spatial"
SCHEME_CHANNEL = "channel"

_KINDS = (KIND_CONV, KIND_FC)
_SCHEMES = (SCHEME_SPATIAL, SCHEME_CHANNEL)

_BLOB_MAGIC = struct.Struct("<QQ")


class ModelError(Exception):
    """Base class for model description errors."""


class ParseError(ModelError):
    """Malformed model file."""


class ValidationError(ModelError):
    """A layer or model invariant is violated."""


@dataclass(frozen=True)
class LayerSpec:
    """Static dimensions of one kernel layer and its decomposition scheme.

    ``d`` is the filter window size, ``S``/``T`` the input/output channel
    counts, and (H1, W1)/(H2, W2) the output spatial sizes of the first and
    second decomposed sub-layers. Fully-connected layers have d = 1 and unit
    spatial sizes.
    """

    name: str
    kind: str
    d: int
    S: int
    T: int
    H1: int = 1
    W1: int = 1
    H2: int = 1
    W2: int = 1
    scheme: str = SCHEME_SPATIAL

    def __post_init__(self):
        if not self.name:
            raise ValidationError("layer name must be non-empty")
        if self.kind not in _KINDS:
            raise ValidationError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if self.scheme not in _SCHEMES:
            raise ValidationError(f"layer {self.name!r}: unknown scheme {self.scheme!r}")
        for attr in ("d", "S", "T", "H1", "W1", "H2", "W2"):
            v = getattr(self, attr)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"layer {self.name!r}: {attr} must be a positive integer, got {v!r}")
        if self.kind == KIND_FC:
            if self.d != 1:
                raise ValidationError(f"layer {self.name!r}: fully_connected requires d=1")
            if (self.H1, self.W1, self.H2, self.W2) != (1, 1, 1, 1):
                raise ValidationError(f"layer {self.name!r}: fully_connected requires unit spatial sizes")

    def weight_shape(self) -> tuple[int, int]:
        """Shape of the reshaped kernel matrix K under this layer's scheme."""
        if self.scheme == SCHEME_SPATIAL:
            return (self.d * self.S, self.d * self.T)
        return (self.d * self.d * self.S, self.T)


@dataclass
class NetworkModel:
    """An ordered list of kernel layers with optional per-layer weight matrices."""

    layers: tuple[LayerSpec, ...]
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.validate()

    def validate(self):
        if not self.layers:
            raise ValidationError("model has no layers")
        seen = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValidationError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
        for name, w in self.weights.items():
            if name not in seen:
                raise ValidationError(f"weights for unknown layer {name!r}")
            layer = self.layer(name)
            if w.ndim != 2 or w.shape != layer.weight_shape():
                raise ValidationError(
                    f"layer {name!r}: weight shape {w.shape} does not match "
                    f"scheme {layer.scheme!r} expectation {layer.weight_shape()}"
                )

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        if self.layers != other.layers or self.metadata != other.metadata:
            return False
        if set(self.weights) != set(other.weights):
            return False
        return all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights)


def validate_rank_set(ranks, n_layers: int) -> tuple[int, ...]:
    """Check a rank set: length matches and every rank is a positive integer."""
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != n_layers:
        raise ValidationError(f"rank set length {len(ranks)} != layer count {n_layers}")
    if any(r < 1 for r in ranks):
        raise ValidationError(f"rank set contains non-positive rank: {ranks}")
    return ranks


def write_weight_blob(path, matrix: np.ndarray):
    """Write a dense matrix: two u64 row/col counts, then row-major f32 LE."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_BLOB_MAGIC.pack(m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_weight_blob(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_BLOB_MAGIC.size)
        if len(header) != _BLOB_MAGIC.size:
            raise ParseError(f"{path}: truncated weight blob header")
        rows, cols = _BLOB_MAGIC.unpack(header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ParseError(f"{path}: expected {rows * cols} values, got {data.size}")
    return data.reshape(rows, cols).copy()


_INT_FIELDS = ("d", "S", "T", "H1", "W1", "H2", "W2")


def load_model(path) -> NetworkModel:
    """Load a model description file, resolving weight blobs relative to it."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    metadata: dict[str, str] = {}
    layer_blocks: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            header = line[1:-1].strip()
            if header == "model":
                section, current = "model", None
            elif header.startswith("layer "):
                name = header[len("layer "):].strip()
                if not name:
                    raise ParseError(f"{path}:{lineno}: layer section without a name")
                current = {}
                layer_blocks.append((name, current))
                section = "layer"
            else:
                raise ParseError(f"{path}:{lineno}: unknown section {header!r}")
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section == "model":
            metadata[key] = value
        elif section == "layer":
            current[key] = value
        else:
            raise ParseError(f"{path}:{lineno}: key/value outside any section")

    layers = []
    weights: dict[str, np.ndarray] = {}
    for name, block in layer_blocks:
        fields = {"name": name}
        try:
            fields["kind"] = block["kind"]
            fields["scheme"] = block.get("scheme", SCHEME_SPATIAL)
            for key in _INT_FIELDS:
                if key in block:
                    fields[key] = int(block[key])
        except KeyError as exc:
            raise ParseError(f"{path}: layer {name!r}: missing field {exc}") from exc
        except ValueError as exc:
            raise ParseError(f"{path}: layer {name!r}: {exc}") from exc
        try:
            layer = LayerSpec(**fields)
        except TypeError as exc:
            raise ParseError(f"{path}: layer {name!r}: {exc}") from exc
        layers.append(layer)
        if "weights" in block:
            try:
                weights[name] = read_weight_blob(path.parent / block["weights"])
            except OSError as exc:
                raise ModelError(
                    f"{path}: layer {name!r}: cannot read weights: {exc}") from exc
    return NetworkModel(layers=tuple(layers), weights=weights, metadata=metadata)


def save_model(model: NetworkModel, path):
    """Write a model file; weight blobs go next to it as <stem>.<layer>.bin."""
    path = Path(path)
    model.validate()
    lines = ["[model]"]
    for key in sorted(model.metadata):
        lines.append(f"{key} = {model.metadata[key]}")
    lines.append("")
    for layer in model.layers:
        lines.append(f"[layer {layer.name}]")
        lines.append(f"kind = {layer.kind}")
        lines.append(f"scheme = {layer.scheme}")
        for key in _INT_FIELDS:
            lines.append(f"{key} = {getattr(layer, key)}")
        if layer.name in model.weights:
            blob_name = f"{path.stem}.{layer.name}.bin"
            write_weight_blob(path.parent / blob_name, model.weights[layer.name])
            lines.append(f"weights = {blob_name}")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
