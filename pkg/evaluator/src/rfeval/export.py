"""Export the small CNN's layer description for the search engine."""
from __future__ import annotations

from pathlib import Path

# name -> (kind, scheme, d, S, T, H1, W1, H2, W2)
LAYER_TABLE = [
    ("conv1", "convolutional", "channel", 3, 3, 8, 16, 16, 16, 16),
    ("conv2", "convolutional", "spatial", 3, 8, 16, 16, 16, 16, 16),
    ("conv3", "convolutional", "spatial", 3, 16, 16, 8, 8, 8, 8),
    ("conv4", "convolutional", "spatial", 3, 16, 32, 8, 8, 8, 8),
    ("fc5", "fully_connected", "spatial", 1, 128, 10, 1, 1, 1, 1),
]


def export_model(path) -> Path:
    lines = ["[model]", "name = rfeval-smallcnn", ""]
    for name, kind, scheme, d, S, T, h1, w1, h2, w2 in LAYER_TABLE:
        lines += [f"[layer {name}]", f"kind = {kind}", f"d = {d}",
                  f"S = {S}", f"T = {T}", f"H1 = {h1}", f"W1 = {w1}",
                  f"H2 = {h2}", f"W2 = {w2}", f"scheme = {scheme}", ""]
    path = Path(path)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path
