"""Small CNN and truncated-SVD rank projection of its kernel layers."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

# layer name -> (scheme, d, S, T); mirrors the exported model description
KERNEL_LAYERS = {
    "conv1": ("channel", 3, 3, 8),
    "conv2": ("spatial", 3, 8, 16),
    "conv3": ("spatial", 3, 16, 16),
    "conv4": ("spatial", 3, 16, 32),
    "fc5": ("fc", 1, 128, 10),
}


class SmallCnn(nn.Module):
    """Four 3x3 convolutions and one classifier on 16x16x3 inputs."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.conv4 = nn.Conv2d(16, 32, 3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.head_pool = nn.AdaptiveAvgPool2d(2)
        self.fc5 = nn.Linear(32 * 2 * 2, 10)
        self.act = nn.ReLU()

    def forward(self, x):
        x = self.act(self.conv1(x))
        x = self.pool(self.act(self.conv2(x)))
        x = self.act(self.conv3(x))
        x = self.pool(self.act(self.conv4(x)))
        x = self.head_pool(x).flatten(1)
        return self.fc5(x)


def _truncate(matrix: np.ndarray, rank: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    r = min(rank, len(s))
    return (u[:, :r] * s[:r]) @ vt[:r]


def project_weight(weight: np.ndarray, scheme: str, d: int, S: int, T: int,
                   rank: int) -> np.ndarray:
    """Best rank-r approximation of a kernel under the given 2-level scheme."""
    if scheme == "fc":
        return _truncate(weight, rank)
    # torch conv weights are (T, S, d, d)
    w = weight.reshape(T, S, d, d)
    if scheme == "spatial":
        # rows (i, s), cols (j, t)
        mat = w.transpose(2, 1, 3, 0).reshape(d * S, d * T)
        mat = _truncate(mat, rank)
        return mat.reshape(d, S, d, T).transpose(3, 1, 0, 2).reshape(weight.shape)
    if scheme == "channel":
        # rows (i, j, s), cols (t,)
        mat = w.transpose(2, 3, 1, 0).reshape(d * d * S, T)
        mat = _truncate(mat, rank)
        return mat.reshape(d, d, S, T).transpose(3, 2, 0, 1).reshape(weight.shape)
    raise ValueError(f"unknown scheme {scheme!r}")


def apply_ranks(model: SmallCnn, ranks: dict[str, int]) -> SmallCnn:
    """Copy the model with each named kernel projected to its requested rank."""
    import copy

    out = copy.deepcopy(model)
    with torch.no_grad():
        for name, rank in ranks.items():
            if name not in KERNEL_LAYERS:
                raise KeyError(f"unknown layer {name!r}")
            scheme, d, S, T = KERNEL_LAYERS[name]
            module = getattr(out, name)
            weight = module.weight.detach().cpu().numpy().astype(np.float64)
            projected = project_weight(weight, scheme, d, S, T, int(rank))
            module.weight.copy_(torch.from_numpy(projected).to(module.weight.dtype))
    return out
