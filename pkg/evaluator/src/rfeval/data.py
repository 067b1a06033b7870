"""Deterministic synthetic 10-class image dataset.

Each class is a fixed random template; samples are the template plus
Gaussian noise. Everything derives from a single integer seed, so two
processes with the same seed see bit-identical data.
"""
from __future__ import annotations

import numpy as np

N_CLASSES = 10
IMAGE_SIZE = 16
CHANNELS = 3
NOISE_SCALE = 0.55


def make_dataset(seed: int, n_train: int = 1200, n_val: int = 400):
    """Return (train_x, train_y, val_x, val_y) as float32/int64 arrays."""
    rng = np.random.default_rng(seed)
    templates = rng.normal(size=(N_CLASSES, CHANNELS, IMAGE_SIZE, IMAGE_SIZE))

    def split(n):
        labels = rng.integers(0, N_CLASSES, size=n)
        noise = rng.normal(scale=NOISE_SCALE,
                           size=(n, CHANNELS, IMAGE_SIZE, IMAGE_SIZE))
        images = templates[labels] + noise
        return images.astype(np.float32), labels.astype(np.int64)

    train_x, train_y = split(n_train)
    val_x, val_y = split(n_val)
    return train_x, train_y, val_x, val_y


def subset_indices(n_val: int, subset_fraction: float, seed: int) -> np.ndarray:
    """Validation subset used for accuracy checks; fixed by (seed, fraction)."""
    count = max(1, int(round(subset_fraction * n_val)))
    rng = np.random.default_rng((seed, 0xB0B))
    return np.sort(rng.choice(n_val, size=min(count, n_val), replace=False))
