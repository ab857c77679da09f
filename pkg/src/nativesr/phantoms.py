"""Synthetic brain-like phantoms for smoke runs and tests."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .volume import Volume

__all__ = ["smooth_phantom", "checkerboard"]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(x))


def smooth_phantom(shape: Sequence[int] = (64, 64, 64), seed: int = 0,
                   edge_width: float = 1.0) -> Volume:
    """Nested folded ellipsoids with CSF/GM/WM-like levels on a 1 mm grid.

    The "cortex" radius is modulated by a few random low-order ripples so
    every seed gives a different, smooth but structured volume. Intensities
    lie in roughly [0, 1].
    """
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in shape)
    axes = [np.linspace(-1.0, 1.0, n) for n in shape]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    scale = 0.5 * min(shape)
    radii = rng.uniform(0.78, 0.9, size=3)
    rho = np.sqrt((x / radii[0]) ** 2 + (y / radii[1]) ** 2 + (z / radii[2]) ** 2)
    theta = np.arctan2(y, x)
    phi = np.arccos(np.clip(z / np.maximum(np.sqrt(x * x + y * y + z * z), 1e-9), -1, 1))
    ripple = np.zeros_like(rho)
    for _ in range(4):
        k, l = rng.integers(3, 9), rng.integers(2, 7)
        ripple += rng.uniform(0.01, 0.03) * np.sin(k * theta + rng.uniform(0, 6.28)) * np.sin(
            l * phi + rng.uniform(0, 6.28)
        )
    w = edge_width / scale
    head = _sigmoid((1.0 - rho) / w)
    gm = _sigmoid((0.88 + ripple - rho) / w)
    wm = _sigmoid((0.62 + 1.5 * ripple - rho) / w)
    img = 0.25 * head + 0.35 * gm + 0.4 * wm
    for _ in range(3):
        c = rng.uniform(-0.35, 0.35, size=3)
        s = rng.uniform(0.05, 0.12)
        blob = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / (2 * s * s))
        img -= 0.3 * blob * wm
    return Volume(img, (1.0, 1.0, 1.0))


def checkerboard(shape: Sequence[int] = (8, 8, 8), period: int = 1) -> Volume:
    idx = np.indices(tuple(shape)) // period
    return Volume((idx.sum(axis=0) % 2).astype(np.float64), (1.0, 1.0, 1.0))
