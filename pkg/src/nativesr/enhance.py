"""Enhancer interface, baseline arms and tiled inference."""
from __future__ import annotations

import math
import os
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .volume import Volume, VolumeError, load_nifti, save_nifti

__all__ = [
    "EXPERT_ENV_VAR",
    "DEFAULT_OVERLAP",
    "Enhancer",
    "EnhancerError",
    "IdentityEnhancer",
    "FunctionEnhancer",
    "SubprocessEnhancer",
    "Tile",
    "TilePlan",
    "baseline_identity",
    "baseline_reference",
    "plan_tiles",
    "run_tiled",
]

EXPERT_ENV_VAR = "NATIVESR_EXPERT_ID"
DEFAULT_OVERLAP = 16


class EnhancerError(RuntimeError):
    pass


class Enhancer:
    """Maps a 1 mm volume to an enhanced volume of the same geometry.

    Attributes:
        name: label used in reports.
        deterministic: same input always gives the same output.
        concurrent_safe: may be called from several threads at once.
        native_intensity: output lives in the input's intensity domain. Arms
            without it are mean-normalised to the ground truth before scoring.
    """

    name = "enhancer"
    deterministic = True
    concurrent_safe = True
    native_intensity = True

    def enhance(self, v: Volume, expert: Optional[str] = None) -> Volume:
        raise NotImplementedError

    def __call__(self, v: Volume, expert: Optional[str] = None) -> Volume:
        out = self.enhance(v, expert)
        if out.shape != v.shape:
            raise EnhancerError(f"{self.name}: output shape {out.shape} != input shape {v.shape}")
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


class IdentityEnhancer(Enhancer):
    def __init__(self, name: str = "Identity"):
        self.name = name

    def enhance(self, v, expert=None):
        return v


class FunctionEnhancer(Enhancer):
    """Wrap an array -> array callable (voxel-wise filters, test stubs, ...)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function",
                 deterministic: bool = True, concurrent_safe: bool = True,
                 native_intensity: bool = True):
        self.fn = fn
        self.name = name
        self.deterministic = deterministic
        self.concurrent_safe = concurrent_safe
        self.native_intensity = native_intensity

    def enhance(self, v, expert=None):
        out = np.asarray(self.fn(np.array(v.data)))
        if out.shape != v.shape:
            raise EnhancerError(f"{self.name}: output shape {out.shape} != input shape {v.shape}")
        return v.with_data(out)


class SubprocessEnhancer(Enhancer):
    """Run an external model as ``command... <input.nii.gz> <output.nii.gz>``.

    The routing decision (e.g. ``"V5-A1"``) is passed in ``NATIVESR_EXPERT_ID``.
    A nonzero exit status is a failure.
    """

    concurrent_safe = False

    def __init__(self, command: Sequence[str], name: str = "external",
                 native_intensity: bool = True, deterministic: bool = True,
                 timeout: Optional[float] = None, env: Optional[dict] = None):
        self.command = list(command)
        self.name = name
        self.native_intensity = native_intensity
        self.deterministic = deterministic
        self.timeout = timeout
        self.env = dict(env or {})

    def enhance(self, v, expert=None):
        with tempfile.TemporaryDirectory(prefix="nativesr-") as tmp:
            src = Path(tmp) / "input.nii.gz"
            dst = Path(tmp) / "output.nii.gz"
            save_nifti(v, src)
            env = {**os.environ, **self.env, EXPERT_ENV_VAR: expert or "none"}
            try:
                proc = subprocess.run(
                    self.command + [str(src), str(dst)],
                    env=env,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise EnhancerError(f"{self.name}: {exc}") from exc
            if proc.returncode != 0:
                msg = proc.stderr.strip().splitlines()[-1:] or [""]
                raise EnhancerError(f"{self.name}: exit status {proc.returncode} {msg[0]}".rstrip())
            try:
                out = load_nifti(dst)
            except VolumeError as exc:
                raise EnhancerError(f"{self.name}: unreadable output: {exc}") from exc
        return Volume(out.data, v.spacing, v.direction, v.origin) if out.shape == v.shape else out


def baseline_identity() -> Enhancer:
    return IdentityEnhancer("Identity")


def baseline_reference() -> Enhancer:
    """The unenhanced arm: the trilinearly resampled degraded input itself."""
    return IdentityEnhancer("Reference (Input)")


# -- tiling ----------------------------------------------------------------------


Box = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]


@dataclass(frozen=True)
class Tile:
    box: Box

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in self.box)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(b - a for a, b in self.box)


@dataclass(frozen=True)
class TilePlan:
    shape: Tuple[int, int, int]
    patch_shape: Tuple[int, int, int]
    overlap: int
    tiles: Tuple[Tile, ...] = field(default_factory=tuple)

    def coverage(self) -> np.ndarray:
        """Number of tiles covering each voxel."""
        count = np.zeros(self.shape, dtype=np.int64)
        for t in self.tiles:
            count[t.slices] += 1
        return count


def _axis_starts(n: int, patch: int, stride: int) -> List[int]:
    if n <= patch:
        return [0]
    starts = [0]
    while starts[-1] + patch < n:
        starts.append(min(starts[-1] + stride, n - patch))
    return starts


def plan_tiles(shape: Sequence[int], voxel_budget: int, overlap: int = DEFAULT_OVERLAP) -> TilePlan:
    """Tile ``shape`` with the largest cube of at most ``voxel_budget`` voxels.

    Tiles step by ``patch - overlap``; the last tile on each axis is pulled
    back to end at the boundary.
    """
    shape = tuple(int(n) for n in shape)
    voxel_budget, overlap = int(voxel_budget), int(overlap)
    if overlap < 0:
        raise ValueError("overlap must be >= 0")
    if voxel_budget < (2 * overlap + 1) ** 3:
        raise ValueError(
            f"voxel budget {voxel_budget} is below the minimum patch (2*{overlap}+1)^3"
        )
    if int(np.prod(shape)) <= voxel_budget:
        box = tuple((0, n) for n in shape)
        return TilePlan(shape, shape, overlap, (Tile(box),))
    patch = int(round(voxel_budget ** (1.0 / 3.0)))
    while patch ** 3 > voxel_budget:
        patch -= 1
    while (patch + 1) ** 3 <= voxel_budget:
        patch += 1
    stride = patch - overlap
    per_axis = [_axis_starts(n, patch, stride) for n in shape]
    tiles = []
    for x in per_axis[0]:
        for y in per_axis[1]:
            for z in per_axis[2]:
                tiles.append(Tile(tuple(
                    (s, min(s + patch, n)) for s, n in zip((x, y, z), shape)
                )))
    return TilePlan(shape, (patch,) * 3, overlap, tuple(tiles))


def _cosine_window(shape) -> np.ndarray:
    w = np.ones(shape)
    for axis, n in enumerate(shape):
        # strictly positive so every covered voxel keeps a nonzero weight
        prof = 0.5 - 0.5 * np.cos(2.0 * math.pi * (np.arange(n) + 0.5) / n)
        view = [1, 1, 1]
        view[axis] = n
        w = w * prof.reshape(view)
    return w


def run_tiled(e: Enhancer, v: Volume, plan: TilePlan, jobs: int = 1,
              blend: str = "uniform", expert: Optional[str] = None) -> Volume:
    """Enhance ``v`` tile by tile and blend overlaps.

    ``blend="uniform"`` averages every tile covering a voxel; ``"cosine"``
    uses a separable raised-cosine weight per tile. Tiles are accumulated in
    a canonical order (sorted by box), so the output does not depend on the
    order of ``plan.tiles`` or on ``jobs``.
    """
    if tuple(plan.shape) != v.shape:
        raise ValueError(f"plan is for shape {plan.shape}, volume is {v.shape}")
    if blend not in ("uniform", "cosine"):
        raise ValueError(f"unknown blend {blend!r}")
    tiles = sorted(plan.tiles, key=lambda t: t.box)
    if len(tiles) == 1 and tiles[0].shape == v.shape:
        return e(v, expert)
    if np.any(plan.coverage() == 0):
        raise ValueError("tile plan does not cover the volume")

    def work(tile: Tile) -> np.ndarray:
        origin = np.asarray(v.origin) + v.direction @ (
            np.array([a for a, _ in tile.box]) * np.asarray(v.spacing)
        )
        sub = Volume(v.data[tile.slices], v.spacing, v.direction, tuple(origin))
        out = e(sub, expert)
        if out.shape != sub.shape:
            raise EnhancerError(f"{e.name}: tile output shape {out.shape} != {sub.shape}")
        return out.data

    if jobs > 1 and e.concurrent_safe:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, tiles))
    else:
        results = [work(t) for t in tiles]

    acc = np.zeros(v.shape)
    norm = np.zeros(v.shape)
    for tile, data in zip(tiles, results):
        w = 1.0 if blend == "uniform" else _cosine_window(tile.shape)
        acc[tile.slices] += w * data
        norm[tile.slices] += w
    return v.with_data(acc / norm)
