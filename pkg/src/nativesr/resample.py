"""Separable resampling: trilinear, cubic B-spline and area integration.

All three kernels are evaluated one axis at a time as banded 1D operators (see
:mod:`nativesr.kernels`). Grids are corner-aligned: the first output voxel
centre sits half a target voxel from the volume corner.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence, Tuple

import numpy as np

from . import kernels
from .volume import Volume, VolumeError

__all__ = [
    "ResampleMethod",
    "round_half_away",
    "output_shape",
    "resample",
    "resample_to_grid",
    "area_downsample",
    "resize_to_budget",
]

BSPLINE_POLE = math.sqrt(3.0) - 2.0
# terms until |pole|**k < 1e-16
BSPLINE_HORIZON = int(math.ceil(math.log(1e-16) / math.log(abs(BSPLINE_POLE))))
_SPACING_TOL = 1e-9


class ResampleMethod(str, enum.Enum):
    TRILINEAR = "trilinear"
    CUBIC_BSPLINE = "cubic"
    AREA = "area"


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def output_shape(shape, spacing, target_spacing) -> Tuple[int, int, int]:
    """``round(n_i * r_i / t_i)`` per axis, at least 1."""
    return tuple(
        max(1, round_half_away(n * r / t)) for n, r, t in zip(shape, spacing, target_spacing)
    )


def _check_target(target_spacing) -> Tuple[float, float, float]:
    t = tuple(float(x) for x in target_spacing)
    if len(t) != 3 or not all(math.isfinite(x) and x > 0 for x in t):
        raise VolumeError(f"target spacing must be 3 positive values, got {target_spacing}")
    return t


# -- 1D band construction ------------------------------------------------------


def _source_positions(n_out: int, t: float, r: float) -> np.ndarray:
    # continuous source index of each output centre (corner-aligned grids)
    return (np.arange(n_out) + 0.5) * (t / r) - 0.5


def _linear_band(n_in: int, r: float, n_out: int, t: float):
    s = np.clip(_source_positions(n_out, t, r), 0.0, n_in - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), max(n_in - 2, 0))
    frac = s - i0
    if n_in == 1:
        frac = np.zeros_like(s)
    weights = np.stack([1.0 - frac, frac], axis=1)
    return i0, weights


def _cubic_bspline(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax < 1.0
    m2 = (ax >= 1.0) & (ax < 2.0)
    out[m1] = 2.0 / 3.0 - ax[m1] ** 2 + 0.5 * ax[m1] ** 3
    out[m2] = (2.0 - ax[m2]) ** 3 / 6.0
    return out


def _cubic_band(n_in: int, r: float, n_out: int, t: float):
    # band indexes the coefficient array padded by 2 mirrored samples per side
    s = np.clip(_source_positions(n_out, t, r), 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.int64)
    taps = i0[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_bspline(s[:, None] - taps)
    return i0 - 1 + 2, weights


def _area_band(n_in: int, r: float, n_out: int, t: float):
    extent = n_in * r
    lo = np.minimum(np.arange(n_out) * t, extent)
    hi = np.minimum((np.arange(n_out) + 1) * t, extent)
    first = np.minimum(np.floor(lo / r).astype(np.int64), n_in - 1)
    last = np.maximum(np.ceil(hi / r).astype(np.int64) - 1, first)
    last = np.minimum(last, n_in - 1)
    width = int((last - first).max()) + 1
    taps = first[:, None] + np.arange(width)[None, :]
    left = np.maximum(lo[:, None], taps * r)
    right = np.minimum(hi[:, None], (taps + 1) * r)
    overlap = np.clip(right - left, 0.0, None)
    overlap[taps > n_in - 1] = 0.0
    total = overlap.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise VolumeError("area pooling produced an output voxel with empty support")
    return first, overlap / total


def _apply_axis(data: np.ndarray, axis: int, starts, weights) -> np.ndarray:
    moved = np.moveaxis(data, axis, -1)
    lead = moved.shape[:-1]
    flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
    out = kernels.banded_lastaxis(flat, starts, weights)
    return np.moveaxis(out.reshape(lead + (out.shape[-1],)), -1, axis)


def _bspline_coefficients(data: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(data, axis, -1)
    lead = moved.shape[:-1]
    flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
    coeffs = kernels.bspline_prefilter_lastaxis(flat, BSPLINE_POLE, BSPLINE_HORIZON)
    mode = "edge" if coeffs.shape[1] == 1 else "reflect"
    coeffs = np.pad(coeffs, ((0, 0), (2, 2)), mode=mode)
    return np.moveaxis(coeffs.reshape(lead + (coeffs.shape[-1],)), -1, axis)


# -- public operations ---------------------------------------------------------


def _shifted_origin(v: Volume, target_spacing) -> Tuple[float, float, float]:
    delta = (np.asarray(target_spacing) - np.asarray(v.spacing)) / 2.0
    return tuple(np.asarray(v.origin) + v.direction @ delta)


def resample_to_grid(v: Volume, shape: Sequence[int], spacing: Sequence[float],
                     method: ResampleMethod = ResampleMethod.TRILINEAR) -> Volume:
    """Sample ``v`` onto a corner-aligned grid of the given shape and spacing.

    The output grid shares the input's corner and direction; its extent may
    differ from the input's (samples beyond the last input centre are
    edge-clamped).
    """
    method = ResampleMethod(method)
    t = _check_target(spacing)
    shape = tuple(int(n) for n in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise VolumeError(f"target shape must be 3 positive counts, got {shape}")
    data = v.data
    for axis in range(3):
        n_in, r = data.shape[axis], v.spacing[axis]
        n_out = shape[axis]
        if method is ResampleMethod.TRILINEAR:
            starts, w = _linear_band(n_in, r, n_out, t[axis])
            data = _apply_axis(data, axis, starts, w)
        elif method is ResampleMethod.CUBIC_BSPLINE:
            coeffs = _bspline_coefficients(data, axis)
            starts, w = _cubic_band(n_in, r, n_out, t[axis])
            data = _apply_axis(coeffs, axis, starts, w)
        else:
            for_area = all(tt >= rr - _SPACING_TOL for tt, rr in zip(t, v.spacing))
            if not for_area:
                raise VolumeError("area pooling requires every target spacing >= source spacing")
            starts, w = _area_band(n_in, r, n_out, t[axis])
            data = _apply_axis(data, axis, starts, w)
    return Volume(data, t, v.direction, _shifted_origin(v, t))


def resample(v: Volume, target_spacing: Sequence[float],
             method: ResampleMethod = ResampleMethod.TRILINEAR) -> Volume:
    """Interpolate ``v`` to ``target_spacing`` preserving its world extent.

    Args:
        v: input volume.
        target_spacing: output voxel size in mm.
        method: ``trilinear`` or ``cubic`` (prefiltered cubic B-spline, which
            interpolates the samples). Area integration lives in
            :func:`area_downsample`.
    """
    method = ResampleMethod(method)
    if method is ResampleMethod.AREA:
        raise VolumeError("use area_downsample for area integration")
    t = _check_target(target_spacing)
    return resample_to_grid(v, output_shape(v.shape, v.spacing, t), t, method)


def area_downsample(v: Volume, target_spacing: Sequence[float]) -> Volume:
    """Average the piecewise-constant field of ``v`` over each coarser voxel.

    Each output voxel is the mean of the input over its support clipped to the
    input extent, with partially covered input voxels weighted by their overlap
    fraction.
    """
    t = _check_target(target_spacing)
    for tt, rr in zip(t, v.spacing):
        if tt < rr - _SPACING_TOL:
            raise VolumeError(
                f"area_downsample needs target spacing >= source spacing, got {t} < {v.spacing}"
            )
    return resample_to_grid(v, output_shape(v.shape, v.spacing, t), t, ResampleMethod.AREA)


def resize_to_budget(v: Volume, max_voxels: int) -> Volume:
    """Shrink ``v`` isotropically (trilinear) until it holds at most ``max_voxels``."""
    max_voxels = int(max_voxels)
    if max_voxels < 1:
        raise VolumeError("max_voxels must be >= 1")
    total = int(np.prod(v.shape))
    if total <= max_voxels:
        return v
    s = (max_voxels / total) ** (1.0 / 3.0)
    shape = [max(1, int(math.floor(n * s + 1e-9))) for n in v.shape]
    while int(np.prod(shape)) > max_voxels:
        k = int(np.argmax(shape))
        shape[k] -= 1
    spacing = tuple(r * n / m for r, n, m in zip(v.spacing, v.shape, shape))
    return resample_to_grid(v, shape, spacing, ResampleMethod.TRILINEAR)
