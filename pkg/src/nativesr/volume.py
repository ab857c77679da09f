"""Volume container, NIfTI I/O and lossless canonical reorientation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple, Union

import nibabel as nib
import numpy as np

__all__ = [
    "Volume",
    "VolumeHeader",
    "AcquisitionDescriptor",
    "Reorientation",
    "VolumeError",
    "descriptors",
    "load_nifti",
    "read_header",
    "save_nifti",
    "reorient_canonical",
]

ORTHONORMAL_TOL = 1e-4
AMBIGUITY_TOL = 1e-6
MAX_OBLIQUITY_DEG = 20.0

PathLike = Union[str, Path]


class VolumeError(ValueError):
    """Invalid volume data, geometry or file."""


def _as_triplet(values, name) -> Tuple[float, float, float]:
    out = tuple(float(x) for x in values)
    if len(out) != 3:
        raise VolumeError(f"{name} must have 3 components, got {len(out)}")
    return out


def _check_geometry(spacing, direction, origin):
    spacing = _as_triplet(spacing, "spacing")
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeError(f"spacing components must be > 0, got {spacing}")
    direction = np.array(direction, dtype=np.float64).reshape(3, 3)
    err = np.abs(direction.T @ direction - np.eye(3)).max()
    if not np.isfinite(err) or err > ORTHONORMAL_TOL:
        raise VolumeError(f"direction matrix is not orthonormal (max deviation {err:.3g})")
    origin = _as_triplet(origin, "origin")
    direction.setflags(write=False)
    return spacing, direction, origin


@dataclass(frozen=True)
class VolumeHeader:
    """Geometry of a volume without its voxel data."""

    shape: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        spacing, direction, origin = _check_geometry(self.spacing, self.direction, self.origin)
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "origin", origin)

    @property
    def affine(self) -> np.ndarray:
        """4x4 voxel-to-world matrix: ``direction @ diag(spacing)`` plus origin."""
        aff = np.eye(4)
        aff[:3, :3] = self.direction * np.asarray(self.spacing)[None, :]
        aff[:3, 3] = self.origin
        return aff


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3D scalar field with voxel geometry.

    ``data`` is indexed ``[x, y, z]``; ``direction`` columns are the world
    directions of the three image axes (RAS+ world convention, as NIfTI).
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise VolumeError(f"unsupported dimensionality: expected 3D data, got {data.ndim}D")
        if min(data.shape) < 1:
            raise VolumeError(f"shape components must be positive, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise VolumeError("volume contains non-finite voxel values")
        data.setflags(write=False)
        spacing, direction, origin = _check_geometry(self.spacing, self.direction, self.origin)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def header(self) -> VolumeHeader:
        return VolumeHeader(self.shape, self.spacing, self.direction, self.origin)

    @property
    def affine(self) -> np.ndarray:
        return self.header.affine

    def with_data(self, data) -> "Volume":
        """Same geometry, new voxel values (must keep the shape)."""
        data = np.asarray(data)
        if data.shape != self.shape:
            raise VolumeError(f"shape mismatch: {data.shape} vs {self.shape}")
        return Volume(data, self.spacing, self.direction, self.origin)

    def same_geometry(self, other: "Volume", tol: float = 1e-6) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=tol)
            and np.allclose(self.direction, other.direction, rtol=0, atol=tol)
            and np.allclose(self.origin, other.origin, rtol=0, atol=tol)
        )


# -- descriptors -------------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionDescriptor:
    """Voxel volume ``V`` (mm^3) and anisotropy ``A = r_min / r_max``."""

    volume: float
    anisotropy: float


def descriptors(spacing: Sequence[float]) -> AcquisitionDescriptor:
    r = _as_triplet(spacing, "spacing")
    if not all(x > 0 for x in r):
        raise VolumeError(f"spacing components must be > 0, got {r}")
    return AcquisitionDescriptor(volume=r[0] * r[1] * r[2], anisotropy=min(r) / max(r))


# -- NIfTI I/O ---------------------------------------------------------------


def _geometry_from_image(img):
    hdr = img.header
    dim = int(hdr["dim"][0])
    shape = tuple(int(n) for n in img.shape)
    # trailing singleton dimensions are tolerated (e.g. 3D stored with dim[4] = 1)
    while len(shape) > 3 and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) != 3 or dim < 3:
        raise VolumeError(f"unsupported dimensionality: {img.shape}")
    spacing = tuple(float(z) for z in hdr.get_zooms()[:3])
    if not all(s > 0 for s in spacing):
        raise VolumeError(f"pixdim spacing must be > 0, got {spacing}")
    sform, scode = img.get_sform(coded=True)
    qform, qcode = img.get_qform(coded=True)
    if scode and scode > 0:
        affine = sform
    elif qcode and qcode > 0:
        affine = qform
    else:
        affine = np.diag(list(spacing) + [1.0])
    direction = np.asarray(affine[:3, :3], dtype=np.float64) / np.asarray(spacing)[None, :]
    origin = tuple(float(x) for x in affine[:3, 3])
    return shape, spacing, direction, origin


def read_header(path: PathLike) -> VolumeHeader:
    """Read only the geometry of a NIfTI file (voxel data is never touched)."""
    try:
        img = nib.load(str(path))
    except Exception as exc:  # nibabel raises a variety of types
        raise VolumeError(f"cannot read {path}: {exc}") from exc
    shape, spacing, direction, origin = _geometry_from_image(img)
    return VolumeHeader(shape, spacing, direction, origin)


def load_nifti(path: PathLike) -> Volume:
    """Load a 3D scalar NIfTI-1 file.

    Geometry comes from pixdim (spacing) and the sform, falling back to the
    qform. Integer payloads are scaled by scl_slope/scl_inter.
    """
    try:
        img = nib.load(str(path))
    except Exception as exc:
        raise VolumeError(f"cannot read {path}: {exc}") from exc
    shape, spacing, direction, origin = _geometry_from_image(img)
    try:
        data = np.asanyarray(img.dataobj, dtype=np.float64)
    except Exception as exc:
        raise VolumeError(f"cannot read voxel data from {path}: {exc}") from exc
    data = data.reshape(shape)
    if np.isnan(data).any():
        raise VolumeError(f"{path}: NaN voxels")
    return Volume(data, spacing, direction, origin)


def save_nifti(v: Volume, path: PathLike, dtype=np.float64) -> None:
    """Write ``v`` as NIfTI-1; ``.nii.gz`` paths are gzip-compressed.

    The sform (and qform) encode ``direction @ diag(spacing)`` and the origin.
    The default float64 payload makes load/save a bit-exact round trip.
    """
    data = np.asarray(v.data, dtype=dtype)
    img = nib.Nifti1Image(data, v.affine)
    img.header.set_zooms(v.spacing)
    img.set_sform(v.affine, code=1)
    img.set_qform(v.affine, code=1)
    img.header["scl_slope"] = 1.0
    img.header["scl_inter"] = 0.0
    try:
        nib.save(img, str(path))
    except Exception as exc:
        raise VolumeError(f"cannot write {path}: {exc}") from exc


# -- canonical reorientation ---------------------------------------------------


@dataclass(frozen=True)
class Reorientation:
    """Axis permutation followed by per-axis flips.

    Output axis ``i`` is input axis ``permutation[i]``, reversed when
    ``flips[i]`` is set.
    """

    permutation: Tuple[int, int, int] = (0, 1, 2)
    flips: Tuple[bool, bool, bool] = (False, False, False)

    def __post_init__(self):
        if sorted(self.permutation) != [0, 1, 2]:
            raise VolumeError(f"not a permutation of (0, 1, 2): {self.permutation}")
        object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))
        object.__setattr__(self, "flips", tuple(bool(f) for f in self.flips))

    @property
    def is_identity(self) -> bool:
        return self.permutation == (0, 1, 2) and not any(self.flips)

    def inverse(self) -> "Reorientation":
        inv = tuple(int(i) for i in np.argsort(self.permutation))
        return Reorientation(inv, tuple(self.flips[inv[k]] for k in range(3)))

    def apply(self, v: Volume) -> Volume:
        """Reorder voxels (no interpolation) and update the geometry to match."""
        perm = self.permutation
        data = np.transpose(v.data, perm)
        flip_axes = tuple(i for i in range(3) if self.flips[i])
        if flip_axes:
            data = np.flip(data, axis=flip_axes)
        spacing = tuple(v.spacing[p] for p in perm)
        cols = v.direction[:, list(perm)].copy()
        origin = np.asarray(v.origin, dtype=np.float64).copy()
        for i in flip_axes:
            # new voxel 0 sits where the old last voxel along this axis was
            origin = origin + cols[:, i] * spacing[i] * (data.shape[i] - 1)
            cols[:, i] = -cols[:, i]
        return Volume(np.ascontiguousarray(data), spacing, cols, tuple(origin))

    def to_dict(self) -> dict:
        return {"permutation": list(self.permutation), "flips": list(self.flips)}

    @classmethod
    def from_dict(cls, d) -> "Reorientation":
        return cls(tuple(d["permutation"]), tuple(d["flips"]))


def canonical_reorientation(direction) -> Reorientation:
    """Find the permutation/flips that bring ``direction`` closest to RAS.

    Raises:
        VolumeError: if an image axis is equally close to two world axes, two
            image axes map to the same world axis, or an axis is more than
            20 degrees oblique.
    """
    d = np.asarray(direction, dtype=np.float64)
    absd = np.abs(d)
    world_of_axis = []
    for j in range(3):
        col = absd[:, j]
        order = np.argsort(col)[::-1]
        if col[order[0]] - col[order[1]] <= AMBIGUITY_TOL:
            raise VolumeError(f"ambiguous direction: image axis {j} is equally close to two world axes")
        angle = math.degrees(math.acos(min(1.0, col[order[0]] / max(np.linalg.norm(col), 1e-300))))
        if angle > MAX_OBLIQUITY_DEG:
            raise VolumeError(
                f"image axis {j} is {angle:.1f} degrees oblique (limit {MAX_OBLIQUITY_DEG:g})"
            )
        world_of_axis.append(int(order[0]))
    if len(set(world_of_axis)) != 3:
        raise VolumeError(f"ambiguous direction: image axes map to world axes {world_of_axis}")
    perm = [0, 0, 0]
    for j, w in enumerate(world_of_axis):
        perm[w] = j
    flips = tuple(bool(d[i, perm[i]] < 0) for i in range(3))
    return Reorientation(tuple(perm), flips)


def reorient_canonical(v: Volume) -> Tuple[Volume, Reorientation]:
    """Reorder ``v`` so its image axes follow RAS, without interpolation.

    The returned :class:`Reorientation` recovers the input exactly through
    ``r.inverse().apply(out)``. Oblique frames stay oblique (the direction is
    permuted and sign-flipped, not snapped) so the inverse is exact.
    """
    r = canonical_reorientation(v.direction)
    if r.is_identity:
        return v, r
    return r.apply(v), r
