"""Resolution degradation: triplet generation, protocol sampling, pair stream.

A degraded input is built by integrating the 1 mm ground truth over coarse
voxels (:func:`~nativesr.resample.area_downsample`) and interpolating the
result back onto the ground-truth grid with trilinear weights.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .resample import ResampleMethod, area_downsample, resample_to_grid
from .routing import (
    A_EDGES,
    V_SAMPLING_CAP,
    BinCoord,
    ExpertGrid,
    a_bin_of,
    feasible_volume_range,
)
from .volume import Volume, VolumeError

__all__ = [
    "MIN_SPACING_MM",
    "InfeasibleError",
    "Pattern",
    "Histogram",
    "ProtocolDistribution",
    "DegradationSpec",
    "TrainingPair",
    "TrainingPairStream",
    "derive_seed",
    "clip_triplet",
    "validate_triplet",
    "generate_triplet",
    "sample_cell_spec",
    "sample_protocol",
    "load_protocol",
    "default_protocol",
    "degrade_volume",
    "make_training_pair",
]

MIN_SPACING_MM = 1.0
GT_SPACING_TOL = 1e-3
_VOLUME_RTOL = 1e-6
_MAX_TRIES = 64

Triplet = Tuple[float, float, float]


class InfeasibleError(ValueError):
    """No triplet satisfies the requested volume / anisotropy combination."""


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary positional parts (order matters)."""
    text = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def clip_triplet(r: Sequence[float]) -> Triplet:
    return tuple(max(float(x), MIN_SPACING_MM) for x in r)


def validate_triplet(r: Sequence[float], volume: Optional[float] = None,
                     a_bin: Optional[int] = None) -> None:
    """Raise ``InfeasibleError`` unless ``r`` obeys the generator constraints.

    Constraints: every side >= 1 mm, at least two sides equal, and, when given,
    product equal to ``volume`` (1e-6 relative) and ``min / max`` inside
    anisotropy bin ``a_bin``.
    """
    r = tuple(float(x) for x in r)
    if min(r) < MIN_SPACING_MM:
        raise InfeasibleError(f"triplet {r} has a side below {MIN_SPACING_MM} mm")
    if not (r[0] == r[1] or r[1] == r[2] or r[0] == r[2]):
        raise InfeasibleError(f"triplet {r} has no two equal sides")
    if volume is not None:
        prod = r[0] * r[1] * r[2]
        if abs(prod - volume) > _VOLUME_RTOL * volume:
            raise InfeasibleError(f"triplet {r} has volume {prod!r}, wanted {volume!r}")
    if a_bin is not None and a_bin_of(min(r) / max(r)) != a_bin:
        raise InfeasibleError(f"triplet {r} has anisotropy {min(r) / max(r):.6g}, not in A{a_bin}")


def _permute(base: Triplet, rng: np.random.Generator) -> Tuple[Triplet, Tuple[int, int, int]]:
    perm = tuple(int(i) for i in rng.permutation(3))
    return tuple(base[p] for p in perm), perm


def _base_triplet(volume: float, a_bin: int, rng: np.random.Generator) -> Triplet:
    lo, hi = A_EDGES[a_bin - 1], A_EDGES[a_bin]
    if volume < MIN_SPACING_MM ** 3:
        raise InfeasibleError(f"V={volume:.6g} is below {MIN_SPACING_MM ** 3} mm^3")
    if a_bin == 1:
        # thick-slice regime: in-plane stays at 1 mm, the slice takes the volume
        if 1.0 / volume > hi:
            raise InfeasibleError(f"V={volume:.6g} cannot reach A1; the long side must be >= 1/0.33 mm")
        return (MIN_SPACING_MM, MIN_SPACING_MM, volume / MIN_SPACING_MM ** 2)
    # the shortest side (the equal pair) is (V * A) ** (1/3) >= 1  <=>  A >= 1 / V
    a_lo = max(lo, 1.0 / volume)
    if a_lo >= hi:
        raise InfeasibleError(f"V={volume:.6g} cannot reach A{a_bin} with every side >= 1 mm")
    for _ in range(_MAX_TRIES):
        a = float(rng.uniform(a_lo, hi))
        if a <= lo:
            continue
        p = max((volume * a) ** (1.0 / 3.0), MIN_SPACING_MM)
        base = (p, p, volume / (p * p))
        try:
            validate_triplet(base, volume, a_bin)
        except InfeasibleError:
            continue
        return base
    raise InfeasibleError(f"no valid triplet found for V={volume:.6g}, A{a_bin}")


def _generate(volume: float, a_bin: int, rng: np.random.Generator):
    base = _base_triplet(float(volume), int(a_bin), rng)
    triplet, perm = _permute(base, rng)
    validate_triplet(triplet, volume, a_bin)
    return triplet, perm


def generate_triplet(volume: float, a_bin: int, rng: np.random.Generator) -> Triplet:
    """Draw ``(r_x, r_y, r_z)`` with product ``volume`` and anisotropy in ``a_bin``.

    Two sides are equal and the odd side is placed on a random axis.

    Raises:
        InfeasibleError: if no triplet with every side >= 1 mm exists.
    """
    return _generate(volume, a_bin, rng)[0]


# -- protocol distribution ----------------------------------------------------------


class Pattern(str, enum.Enum):
    ISOTROPIC = "isotropic"  # X = Y = Z
    AXIAL = "axial"  # X = Y != Z
    SAGITTAL = "sagittal"  # Y = Z != X
    CORONAL = "coronal"  # X = Z != Y


_ODD_AXIS = {Pattern.AXIAL: 2, Pattern.SAGITTAL: 0, Pattern.CORONAL: 1}


def _normalised(weights: Sequence[float], what: str) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError(f"{what}: empty histogram")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{what}: weights must be finite and >= 0")
    total = w.sum()
    if total <= 0:
        raise ValueError(f"{what}: weights sum to zero")
    return w / total


@dataclass(frozen=True, eq=False)
class Histogram:
    """Piecewise-uniform density: pick a bin by weight, then uniform inside it."""

    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("histogram edges must be strictly increasing with >= 2 entries")
        weights = _normalised(self.weights, "histogram")
        if weights.size != edges.size - 1:
            raise ValueError("histogram needs len(edges) - 1 weights")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    def sample(self, rng: np.random.Generator) -> float:
        k = int(rng.choice(self.weights.size, p=self.weights))
        return float(rng.uniform(self.edges[k], self.edges[k + 1]))

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class ProtocolDistribution:
    """Acquisition-pattern mix plus magnitude histograms over V and A.

    Pattern weights may be given as raw counts; they are normalised.
    """

    pattern_weights: Dict[Pattern, float]
    volume_histogram: Histogram
    anisotropy_histogram: Histogram
    name: str = ""

    def __post_init__(self):
        keys = [Pattern(k) for k in self.pattern_weights]
        w = _normalised([self.pattern_weights[k] for k in self.pattern_weights], "pattern weights")
        object.__setattr__(self, "pattern_weights", dict(zip(keys, (float(x) for x in w))))

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolDistribution":
        unknown = set(d) - {"name", "pattern_weights", "volume_histogram", "anisotropy_histogram", "notes"}
        if unknown:
            raise ValueError(f"unknown protocol keys: {sorted(unknown)}")
        return cls(
            pattern_weights=dict(d["pattern_weights"]),
            volume_histogram=Histogram(**d["volume_histogram"]),
            anisotropy_histogram=Histogram(**d["anisotropy_histogram"]),
            name=d.get("name", ""),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pattern_weights": {k.value: v for k, v in self.pattern_weights.items()},
            "volume_histogram": self.volume_histogram.to_dict(),
            "anisotropy_histogram": self.anisotropy_histogram.to_dict(),
        }


def load_protocol(path: Union[str, Path]) -> ProtocolDistribution:
    with open(path) as fh:
        return ProtocolDistribution.from_dict(json.load(fh))


def default_protocol(name: str = "volbrain") -> ProtocolDistribution:
    """Bundled distributions: ``"volbrain"`` (research) or ``"biobank"`` (clinical)."""
    fname = f"protocol_{name.lower()}.json"
    try:
        text = resources.files("nativesr").joinpath("data", fname).read_text()
    except FileNotFoundError:
        raise ValueError(f"no bundled protocol named {name!r}") from None
    return ProtocolDistribution.from_dict(json.loads(text))


def _sample_protocol(dist: ProtocolDistribution, rng: np.random.Generator):
    patterns = list(dist.pattern_weights)
    probs = np.array([dist.pattern_weights[p] for p in patterns])
    pattern = patterns[int(rng.choice(len(patterns), p=probs))]
    volume = dist.volume_histogram.sample(rng)
    if pattern is Pattern.ISOTROPIC:
        side = volume ** (1.0 / 3.0)
        return clip_triplet((side, side, side)), pattern
    a = dist.anisotropy_histogram.sample(rng)
    p = (volume * a) ** (1.0 / 3.0)
    r = [p, p, p]
    r[_ODD_AXIS[pattern]] = p / a
    return clip_triplet(r), pattern


def sample_protocol(dist: ProtocolDistribution, rng: np.random.Generator) -> Triplet:
    """Draw a clipped triplet from an empirical acquisition distribution."""
    return _sample_protocol(dist, rng)[0]


# -- specs and degradation ----------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation draw.

    ``triplet`` is the applied spacing (already permuted); ``permutation``
    records how the generator's ``(p, p, q)`` order was shuffled.
    """

    triplet: Triplet
    permutation: Tuple[int, int, int] = (0, 1, 2)
    seed: int = 0
    cell: Optional[BinCoord] = None
    source: str = "generator"

    def to_dict(self) -> dict:
        return {
            "triplet": list(self.triplet),
            "permutation": list(self.permutation),
            "seed": self.seed,
            "cell": None if self.cell is None else str(self.cell),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        cell = d.get("cell")
        return cls(
            tuple(float(x) for x in d["triplet"]),
            tuple(int(x) for x in d.get("permutation", (0, 1, 2))),
            int(d.get("seed", 0)),
            None if cell is None else BinCoord.parse(cell),
            d.get("source", "generator"),
        )


def sample_cell_spec(cell: BinCoord, seed: int) -> DegradationSpec:
    """Draw a spec inside ``cell``: V uniform over its reachable range, then G(V, A).

    The open last volume bin is capped at 10.5 mm^3.
    """
    rng = np.random.default_rng(seed)
    rng_range = feasible_volume_range(cell)
    if rng_range is None:
        raise InfeasibleError(f"{cell} is not a feasible cell")
    lo, hi = rng_range
    hi = min(hi, V_SAMPLING_CAP)
    lo = lo * (1.0 + 1e-9)
    for _ in range(_MAX_TRIES):
        volume = float(rng.uniform(lo, hi))
        try:
            triplet, perm = _generate(volume, cell.a_bin, rng)
        except InfeasibleError:
            continue
        return DegradationSpec(triplet, perm, seed, cell, "generator")
    raise InfeasibleError(f"could not realise a triplet in {cell}")


def degrade_volume(gt: Volume, spec: Union[DegradationSpec, Sequence[float]]) -> Volume:
    """Simulate a thick-voxel acquisition of ``gt`` and bring it back to 1 mm.

    Returns a volume on exactly the ground-truth grid (shape, spacing,
    origin, direction).
    """
    triplet = spec.triplet if isinstance(spec, DegradationSpec) else tuple(float(x) for x in spec)
    if any(abs(r - 1.0) > GT_SPACING_TOL for r in gt.spacing):
        raise VolumeError(f"ground truth must be at 1 mm isotropic, got {gt.spacing}")
    if min(triplet) < MIN_SPACING_MM:
        raise InfeasibleError(f"degradation triplet {triplet} has a side below 1 mm")
    target = tuple(max(t, r) for t, r in zip(triplet, gt.spacing))
    low = area_downsample(gt, target)
    back = resample_to_grid(low, gt.shape, gt.spacing, ResampleMethod.TRILINEAR)
    return Volume(back.data, gt.spacing, gt.direction, gt.origin)


@dataclass(frozen=True)
class TrainingPair:
    input: Volume
    target: Volume
    spec: DegradationSpec


Source = Union[ProtocolDistribution, BinCoord, None]


def _draw_spec(rng: np.random.Generator, source: Source) -> DegradationSpec:
    seed = int(rng.integers(0, 2**63 - 1))
    if isinstance(source, ProtocolDistribution):
        triplet, pattern = _sample_protocol(source, np.random.default_rng(seed))
        return DegradationSpec(triplet, (0, 1, 2), seed, None, f"protocol:{pattern.value}")
    if source is None:
        cells = ExpertGrid().cells
        cell = cells[int(rng.integers(len(cells)))]
    else:
        cell = source
    return sample_cell_spec(cell, seed)


def make_training_pair(gt: Volume, rng: np.random.Generator, source: Source = None) -> TrainingPair:
    """Degrade ``gt`` with a fresh spec drawn from ``source``.

    ``source`` is a :class:`ProtocolDistribution`, a fixed :class:`BinCoord`,
    or ``None`` for a uniformly chosen feasible cell.
    """
    spec = _draw_spec(rng, source)
    return TrainingPair(degrade_volume(gt, spec), gt, spec)


@dataclass
class TrainingPairStream:
    """Endless, positionally seeded stream of training pairs.

    ``pair(i)`` depends only on ``(base_seed, i)``, so streams can be split
    across workers without shared state.
    """

    pool: Sequence[Volume]
    base_seed: int = 0
    source: Source = None

    def pair(self, index: int) -> TrainingPair:
        rng = np.random.default_rng(derive_seed(self.base_seed, "pair", index))
        gt = self.pool[int(rng.integers(len(self.pool)))]
        return make_training_pair(gt, rng, self.source)

    def __iter__(self) -> Iterator[TrainingPair]:
        i = 0
        while True:
            yield self.pair(i)
            i += 1
