"""Bivariate expert grid over voxel volume and anisotropy.

Volume bins are half-open ``[lo, hi)`` in mm^3; anisotropy bins are
``(lo, hi]``. Three cells cannot be reached once every voxel side is at least
1 mm, which leaves 18 experts.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .volume import AcquisitionDescriptor, Volume, VolumeHeader, descriptors

__all__ = [
    "V_EDGES",
    "A_EDGES",
    "V_LABELS",
    "BinCoord",
    "ExpertGrid",
    "RoutingDecision",
    "RoutingError",
    "TransferKind",
    "CurriculumStep",
    "CurriculumPlan",
    "classify",
    "is_feasible",
    "feasible_cells",
    "feasible_volume_range",
    "route",
    "curriculum",
]

V_EDGES = (1.0, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, np.inf)
A_EDGES = (0.0, 0.33, 0.66, 1.0)
# Column labels used in report tables; the open last bin is shown as 6.5-10.5.
V_LABELS = ("1.0-1.5", "1.5-2.5", "2.5-3.5", "3.5-4.5", "4.5-5.5", "5.5-6.5", "6.5-10.5")
V_SAMPLING_CAP = 10.5
N_V_BINS = 7
N_A_BINS = 3
ENHANCE_THRESHOLD_MM = 1.0
SPACING_TOL_MM = 1e-3


class RoutingError(ValueError):
    """A descriptor falls outside the modelled acquisition manifold."""


@dataclass(frozen=True, order=True)
class BinCoord:
    v_bin: int
    a_bin: int

    def __post_init__(self):
        if not (1 <= self.v_bin <= N_V_BINS and 1 <= self.a_bin <= N_A_BINS):
            raise ValueError(f"invalid bin V{self.v_bin}-A{self.a_bin}")

    def __str__(self) -> str:
        return f"V{self.v_bin}-A{self.a_bin}"

    @classmethod
    def parse(cls, text: str) -> "BinCoord":
        """Inverse of ``str``: ``"V5-A1"`` -> ``BinCoord(5, 1)``."""
        try:
            v, a = text.strip().upper().split("-")
            if v[0] != "V" or a[0] != "A":
                raise ValueError
            return cls(int(v[1:]), int(a[1:]))
        except (ValueError, IndexError):
            raise ValueError(f"not an expert id: {text!r}") from None

    @property
    def volume_interval(self) -> Tuple[float, float]:
        return V_EDGES[self.v_bin - 1], V_EDGES[self.v_bin]

    @property
    def anisotropy_interval(self) -> Tuple[float, float]:
        return A_EDGES[self.a_bin - 1], A_EDGES[self.a_bin]


def v_bin_of(volume: float) -> int:
    if volume < V_EDGES[0]:
        raise RoutingError(f"voxel volume {volume:.6g} mm^3 is below 1.0 mm^3 (no enhancement needed)")
    for i in range(N_V_BINS):
        if volume < V_EDGES[i + 1]:
            return i + 1
    return N_V_BINS


def a_bin_of(anisotropy: float) -> int:
    if not 0.0 < anisotropy <= 1.0:
        raise RoutingError(f"anisotropy {anisotropy!r} outside (0, 1]")
    for i in range(N_A_BINS):
        if anisotropy <= A_EDGES[i + 1]:
            return i + 1
    return N_A_BINS


def classify(desc: AcquisitionDescriptor) -> BinCoord:
    return BinCoord(v_bin_of(desc.volume), a_bin_of(desc.anisotropy))


def feasible_volume_range(cell: BinCoord) -> Optional[Tuple[float, float]]:
    """Reachable voxel volumes ``[lo, hi)`` of ``cell`` with every side >= 1 mm.

    With the shortest side at least 1 mm and ``A <= a_hi`` the longest side is
    at least ``1 / a_hi``, so ``V >= 1 / a_hi``; any larger volume is reachable
    by scaling. Returns ``None`` for an empty range.
    """
    v_lo, v_hi = cell.volume_interval
    a_hi = cell.anisotropy_interval[1]
    lo = max(v_lo, 1.0 / a_hi)
    if lo >= v_hi:
        return None
    return lo, v_hi


def is_feasible(cell: BinCoord) -> bool:
    return feasible_volume_range(cell) is not None


def feasible_cells() -> List[BinCoord]:
    return [
        BinCoord(v, a)
        for a in range(N_A_BINS, 0, -1)
        for v in range(1, N_V_BINS + 1)
        if is_feasible(BinCoord(v, a))
    ]


@dataclass(frozen=True)
class ExpertGrid:
    cells: Tuple[BinCoord, ...] = field(default_factory=lambda: tuple(feasible_cells()))

    @property
    def excluded(self) -> Tuple[BinCoord, ...]:
        all_cells = [BinCoord(v, a) for a in range(1, N_A_BINS + 1) for v in range(1, N_V_BINS + 1)]
        return tuple(c for c in all_cells if c not in self.cells)

    def __contains__(self, cell) -> bool:
        return cell in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


# -- gating ---------------------------------------------------------------------


@dataclass(frozen=True)
class RoutingDecision:
    """``cell`` is ``None`` when no voxel side exceeds 1 mm."""

    cell: Optional[BinCoord]
    descriptor: Optional[AcquisitionDescriptor] = None

    @property
    def needs_enhancement(self) -> bool:
        return self.cell is not None

    @property
    def expert_id(self) -> str:
        return "none" if self.cell is None else str(self.cell)

    def __str__(self) -> str:
        return self.expert_id


HeaderLike = Union[Volume, VolumeHeader, Sequence[float]]


def _spacing_of(obj: HeaderLike) -> Tuple[float, float, float]:
    if isinstance(obj, (Volume, VolumeHeader)):
        return obj.spacing
    return tuple(float(x) for x in obj)


def route(obj: HeaderLike, grid: Optional[ExpertGrid] = None) -> RoutingDecision:
    """Pick the expert from header geometry alone.

    Accepts a :class:`Volume`, a :class:`VolumeHeader` or a bare spacing
    triplet; only the spacing is ever read.
    """
    spacing = _spacing_of(obj)
    if all(r <= ENHANCE_THRESHOLD_MM + SPACING_TOL_MM for r in spacing):
        return RoutingDecision(None)
    clipped = tuple(max(r, ENHANCE_THRESHOLD_MM) for r in spacing)
    desc = descriptors(clipped)
    cell = classify(desc)
    grid = grid or ExpertGrid()
    if cell not in grid:
        raise RoutingError(
            f"spacing {spacing} maps to {cell} (V={desc.volume:.4g}, A={desc.anisotropy:.4g}), "
            "which has no expert"
        )
    return RoutingDecision(cell, desc)


# -- curriculum -------------------------------------------------------------------


class TransferKind(str, enum.Enum):
    VOLUMETRIC = "volumetric"
    ANISOTROPY = "anisotropy"


@dataclass(frozen=True)
class CurriculumStep:
    cell: BinCoord
    parent: Optional[BinCoord] = None
    kind: Optional[TransferKind] = None

    @property
    def scratch(self) -> bool:
        return self.parent is None

    def to_dict(self) -> dict:
        if self.scratch:
            return {"cell": str(self.cell), "init": "scratch"}
        return {
            "cell": str(self.cell),
            "init": "transfer",
            "parent": str(self.parent),
            "kind": self.kind.value,
        }


@dataclass(frozen=True)
class CurriculumPlan:
    steps: Tuple[CurriculumStep, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def step_for(self, cell: BinCoord) -> CurriculumStep:
        for s in self.steps:
            if s.cell == cell:
                return s
        raise KeyError(str(cell))

    def edges(self) -> List[Tuple[BinCoord, BinCoord, TransferKind]]:
        return [(s.parent, s.cell, s.kind) for s in self.steps if not s.scratch]

    def to_json(self) -> str:
        return json.dumps({"steps": [s.to_dict() for s in self.steps]}, indent=2) + "\n"

    def to_dot(self) -> str:
        lines = ["digraph curriculum {", "  rankdir=LR;"]
        for s in self.steps:
            shape = "doublecircle" if s.scratch else "circle"
            lines.append(f'  "{s.cell}" [shape={shape}];')
        for parent, child, kind in self.edges():
            color = "red" if kind is TransferKind.VOLUMETRIC else "blue"
            lines.append(f'  "{parent}" -> "{child}" [label="{kind.value}", color={color}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def curriculum(grid: Optional[ExpertGrid] = None) -> CurriculumPlan:
    """Transfer-learning order over the grid.

    Rows are visited from near-isotropic to highly anisotropic. The first
    cell of the top row trains from scratch; the first feasible cell of every
    other row is seeded from the cell above it (anisotropy transfer); every
    remaining cell inherits from its left neighbour (volumetric transfer).
    """
    grid = grid or ExpertGrid()
    cells = set(grid.cells)
    steps: List[CurriculumStep] = []
    for a in range(N_A_BINS, 0, -1):
        row = sorted((c for c in cells if c.a_bin == a), key=lambda c: c.v_bin)
        for i, cell in enumerate(row):
            left = BinCoord(cell.v_bin - 1, a) if cell.v_bin > 1 else None
            above = BinCoord(cell.v_bin, a + 1) if a < N_A_BINS else None
            if not steps:
                steps.append(CurriculumStep(cell))
            elif i > 0 and left in cells:
                steps.append(CurriculumStep(cell, left, TransferKind.VOLUMETRIC))
            elif above is not None and above in cells:
                steps.append(CurriculumStep(cell, above, TransferKind.ANISOTROPY))
            else:
                raise ValueError(f"{cell} has no adjacent trained predecessor")
    return CurriculumPlan(tuple(steps))
