"""Structured evaluation over the expert grid.

Every (subject, cell, realization) case gets its own degradation spec seeded
from ``hash(base_seed, subject, cell, realization)``, so the case list and all
results are reproducible and independent of evaluation order.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import metrics as M
from .degrade import DegradationSpec, InfeasibleError, degrade_volume, derive_seed, sample_cell_spec
from .enhance import DEFAULT_OVERLAP, Enhancer, plan_tiles, run_tiled
from .routing import BinCoord, ExpertGrid, is_feasible, route
from .volume import Volume

__all__ = [
    "EvalGridSpec",
    "EvalCase",
    "RawRow",
    "EvalResult",
    "ThresholdSegmenter",
    "METRICS",
    "build_eval_grid",
    "evaluate",
    "rows_to_csv",
    "rows_from_csv",
    "format_float",
    "parse_float",
]

log = logging.getLogger(__name__)

RAW_COLUMNS = ("method", "subject", "v_bin", "a_bin", "realization", "metric", "value", "status")


@dataclass(frozen=True)
class EvalGridSpec:
    subjects: Tuple[str, ...]
    realizations: int = 3
    cells: Optional[Tuple[BinCoord, ...]] = None
    base_seed: int = 0

    @property
    def grid_cells(self) -> Tuple[BinCoord, ...]:
        return tuple(self.cells) if self.cells is not None else ExpertGrid().cells

    @property
    def total_cases(self) -> int:
        return len(self.subjects) * len(self.grid_cells) * self.realizations


@dataclass(frozen=True)
class EvalCase:
    subject: str
    cell: BinCoord
    realization: int
    spec: DegradationSpec


def build_eval_grid(spec: EvalGridSpec) -> List[EvalCase]:
    if not spec.subjects:
        raise ValueError("evaluation grid needs at least one subject")
    if spec.realizations < 1:
        raise ValueError("realizations must be >= 1")
    for cell in spec.grid_cells:
        if not is_feasible(cell):
            raise InfeasibleError(f"{cell} is not a feasible cell")
    cases = []
    for subject in spec.subjects:
        for cell in spec.grid_cells:
            for r in range(spec.realizations):
                seed = derive_seed(spec.base_seed, subject, cell, r)
                cases.append(EvalCase(subject, cell, r, sample_cell_spec(cell, seed)))
    return cases


class ThresholdSegmenter:
    """Stand-in tissue classifier: fixed fractions of the reference's range.

    ``seg(v, reference)`` labels ``v`` as 0..len(fractions) using thresholds
    ``min(ref) + f * (max(ref) - min(ref))``. Labelling both the ground truth
    and the output against the ground truth keeps the classes comparable.
    """

    def __init__(self, fractions: Sequence[float] = (0.2, 0.45, 0.75)):
        self.fractions = tuple(float(f) for f in fractions)

    def __call__(self, v, reference) -> np.ndarray:
        ref = reference.data if isinstance(reference, Volume) else np.asarray(reference)
        lo, hi = float(ref.min()), float(ref.max())
        thresholds = [lo + f * (hi - lo) for f in self.fractions]
        data = v.data if isinstance(v, Volume) else np.asarray(v)
        return np.digitize(data, thresholds).astype(np.int64)


@dataclass(frozen=True)
class RawRow:
    method: str
    subject: str
    v_bin: int
    a_bin: int
    realization: int
    metric: str
    value: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class EvalResult:
    rows: List[RawRow] = field(default_factory=list)
    failures: List[Tuple[str, str, str]] = field(default_factory=list)  # (method, case, message)


def _metric_fns(consts: M.LossConstants, segmenter) -> Dict[str, Callable]:
    def dice_fn(gt, out):
        return M.dice(segmenter(gt, gt), segmenter(out, gt), reduction="macro")

    def loss_fn(gt, out):
        return M.composite_loss(gt, out, segmenter(gt, gt), segmenter(out, gt), consts).total

    return {
        "psnr": M.psnr,
        "cc": M.pearson_cc,
        "dice": dice_fn,
        "mae": M.mae,
        "wmae": lambda gt, out: M.wmae(gt, out, consts),
        "spectral": M.spectral_loss,
        "loss": loss_fn,
    }


METRICS = tuple(M.HIGHER_IS_BETTER)


def evaluate(cases: Sequence[EvalCase],
             ground_truth: Union[Mapping[str, Volume], Callable[[str], Volume]],
             enhancers: Sequence[Enhancer],
             metrics: Sequence[str] = ("psnr", "cc", "dice"),
             consts: M.LossConstants = M.LossConstants(),
             segmenter=None,
             voxel_budget: Optional[int] = None,
             overlap: int = DEFAULT_OVERLAP,
             jobs: int = 1) -> EvalResult:
    """Degrade, route, enhance and score every case with every enhancer.

    Failures (any stage) are recorded per case and method with status
    ``"failed"`` and a NaN value; the run continues. Arms flagged as not
    native-intensity are mean-normalised to the ground truth before scoring.
    Rows come out in case order regardless of ``jobs``.
    """
    segmenter = segmenter or ThresholdSegmenter()
    fns = _metric_fns(consts, segmenter)
    unknown = [m for m in metrics if m not in fns]
    if unknown:
        raise ValueError(f"unknown metrics: {unknown}")
    names = [e.name for e in enhancers]
    if len(set(names)) != len(names):
        raise ValueError(f"enhancer names must be unique: {names}")
    locks = {id(e): threading.Lock() for e in enhancers if not e.concurrent_safe}
    get_gt = ground_truth if callable(ground_truth) else ground_truth.__getitem__

    def call(e: Enhancer, vol: Volume, expert: str) -> Volume:
        def go():
            if voxel_budget is None:
                return e(vol, expert)
            return run_tiled(e, vol, plan_tiles(vol.shape, voxel_budget, overlap), expert=expert)

        lock = locks.get(id(e))
        if lock is None:
            return go()
        with lock:
            return go()

    def one(case: EvalCase):
        rows, fails = [], []
        key = f"{case.subject}/{case.cell}/r{case.realization}"

        def failed(method, msg):
            fails.append((method, key, msg))
            for m in metrics:
                rows.append(RawRow(method, case.subject, case.cell.v_bin, case.cell.a_bin,
                                   case.realization, m, math.nan, "failed"))

        try:
            gt = get_gt(case.subject)
            degraded = degrade_volume(gt, case.spec)
            expert = route(case.spec.triplet).expert_id
        except Exception as exc:
            for e in enhancers:
                failed(e.name, f"degradation: {exc}")
            return rows, fails
        for e in enhancers:
            try:
                out = call(e, degraded, expert)
                if not e.native_intensity:
                    out = M.mean_normalize(out, gt)
                values = [(m, float(fns[m](gt, out))) for m in metrics]
            except Exception as exc:
                failed(e.name, str(exc))
                continue
            for m, val in values:
                rows.append(RawRow(e.name, case.subject, case.cell.v_bin, case.cell.a_bin,
                                   case.realization, m, val, "ok"))
        return rows, fails

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, cases))
    else:
        results = [one(c) for c in cases]
    out = EvalResult()
    for rows, fails in results:
        out.rows.extend(rows)
        out.failures.extend(fails)
    for method, key, msg in out.failures:
        log.warning("case %s failed for %s: %s", key, method, msg)
    return out


# -- raw table serialisation --------------------------------------------------------


def format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(float(x))


def parse_float(s: str) -> float:
    return float(s)


def rows_to_csv(rows: Sequence[RawRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in rows:
        w.writerow([r.method, r.subject, r.v_bin, r.a_bin, r.realization, r.metric,
                    format_float(r.value), r.status])
    return buf.getvalue()


def rows_from_csv(text: str) -> List[RawRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RAW_COLUMNS:
        raise ValueError(f"raw results must have columns {RAW_COLUMNS}")
    return [
        RawRow(d["method"], d["subject"], int(d["v_bin"]), int(d["a_bin"]),
               int(d["realization"]), d["metric"], parse_float(d["value"]), d["status"])
        for d in reader
    ]
