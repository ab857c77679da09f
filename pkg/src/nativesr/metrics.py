"""Loss terms and image-quality metrics.

Everything accepts either :class:`~nativesr.volume.Volume` objects or plain
3D arrays and computes in float64. Sums use numpy's pairwise summation, which
is deterministic for a given array shape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Optional, Union

import numpy as np

from . import kernels
from .volume import Volume

__all__ = [
    "LossConstants",
    "LossBreakdown",
    "MetricError",
    "laplacian",
    "edge_weight_map",
    "mae",
    "wmae",
    "spectral_loss",
    "dice",
    "composite_loss",
    "psnr",
    "pearson_cc",
    "mean_normalize",
    "HIGHER_IS_BETTER",
]

ArrayOrVolume = Union[Volume, np.ndarray]

# PSNR peak convention, recorded in reports.
PSNR_PEAK = "ground-truth range (max - min)"

HIGHER_IS_BETTER = {
    "psnr": True,
    "cc": True,
    "dice": True,
    "mae": False,
    "wmae": False,
    "spectral": False,
    "loss": False,
}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LossConstants:
    gamma: float = 1.0
    epsilon: float = 1e-6
    lambda_fft: float = 2e-6
    lambda_seg: float = 0.1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and >= 0, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConstants":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown loss constants: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def _arr(x: ArrayOrVolume) -> np.ndarray:
    a = x.data if isinstance(x, Volume) else np.asarray(x)
    return a.astype(np.float64, copy=False)


def _pair(y, y_hat):
    a, b = _arr(y), _arr(y_hat)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def laplacian(y: ArrayOrVolume) -> np.ndarray:
    """7-point Laplacian (centre -6, face neighbours +1), replicate padding."""
    a = _arr(y)
    if a.ndim != 3:
        raise MetricError("laplacian needs a 3D field")
    return kernels.laplacian7(a)


def edge_weight_map(y: ArrayOrVolume, consts: LossConstants = LossConstants(), kernel=None):
    """Log-compressed, peak-normalised Laplacian magnitude in ``[0, 1)``.

    ``kernel`` may replace the default 7-point Laplacian with any callable
    mapping a 3D array to its filtered response. Returns a Volume when given
    one, else an array.
    """
    a = _arr(y)
    response = laplacian(a) if kernel is None else np.asarray(kernel(a), dtype=np.float64)
    compressed = np.log1p(consts.gamma * np.abs(response))
    w = compressed / (compressed.max() + consts.epsilon)
    return y.with_data(w) if isinstance(y, Volume) else w


def mae(y, y_hat) -> float:
    a, b = _pair(y, y_hat)
    return float(np.mean(np.abs(a - b)))


def wmae(y, y_hat, consts: LossConstants = LossConstants()) -> float:
    """Edge-weighted MAE: ``mean((1 + W(y)) * |y - y_hat|)``."""
    a, b = _pair(y, y_hat)
    w = edge_weight_map(a, consts)
    return float(np.mean((1.0 + w) * np.abs(a - b)))


def spectral_loss(y, y_hat, norm: str = "l1", reduction: str = "mean") -> float:
    """Distance between unnormalised 3D DFTs.

    ``norm="l1"`` averages ``|F(y) - F(y_hat)|`` over frequencies, ``"l2"``
    averages its square. The difference is taken before transforming
    (identical by linearity) so the loss is exactly zero for equal inputs.
    """
    a, b = _pair(y, y_hat)
    mod = np.abs(np.fft.fftn(a - b))
    if norm == "l1":
        vals = mod
    elif norm == "l2":
        vals = mod * mod
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if reduction == "mean":
        return float(vals.mean())
    if reduction == "sum":
        return float(vals.sum())
    raise ValueError(f"unknown reduction {reduction!r}")


def dice(a, b, classes: Optional[Iterable[int]] = None, reduction: str = "macro"):
    """Dice overlap of two label volumes.

    Args:
        a, b: integer label volumes of equal shape.
        classes: labels to score; defaults to every label present in either.
        reduction: ``"per-class"`` returns ``{label: dice}``; ``"macro"``
            averages over the requested labels present in either volume.
            A label absent from both scores 1.0.
    """
    la, lb = (np.asarray(x.data if isinstance(x, Volume) else x) for x in (a, b))
    if la.shape != lb.shape:
        raise MetricError(f"shape mismatch: {la.shape} vs {lb.shape}")
    la = np.rint(la).astype(np.int64)
    lb = np.rint(lb).astype(np.int64)
    if classes is None:
        classes = np.union1d(np.unique(la), np.unique(lb)).tolist()
    classes = [int(c) for c in classes]
    if not classes:
        raise MetricError("dice needs at least one class")
    per_class: Dict[int, float] = {}
    present = []
    for c in classes:
        ma, mb = la == c, lb == c
        na, nb = int(ma.sum()), int(mb.sum())
        if na + nb == 0:
            per_class[c] = 1.0
            continue
        present.append(c)
        per_class[c] = 2.0 * int(np.count_nonzero(ma & mb)) / (na + nb)
    if reduction in ("per-class", "per_class"):
        return per_class
    if reduction != "macro":
        raise ValueError(f"unknown reduction {reduction!r}")
    if not present:
        return 1.0
    return float(sum(per_class[c] for c in present) / len(present))


@dataclass(frozen=True)
class LossBreakdown:
    wmae: float
    spectral: float
    seg: float
    weighted_spectral: float
    weighted_seg: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def composite_loss(y, y_hat, s_y=None, s_y_hat=None,
                   consts: LossConstants = LossConstants(),
                   norm: str = "l1", reduction: str = "mean") -> LossBreakdown:
    """WMAE + lambda_fft * spectral + lambda_seg * (1 - macro Dice).

    The segmentation term is zero when no label volumes are supplied.
    ``total`` is the plain sum of the three weighted terms.
    """
    w = wmae(y, y_hat, consts)
    spec = spectral_loss(y, y_hat, norm, reduction)
    seg = 0.0
    if s_y is not None or s_y_hat is not None:
        if s_y is None or s_y_hat is None:
            raise MetricError("both label volumes are needed for the segmentation term")
        seg = 1.0 - dice(s_y, s_y_hat, reduction="macro")
    ws = consts.lambda_fft * spec
    wg = consts.lambda_seg * seg
    return LossBreakdown(w, spec, seg, ws, wg, w + ws + wg)


def psnr(y, y_hat) -> float:
    """PSNR in dB with the ground-truth dynamic range as peak.

    Returns ``math.inf`` for a perfect reconstruction.
    """
    a, b = _pair(y, y_hat)
    peak = float(a.max() - a.min())
    if peak == 0.0:
        raise MetricError("psnr undefined for a constant ground truth")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def pearson_cc(y, y_hat) -> float:
    a, b = _pair(y, y_hat)
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.sum(da * da)))
    sb = math.sqrt(float(np.sum(db * db)))
    if sa == 0.0 or sb == 0.0:
        raise MetricError("pearson correlation undefined for a constant volume")
    r = float(np.sum(da * db)) / (sa * sb)
    return max(-1.0, min(1.0, r))


def mean_normalize(y_hat, reference):
    """Rescale ``y_hat`` so its mean matches ``reference``'s."""
    a, ref = _pair(y_hat, reference)
    m = float(a.mean())
    if m == 0.0:
        raise MetricError("cannot mean-normalise a zero-mean volume")
    out = a * (float(ref.mean()) / m)
    return y_hat.with_data(out) if isinstance(y_hat, Volume) else out
