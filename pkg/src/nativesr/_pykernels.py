"""Pure numpy implementations of the hot resampling kernels.

These mirror ``_ckernels.pyx`` function for function. Every kernel accumulates
each output element independently and in a fixed operand order, so both backends
agree to rounding and results never depend on scheduling.
"""
import numpy as np

__all__ = ["banded_lastaxis", "bspline_prefilter_lastaxis", "laplacian7"]


def banded_lastaxis(data, starts, weights):
    """Apply a banded 1D operator along the last axis of a 2D array.

    ``out[m, k] = sum_w weights[k, w] * data[m, starts[k] + w]``

    Args:
        data: (M, n_in) float64 array.
        starts: (n_out,) int64 first source index per output sample.
        weights: (n_out, width) float64 band weights. Entries past the end of
            the source must carry zero weight; their index is clamped.

    Returns:
        (M, n_out) float64 array.
    """
    data = np.asarray(data, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    n_in = data.shape[1]
    out = np.zeros((data.shape[0], starts.shape[0]), dtype=np.float64)
    for w in range(weights.shape[1]):
        idx = np.minimum(starts + w, n_in - 1)
        out += weights[:, w] * data[:, idx]
    return out


def bspline_prefilter_lastaxis(data, pole, tol_horizon):
    """Cubic B-spline coefficient recursion (mirror boundary) along the last axis.

    Args:
        data: (M, n) float64 array of samples.
        pole: the filter pole, ``sqrt(3) - 2`` for cubic splines.
        tol_horizon: number of terms of the causal initialisation sum.

    Returns:
        (M, n) float64 coefficients.
    """
    c = np.array(data, dtype=np.float64, copy=True)
    n = c.shape[1]
    if n == 1:
        return c
    z = pole
    gain = (1.0 - z) * (1.0 - 1.0 / z)
    c *= gain
    if tol_horizon < n:
        zk = 1.0
        init = np.zeros(c.shape[0], dtype=np.float64)
        for k in range(tol_horizon):
            init += zk * c[:, k]
            zk *= z
    else:
        # exact mirror-symmetric initialisation for short signals
        zn = z
        iz = 1.0 / z
        z2n = z ** (n - 1)
        init = c[:, 0] + z2n * c[:, n - 1]
        z2n = z2n * z2n * iz
        for k in range(1, n - 1):
            init = init + (zn + z2n) * c[:, k]
            zn *= z
            z2n *= iz
        init = init / (1.0 - zn * zn)
    c[:, 0] = init
    for k in range(1, n):
        c[:, k] = c[:, k] + z * c[:, k - 1]
    c[:, n - 1] = (z / (z * z - 1.0)) * (c[:, n - 1] + z * c[:, n - 2])
    for k in range(n - 2, -1, -1):
        c[:, k] = z * (c[:, k + 1] - c[:, k])
    return c


def laplacian7(data):
    """7-point discrete Laplacian with replicate (edge-clamp) padding."""
    data = np.asarray(data, dtype=np.float64)
    p = np.pad(data, 1, mode="edge")
    out = -6.0 * data
    out = out + p[:-2, 1:-1, 1:-1]
    out = out + p[2:, 1:-1, 1:-1]
    out = out + p[1:-1, :-2, 1:-1]
    out = out + p[1:-1, 2:, 1:-1]
    out = out + p[1:-1, 1:-1, :-2]
    out = out + p[1:-1, 1:-1, 2:]
    return out
