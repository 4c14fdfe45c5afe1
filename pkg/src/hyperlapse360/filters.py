"""1D temporal smoothing and angle unwrapping shared by several stages."""

from __future__ import annotations

import numpy as np


def gaussian_offsets(sigma: float) -> np.ndarray:
    """Integer offsets of the truncated window [-3*sigma, 3*sigma]."""
    reach = int(np.floor(3.0 * sigma))
    return np.arange(-reach, reach + 1)


def gaussian_weights(offsets: np.ndarray, sigma: float) -> np.ndarray:
    # note the kernel form: exp(-d^2 / sigma^2), not the usual 1/(2 sigma^2)
    d = np.asarray(offsets, dtype=np.float64)
    return np.exp(-(d * d) / (sigma * sigma))


def gaussian_smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Truncated-window Gaussian smoothing; weights renormalized at boundaries.

    sigma <= 0 returns a copy of the input.
    """
    x = np.asarray(values, dtype=np.float64)
    if sigma <= 0.0:
        return x.copy()
    offs = gaussian_offsets(sigma)
    w = gaussian_weights(offs, sigma)
    n = x.shape[0]
    out = np.zeros_like(x)
    norm = np.zeros(n, dtype=np.float64)
    for off, wi in zip(offs, w):
        lo = max(0, -off)
        hi = min(n, n - off)
        if lo >= hi:
            continue
        out[lo:hi] += wi * x[lo + off : hi + off]
        norm[lo:hi] += wi
    return out / norm


def unwrap_degrees(seq: np.ndarray) -> np.ndarray:
    """Remove 360-degree jumps so consecutive values differ by < 180."""
    return np.unwrap(np.asarray(seq, dtype=np.float64), period=360.0)


def wrap_degrees(seq: np.ndarray) -> np.ndarray:
    return np.mod(np.asarray(seq, dtype=np.float64) + 180.0, 360.0) - 180.0
