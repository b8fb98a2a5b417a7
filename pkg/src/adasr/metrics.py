"""Fusion quality metrics: SAM, ERGAS, PSNR, RMSE, CC, and per-pixel error maps.

All inputs are ``(W, H, C)`` arrays with data in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

NORM_FLOOR = 1e-12
PSNR_CLAMP = 100.0


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    sam: float
    ergas: float
    psnr: float
    rmse: float
    cc: float
    scale: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(xhat, x):
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise MetricError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    if x.ndim != 3:
        raise MetricError("expected (W, H, C) cubes")
    return xhat, x


def _angles(xhat, x):
    """Per-pixel spectral angle in degrees, NaN where either norm is degenerate."""
    n1 = np.linalg.norm(xhat, axis=-1, keepdims=True)
    n2 = np.linalg.norm(x, axis=-1, keepdims=True)
    ok = (n1 >= NORM_FLOOR) & (n2 >= NORM_FLOOR)
    u1 = xhat / np.where(ok, n1, 1.0)
    u2 = x / np.where(ok, n2, 1.0)
    # half-angle form: exact zero for parallel vectors, accurate near 0 and 180
    ang = 2.0 * np.arctan2(np.linalg.norm(u1 - u2, axis=-1), np.linalg.norm(u1 + u2, axis=-1))
    return np.where(ok[..., 0], np.degrees(ang), np.nan)


def sam(xhat, x) -> float:
    xhat, x = _pair(xhat, x)
    ang = _angles(xhat, x)
    if np.all(np.isnan(ang)):
        raise MetricError("SAM: every pixel has a zero-norm spectrum")
    return float(np.nanmean(ang))


def rmse(xhat, x) -> float:
    xhat, x = _pair(xhat, x)
    return float(np.sqrt(np.mean((xhat - x) ** 2)))


def psnr(xhat, x, peak: float = 1.0) -> float:
    e = rmse(xhat, x)
    if e < 1e-10:
        return PSNR_CLAMP
    return float(20.0 * np.log10(peak / e))


def ergas(xhat, x, r) -> float:
    xhat, x = _pair(xhat, x)
    mu = x.mean(axis=(0, 1))
    bad = np.flatnonzero(np.abs(mu) <= NORM_FLOOR)
    if bad.size:
        raise MetricError(f"ERGAS: band {int(bad[0])} of the reference has zero mean")
    band_rmse = np.sqrt(np.mean((xhat - x) ** 2, axis=(0, 1)))
    return float(100.0 / r * np.sqrt(np.mean((band_rmse / mu) ** 2)))


def cc(xhat, x) -> float:
    xhat, x = _pair(xhat, x)
    a = xhat.reshape(-1, x.shape[-1])
    b = x.reshape(-1, x.shape[-1])
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    va = np.sum(a * a, axis=0)
    vb = np.sum(b * b, axis=0)
    n = a.shape[0]
    for name, v in (("estimate", va), ("reference", vb)):
        bad = np.flatnonzero(v / n <= NORM_FLOOR)
        if bad.size:
            raise MetricError(f"CC: band {int(bad[0])} of the {name} is constant")
    r = np.sum(a * b, axis=0) / np.sqrt(va * vb)
    return float(np.mean(np.clip(r, -1.0, 1.0)))


def error_maps(xhat, x):
    """``(mae_map, sam_map)``, both ``(W, H)``; degenerate SAM pixels read 0."""
    xhat, x = _pair(xhat, x)
    mae = np.mean(np.abs(xhat - x), axis=-1)
    ang = np.nan_to_num(_angles(xhat, x), nan=0.0)
    return mae, ang


def evaluate(xhat, x, r) -> MetricReport:
    return MetricReport(sam=sam(xhat, x), ergas=ergas(xhat, x, r), psnr=psnr(xhat, x),
                        rmse=rmse(xhat, x), cc=cc(xhat, x), scale=int(r))


def bilinear_upsample(y, r) -> np.ndarray:
    """Per-band bilinear upsampling by ``r`` with pixel-center alignment and edge clamping."""
    y = np.asarray(y, dtype=np.float64)
    w, h, _ = y.shape

    def axis_weights(n_lo):
        pos = (np.arange(n_lo * r) - (r - 1) / 2.0) / r
        pos = np.clip(pos, 0, n_lo - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_lo - 1)
        return i0, i1, pos - i0

    i0, i1, fx = axis_weights(w)
    j0, j1, fy = axis_weights(h)
    rows = y[i0] * (1 - fx)[:, None, None] + y[i1] * fx[:, None, None]
    return rows[:, j0] * (1 - fy)[None, :, None] + rows[:, j1] * fy[None, :, None]
