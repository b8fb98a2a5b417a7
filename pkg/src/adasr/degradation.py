"""Spectral/spatial degradation: fixed simulators and their learnable twins.

The simulators are plain numpy and generate training data from a known
ground truth. ``SpeDnet`` and ``SpaDnet`` are the learnable networks that
estimate the same operators from data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, conv_spatial_depthwise, conv_spectral_1x1, softmax, softplus


@dataclass
class SrfSpec:
    """Band-level spectral response: support sets over HSI bands plus weights."""

    band_count: int
    supports: List[List[int]]
    weights: List[List[float]]

    def __post_init__(self):
        self.supports = [[int(t) for t in s] for s in self.supports]
        self.weights = [[float(w) for w in ws] for ws in self.weights]
        if self.band_count < 1 or not self.supports:
            raise ValueError("SrfSpec: need at least one band and one support set")
        if len(self.weights) != len(self.supports):
            raise ValueError("SrfSpec: one weight list per support set")
        for j, (s, ws) in enumerate(zip(self.supports, self.weights)):
            if not s:
                raise ValueError(f"SrfSpec: support set {j} is empty")
            if len(s) != len(ws):
                raise ValueError(f"SrfSpec: support set {j} has {len(s)} bands but {len(ws)} weights")
            if min(s) < 0 or max(s) >= self.band_count:
                raise ValueError(f"SrfSpec: support set {j} indexes outside [0, {self.band_count})")
            if min(ws) < 0 or not np.isfinite(ws).all():
                raise ValueError(f"SrfSpec: support set {j} has negative or non-finite weights")
            if sum(ws) <= 0:
                raise ValueError(f"SrfSpec: support set {j} weights sum to zero")

    @property
    def msi_band_count(self) -> int:
        return len(self.supports)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.msi_band_count, self.band_count), dtype=bool)
        for j, s in enumerate(self.supports):
            m[j, s] = True
        return m

    def weight_matrix(self) -> np.ndarray:
        """Dense ``(C_m, C)`` raw weights, zero outside the supports."""
        w = np.zeros((self.msi_band_count, self.band_count))
        for j, (s, ws) in enumerate(zip(self.supports, self.weights)):
            w[j, s] = ws
        return w

    def response_matrix(self) -> np.ndarray:
        """Row-normalized weights; row j sums to 1."""
        w = self.weight_matrix()
        return w / w.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"band_count": self.band_count, "supports": self.supports, "weights": self.weights}

    @classmethod
    def from_dict(cls, d: dict) -> "SrfSpec":
        return cls(band_count=d["band_count"], supports=d["supports"], weights=d["weights"])


@dataclass
class PsfSpec:
    """Spatial response: an r x r nonnegative kernel applied with stride r."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] < 1:
            raise ValueError("PsfSpec: kernel must be square r x r")
        if np.any(k < 0) or not np.isfinite(k).all():
            raise ValueError("PsfSpec: kernel entries must be finite and nonnegative")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ValueError(f"PsfSpec: kernel sums to {k.sum()!r}, expected 1")
        self.kernel = k

    @property
    def scale(self) -> int:
        return self.kernel.shape[0]

    def to_dict(self) -> dict:
        return {"scale": self.scale, "kernel": self.kernel.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PsfSpec":
        spec = cls(kernel=np.array(d["kernel"], dtype=np.float64))
        if "scale" in d and int(d["scale"]) != spec.scale:
            raise ValueError("PsfSpec: scale does not match kernel size")
        return spec


def partition_supports(band_count: int, msi_band_count: int) -> List[List[int]]:
    """Contiguous, near-equal partition of ``band_count`` bands into groups."""
    if not 1 <= msi_band_count <= band_count:
        raise ValueError("need 1 <= msi_band_count <= band_count")
    edges = np.linspace(0, band_count, msi_band_count + 1).round().astype(int)
    return [list(range(edges[j], edges[j + 1])) for j in range(msi_band_count)]


def default_srf(band_count: int, msi_band_count: int) -> SrfSpec:
    """Bell-shaped response over a contiguous partition of the bands."""
    supports = partition_supports(band_count, msi_band_count)
    weights = []
    for s in supports:
        n = len(s)
        pos = np.arange(n) - (n - 1) / 2.0
        sigma = max(n / 3.0, 0.5)
        weights.append(np.exp(-0.5 * (pos / sigma) ** 2).tolist())
    return SrfSpec(band_count=band_count, supports=supports, weights=weights)


def gaussian_psf(scale: int, sigma: Optional[float] = None) -> PsfSpec:
    """Truncated r x r Gaussian, sigma = r/2 unless given, normalized to sum 1."""
    if scale < 1:
        raise ValueError("scale must be positive")
    sigma = scale / 2.0 if sigma is None else float(sigma)
    pos = np.arange(scale) - (scale - 1) / 2.0
    g = np.exp(-0.5 * (pos / sigma) ** 2)
    k = np.outer(g, g)
    k /= k.sum()
    return PsfSpec(kernel=k)


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def simulate_spatial_degrade(x: np.ndarray, psf: PsfSpec) -> np.ndarray:
    """``(W, H, C) -> (W/r, H/r, C)`` block-wise correlation with the PSF kernel."""
    x = np.asarray(x, dtype=np.float64)
    r = psf.scale
    W, H, C = x.shape
    if W % r or H % r:
        raise ShapeError(f"spatial degrade: {W}x{H} not divisible by r={r}")
    blocks = x.reshape(W // r, r, H // r, r, C)
    return np.einsum("aibjc,ij->abc", blocks, psf.kernel)


def simulate_spectral_degrade(x: np.ndarray, srf: SrfSpec) -> np.ndarray:
    """``(W, H, C) -> (W, H, C_m)`` weighted average over each support set."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != srf.band_count:
        raise ShapeError(f"spectral degrade: cube has {x.shape[-1]} bands, SRF expects {srf.band_count}")
    return x @ srf.response_matrix().T


# ---------------------------------------------------------------------------
# learnable networks
# ---------------------------------------------------------------------------


def softplus_inverse(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("softplus_inverse needs positive values")
    return w + np.log(-np.expm1(-w))


def spednet_forward(y: Tensor, raw_weights: Tensor, mask: np.ndarray) -> Tensor:
    return conv_spectral_1x1(y, softplus(raw_weights), mask)


def spadnet_forward(z: Tensor, raw_kernel: Tensor) -> Tensor:
    r = raw_kernel.shape[0]
    return conv_spatial_depthwise(z, softmax(raw_kernel.reshape(r * r)).reshape(r, r))


class SpeDnet:
    """Learnable SRF: softplus-positive weights on fixed support sets."""

    def __init__(self, supports: Sequence[Sequence[int]], band_count: int):
        self.supports = [list(s) for s in supports]
        self.band_count = band_count
        self.mask = np.zeros((len(self.supports), band_count), dtype=bool)
        for j, s in enumerate(self.supports):
            if not s:
                raise ValueError(f"support set {j} is empty")
            self.mask[j, s] = True
        # softplus(raw) == 1: uniform starting response
        init = np.where(self.mask, np.log(np.e - 1.0), 0.0)
        self.raw = Tensor(init, requires_grad=True)

    @classmethod
    def from_srf(cls, srf: SrfSpec) -> "SpeDnet":
        net = cls(srf.supports, srf.band_count)
        net.set_weights(srf.weight_matrix())
        return net

    def set_weights(self, weights: np.ndarray) -> None:
        """Set effective weights; entries outside the mask are ignored."""
        w = np.where(self.mask, np.asarray(weights, dtype=np.float64), 1.0)
        self.raw.data[...] = np.where(self.mask, softplus_inverse(w), 0.0)

    def parameters(self) -> List[Tensor]:
        return [self.raw]

    def effective_weights(self) -> np.ndarray:
        return np.where(self.mask, np.logaddexp(0.0, self.raw.data), 0.0)

    def response_matrix(self) -> np.ndarray:
        w = self.effective_weights()
        return w / w.sum(axis=1, keepdims=True)

    def __call__(self, y: Tensor, frozen: bool = False) -> Tensor:
        raw = self.raw.detach() if frozen else self.raw
        return spednet_forward(y, raw, self.mask)


class SpaDnet:
    """Learnable PSF: softmax-normalized r x r kernel shared by all bands."""

    def __init__(self, scale: int):
        self.scale = int(scale)
        self.raw = Tensor(np.zeros((self.scale, self.scale)), requires_grad=True)

    @classmethod
    def from_psf(cls, psf: PsfSpec) -> "SpaDnet":
        net = cls(psf.scale)
        net.set_kernel(psf.kernel)
        return net

    def set_kernel(self, kernel: np.ndarray) -> None:
        k = np.asarray(kernel, dtype=np.float64)
        if np.any(k <= 0):
            raise ValueError("softmax-parameterized kernel needs strictly positive entries")
        logk = np.log(k)
        self.raw.data[...] = logk - logk.mean()

    def parameters(self) -> List[Tensor]:
        return [self.raw]

    def kernel(self) -> np.ndarray:
        x = self.raw.data
        e = np.exp(x - x.max())
        return e / e.sum()

    def __call__(self, z: Tensor, frozen: bool = False) -> Tensor:
        raw = self.raw.detach() if frozen else self.raw
        return spadnet_forward(z, raw)
