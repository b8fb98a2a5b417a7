"""Synthetic scenes, the HSIC cube file format, and PGM heatmaps.

HSIC layout (little-endian)::

    offset  size  field
    0       4     magic b"HSIC"
    4       2     version (u16) = 1
    6       4     W (u32)
    10      4     H (u32)
    14      4     C (u32)
    18      4*WHC float32 payload, band slowest, then row (y), then column (x)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .degradation import (
    PsfSpec,
    SrfSpec,
    default_srf,
    gaussian_psf,
    simulate_spatial_degrade,
    simulate_spectral_degrade,
)

MAGIC = b"HSIC"
VERSION = 1
HEADER = struct.Struct("<4sHIII")
HEADER_SIZE = HEADER.size  # 18
MAX_ELEMENTS = 1 << 31

TEXTURES = ("gaussian-mixture", "smooth-gradient", "checker")

PathLike = Union[str, os.PathLike]


class CubeFormatError(ValueError):
    pass


class BadMagicError(CubeFormatError):
    pass


class TruncatedPayloadError(CubeFormatError):
    pass


class ExtentOverflowError(CubeFormatError):
    pass


def expected_file_size(W: int, H: int, C: int) -> int:
    return HEADER_SIZE + 4 * W * H * C


def encode_cube(cube: np.ndarray) -> bytes:
    cube = np.asarray(cube)
    if cube.ndim != 3 or 0 in cube.shape:
        raise CubeFormatError(f"cube must be a nonempty (W,H,C) array, got shape {cube.shape}")
    W, H, C = cube.shape
    if W * H * C >= MAX_ELEMENTS or max(W, H, C) > 0xFFFFFFFF:
        raise ExtentOverflowError(f"cube {W}x{H}x{C} is too large for the format")
    payload = np.ascontiguousarray(cube.transpose(2, 1, 0), dtype="<f4").tobytes()
    return HEADER.pack(MAGIC, VERSION, W, H, C) + payload


def decode_cube(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("bad magic: not an HSIC cube file")
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayloadError("truncated header")
    _, version, W, H, C = HEADER.unpack_from(buf)
    if version != VERSION:
        raise CubeFormatError(f"unsupported HSIC version {version}")
    if W == 0 or H == 0 or C == 0:
        raise CubeFormatError("zero extent in header")
    n = W * H * C
    if n >= MAX_ELEMENTS:
        raise ExtentOverflowError(f"header extents {W}x{H}x{C} overflow the element limit")
    want = expected_file_size(W, H, C)
    if len(buf) < want:
        raise TruncatedPayloadError(f"truncated payload: {len(buf)} bytes, expected {want}")
    if len(buf) > want:
        raise CubeFormatError(f"trailing data: {len(buf)} bytes, expected {want}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=HEADER_SIZE)
    return np.ascontiguousarray(data.reshape(C, H, W).transpose(2, 1, 0), dtype=np.float64)


def write_cube(path: PathLike, cube: np.ndarray) -> None:
    """Write a cube; values are stored as float32."""
    data = encode_cube(cube)
    with open(path, "wb") as fh:
        fh.write(data)


def read_cube(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_cube(fh.read())


# ---------------------------------------------------------------------------
# heatmaps
# ---------------------------------------------------------------------------


def write_heatmap(path: PathLike, values: np.ndarray, scale: Union[str, float] = "auto") -> float:
    """Write a ``(W, H)`` map as an 8-bit binary PGM (P5).

    ``scale="auto"`` maps the map maximum to 255; a number fixes that maximum
    and saturates anything above it. Returns the scale used, which is also
    recorded in a header comment.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("heatmap must be a 2-D (W, H) map")
    if not np.isfinite(v).all() or np.any(v < 0):
        raise ValueError("heatmap values must be finite and nonnegative")
    if scale == "auto":
        vmax = float(v.max())
    else:
        vmax = float(scale)
        if not np.isfinite(vmax) or vmax <= 0:
            raise ValueError("fixed heatmap scale must be positive")
    if vmax > 0:
        pix = np.clip(np.rint(v / vmax * 255.0), 0, 255).astype(np.uint8)
    else:
        pix = np.zeros(v.shape, dtype=np.uint8)
    W, H = v.shape
    header = f"P5\n# scale_max {vmax!r}\n{W} {H}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        # PGM rows run along y
        fh.write(np.ascontiguousarray(pix.T).tobytes())
    return vmax


def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit P5 file back to a ``(W, H)`` uint8 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError("not a P5 graymap")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    pix = np.frombuffer(buf, dtype=np.uint8, count=W * H, offset=pos + 1)
    return pix.reshape(H, W).T


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


@dataclass
class Scene:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    m: np.ndarray
    srf: SrfSpec
    psf: PsfSpec

    @property
    def scale(self) -> int:
        return self.psf.scale

    @classmethod
    def from_ground_truth(cls, x: np.ndarray, srf: SrfSpec, psf: PsfSpec) -> "Scene":
        y = simulate_spatial_degrade(x, psf)
        z = simulate_spectral_degrade(x, srf)
        m = simulate_spectral_degrade(y, srf)
        return cls(x=x, y=y, z=z, m=m, srf=srf, psf=psf)


def _smooth_signature(rng, C):
    lam = np.linspace(0.0, 1.0, C)
    s = rng.uniform(0.15, 0.35) + rng.uniform(-0.15, 0.15) * lam
    for _ in range(rng.integers(2, 5)):
        mu = rng.uniform(-0.1, 1.1)
        width = rng.uniform(0.08, 0.3)
        s = s + rng.uniform(-0.25, 0.45) * np.exp(-0.5 * ((lam - mu) / width) ** 2)
    return np.clip(s, 0.02, 0.95)


def _blob_field(rng, W, H, n_blobs, min_w, max_w):
    xx, yy = np.meshgrid(np.arange(W), np.arange(H), indexing="ij")
    f = np.zeros((W, H))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        sx, sy = rng.uniform(min_w, max_w, size=2)
        f += rng.uniform(0.3, 1.0) * np.exp(-0.5 * (((xx - cx) / sx) ** 2 + ((yy - cy) / sy) ** 2))
    return f


def _abundance_logits(rng, texture, W, H, K):
    xx, yy = np.meshgrid(np.linspace(0, 1, W), np.linspace(0, 1, H), indexing="ij")
    fields = []
    for _ in range(K):
        if texture == "gaussian-mixture":
            scale = max(W, H)
            f = 3.0 * _blob_field(rng, W, H, 6, 0.02 * scale, 0.15 * scale)
        elif texture == "smooth-gradient":
            a, b = rng.normal(size=2)
            f = 2.0 * (a * xx + b * yy)
            for _ in range(2):
                kx, ky = rng.uniform(1.0, 4.0, size=2)
                ph = rng.uniform(0, 2 * np.pi)
                f = f + rng.uniform(0.5, 1.5) * np.sin(2 * np.pi * (kx * xx + ky * yy) + ph)
        elif texture == "checker":
            period = rng.integers(3, 11)
            ox, oy = rng.integers(0, period, size=2)
            ii, jj = np.meshgrid(np.arange(W) + ox, np.arange(H) + oy, indexing="ij")
            f = 3.0 * (((ii // period) + (jj // period)) % 2) + 0.3 * rng.normal(size=(W, H))
        else:
            raise ValueError(f"unknown texture {texture!r}; choose from {TEXTURES}")
        fields.append(f)
    return np.stack(fields, axis=-1)


def synth_x(W: int, H: int, C: int, seed: int, texture: str = "gaussian-mixture",
            endmembers: int = 4, detail_components: int = 12, detail_amplitude: float = 0.06) -> np.ndarray:
    """Ground-truth cube in ``[0, 1]``: mixed endmembers plus weak fine-scale detail.

    Abundances come from the chosen spatial texture and are softmax-normalized,
    so each pixel is a convex mix of smooth spectral signatures. The detail
    terms pair per-pixel random fields with rough spectral signatures; they
    keep every support set and every PSF tap excited.
    """
    if texture not in TEXTURES:
        raise ValueError(f"unknown texture {texture!r}; choose from {TEXTURES}")
    rng = np.random.default_rng(seed)
    sig = np.stack([_smooth_signature(rng, C) for _ in range(endmembers)])  # (K, C)
    logits = _abundance_logits(rng, texture, W, H, endmembers)
    logits -= logits.max(axis=-1, keepdims=True)
    ab = np.exp(logits)
    ab /= ab.sum(axis=-1, keepdims=True)
    x = ab @ sig
    if detail_components > 0 and detail_amplitude > 0:
        fields = rng.uniform(-1.0, 1.0, size=(W, H, detail_components))
        rough = rng.uniform(-1.0, 1.0, size=(detail_components, C))
        x = x + detail_amplitude / np.sqrt(detail_components) * (fields @ rough)
    # float32-representable, so a cube written to disk reloads bit-exactly
    return np.clip(x, 0.0, 1.0).astype(np.float32).astype(np.float64)


def synth_scene(W: int = 64, H: int = 64, C: int = 31, C_m: int = 3, r: int = 4, seed: int = 0,
                texture: str = "gaussian-mixture") -> Scene:
    """Deterministic synthetic scene with known SRF (bell-shaped) and PSF (Gaussian)."""
    if min(W, H, C, C_m, r) < 1:
        raise ValueError("scene extents must be positive")
    if W % r or H % r:
        raise ValueError(f"W={W}, H={H} must be divisible by r={r}")
    if C_m >= C:
        raise ValueError("need C_m < C")
    x = synth_x(W, H, C, seed, texture)
    return Scene.from_ground_truth(x, default_srf(C, C_m), gaussian_psf(r))
