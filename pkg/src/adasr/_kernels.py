"""Hot loops for rotation resampling and stride-r depthwise correlation.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature. ``ADASR_NUMBA=0`` in the environment
forces the numpy path; otherwise numba is used when importable.

Array layout everywhere is ``(W, H, C)``: axis 0 is x, axis 1 is y.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def numba_requested():
    flag = os.environ.get("ADASR_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _sample_grid(W, H, theta):
    cx = (W - 1) / 2.0
    cy = (H - 1) / 2.0
    c = np.cos(theta)
    s = np.sin(theta)
    dx = (np.arange(W, dtype=np.float64) - cx)[:, None]
    dy = (np.arange(H, dtype=np.float64) - cy)[None, :]
    u = cx + c * dx + s * dy
    v = cy - s * dx + c * dy
    # d(u, v)/d(theta)
    du = -s * dx + c * dy
    dv = -c * dx - s * dy
    return u, v, du, dv


def _corners(u, v, W, H):
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    out = []
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < W) & (jj >= 0) & (jj < H)
        out.append((np.where(ok, ii, 0), np.where(ok, jj, 0), ok))
    return out, fu, fv


def rotate_forward_np(img, theta):
    W, H, _ = img.shape
    u, v, _, _ = _sample_grid(W, H, theta)
    corners, fu, fv = _corners(u, v, W, H)
    weights = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
    out = np.zeros_like(img)
    for (ii, jj, ok), w in zip(corners, weights):
        out += np.where(ok, w, 0.0)[:, :, None] * img[ii, jj, :]
    return out


def rotate_backward_np(img, theta, gout, want_input):
    W, H, C = img.shape
    u, v, du, dv = _sample_grid(W, H, theta)
    corners, fu, fv = _corners(u, v, W, H)
    vals = [np.where(ok[:, :, None], img[ii, jj, :], 0.0) for ii, jj, ok in corners]
    a, b, c, d = vals
    fu3 = fu[:, :, None]
    fv3 = fv[:, :, None]
    dval_du = (1 - fv3) * (b - a) + fv3 * (d - c)
    dval_dv = (1 - fu3) * (c - a) + fu3 * (d - b)
    gtheta = float(np.sum(gout * (dval_du * du[:, :, None] + dval_dv * dv[:, :, None])))
    gin = None
    if want_input:
        gin = np.zeros_like(img)
        weights = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
        flat = gin.reshape(W * H, C)
        for (ii, jj, ok), w in zip(corners, weights):
            idx = (ii * H + jj)[ok]
            np.add.at(flat, idx, (w[:, :, None] * gout)[ok])
    return gin, gtheta


def stride_conv_forward_np(img, kernel):
    W, H, C = img.shape
    r = kernel.shape[0]
    blocks = img.reshape(W // r, r, H // r, r, C)
    return np.einsum("aibjc,ij->abc", blocks, kernel)


def stride_conv_backward_np(img, kernel, gout, want_input):
    W, H, C = img.shape
    r = kernel.shape[0]
    blocks = img.reshape(W // r, r, H // r, r, C)
    gk = np.einsum("aibjc,abc->ij", blocks, gout)
    gin = None
    if want_input:
        gin = (gout[:, None, :, None, :] * kernel[None, :, None, :, None]).reshape(W, H, C)
    return gin, gk


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _rotate_forward_nb(img, theta):
        W, H, C = img.shape
        out = np.zeros_like(img)
        cx = (W - 1) / 2.0
        cy = (H - 1) / 2.0
        c = np.cos(theta)
        s = np.sin(theta)
        for i in range(W):
            dx = i - cx
            for j in range(H):
                dy = j - cy
                u = cx + c * dx + s * dy
                v = cy - s * dx + c * dy
                i0 = int(np.floor(u))
                j0 = int(np.floor(v))
                fu = u - i0
                fv = v - j0
                for di in range(2):
                    ii = i0 + di
                    if ii < 0 or ii >= W:
                        continue
                    wu = fu if di else 1.0 - fu
                    for dj in range(2):
                        jj = j0 + dj
                        if jj < 0 or jj >= H:
                            continue
                        w = wu * (fv if dj else 1.0 - fv)
                        for k in range(C):
                            out[i, j, k] += w * img[ii, jj, k]
        return out

    @njit(cache=True)
    def _rotate_backward_nb(img, theta, gout, want_input):
        W, H, C = img.shape
        gin = np.zeros_like(img)
        cx = (W - 1) / 2.0
        cy = (H - 1) / 2.0
        c = np.cos(theta)
        s = np.sin(theta)
        gtheta = 0.0
        corner = np.zeros((2, 2))
        for i in range(W):
            dx = i - cx
            for j in range(H):
                dy = j - cy
                u = cx + c * dx + s * dy
                v = cy - s * dx + c * dy
                du = -s * dx + c * dy
                dv = -c * dx - s * dy
                i0 = int(np.floor(u))
                j0 = int(np.floor(v))
                fu = u - i0
                fv = v - j0
                for k in range(C):
                    for di in range(2):
                        for dj in range(2):
                            ii = i0 + di
                            jj = j0 + dj
                            if 0 <= ii < W and 0 <= jj < H:
                                corner[di, dj] = img[ii, jj, k]
                            else:
                                corner[di, dj] = 0.0
                    a = corner[0, 0]
                    b = corner[1, 0]
                    cc = corner[0, 1]
                    d = corner[1, 1]
                    g = gout[i, j, k]
                    dval_du = (1 - fv) * (b - a) + fv * (d - cc)
                    dval_dv = (1 - fu) * (cc - a) + fu * (d - b)
                    gtheta += g * (dval_du * du + dval_dv * dv)
                    if want_input:
                        for di in range(2):
                            ii = i0 + di
                            if ii < 0 or ii >= W:
                                continue
                            wu = fu if di else 1.0 - fu
                            for dj in range(2):
                                jj = j0 + dj
                                if jj < 0 or jj >= H:
                                    continue
                                gin[ii, jj, k] += g * wu * (fv if dj else 1.0 - fv)
        return gin, gtheta

    @njit(cache=True)
    def _stride_conv_forward_nb(img, kernel):
        W, H, C = img.shape
        r = kernel.shape[0]
        out = np.zeros((W // r, H // r, C))
        for a in range(W // r):
            for b in range(H // r):
                for p in range(r):
                    for q in range(r):
                        w = kernel[p, q]
                        for k in range(C):
                            out[a, b, k] += w * img[a * r + p, b * r + q, k]
        return out

    @njit(cache=True)
    def _stride_conv_backward_nb(img, kernel, gout, want_input):
        W, H, C = img.shape
        r = kernel.shape[0]
        gk = np.zeros_like(kernel)
        gin = np.zeros_like(img)
        for a in range(W // r):
            for b in range(H // r):
                for p in range(r):
                    for q in range(r):
                        w = kernel[p, q]
                        acc = 0.0
                        for k in range(C):
                            g = gout[a, b, k]
                            acc += g * img[a * r + p, b * r + q, k]
                            if want_input:
                                gin[a * r + p, b * r + q, k] = g * w
                        gk[p, q] += acc
        return gin, gk


def rotate_forward_nb(img, theta):
    return _rotate_forward_nb(np.ascontiguousarray(img), float(theta))


def rotate_backward_nb(img, theta, gout, want_input):
    gin, gtheta = _rotate_backward_nb(
        np.ascontiguousarray(img), float(theta), np.ascontiguousarray(gout), bool(want_input)
    )
    return (gin if want_input else None), float(gtheta)


def stride_conv_forward_nb(img, kernel):
    return _stride_conv_forward_nb(np.ascontiguousarray(img), np.ascontiguousarray(kernel))


def stride_conv_backward_nb(img, kernel, gout, want_input):
    gin, gk = _stride_conv_backward_nb(
        np.ascontiguousarray(img),
        np.ascontiguousarray(kernel),
        np.ascontiguousarray(gout),
        bool(want_input),
    )
    return (gin if want_input else None), gk


NUMPY_KERNELS = {
    "rotate_forward": rotate_forward_np,
    "rotate_backward": rotate_backward_np,
    "stride_conv_forward": stride_conv_forward_np,
    "stride_conv_backward": stride_conv_backward_np,
}

NUMBA_KERNELS = (
    {
        "rotate_forward": rotate_forward_nb,
        "rotate_backward": rotate_backward_nb,
        "stride_conv_forward": stride_conv_forward_nb,
        "stride_conv_backward": stride_conv_backward_nb,
    }
    if HAVE_NUMBA
    else None
)


def active_backend():
    return "numba" if HAVE_NUMBA and numba_requested() else "numpy"


def get(name):
    """Return kernel ``name`` for the backend chosen by ``ADASR_NUMBA``."""
    table = NUMBA_KERNELS if active_backend() == "numba" else NUMPY_KERNELS
    return table[name]
