import numpy as np
import pytest

from adasr import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("theta", [0.0, 0.37, -1.2, 3.0])
def test_rotate_parity(theta, rng):
    img = rng.normal(size=(9, 6, 3))
    gout = rng.normal(size=img.shape)
    a = K.NUMPY_KERNELS["rotate_forward"](img, theta)
    b = K.NUMBA_KERNELS["rotate_forward"](img, theta)
    assert np.max(np.abs(a - b)) < 1e-13
    gi_a, gt_a = K.NUMPY_KERNELS["rotate_backward"](img, theta, gout, True)
    gi_b, gt_b = K.NUMBA_KERNELS["rotate_backward"](img, theta, gout, True)
    assert np.max(np.abs(gi_a - gi_b)) < 1e-12
    assert gt_a == pytest.approx(gt_b, rel=1e-12, abs=1e-12)


@needs_numba
def test_stride_conv_parity(rng):
    img = rng.normal(size=(8, 12, 3))
    k = rng.normal(size=(4, 4))
    gout = rng.normal(size=(2, 3, 3))
    a = K.NUMPY_KERNELS["stride_conv_forward"](img, k)
    b = K.NUMBA_KERNELS["stride_conv_forward"](img, k)
    assert np.max(np.abs(a - b)) < 1e-12
    gi_a, gk_a = K.NUMPY_KERNELS["stride_conv_backward"](img, k, gout, True)
    gi_b, gk_b = K.NUMBA_KERNELS["stride_conv_backward"](img, k, gout, True)
    assert np.max(np.abs(gi_a - gi_b)) < 1e-12
    assert np.max(np.abs(gk_a - gk_b)) < 1e-12


def test_backward_without_input_grad(rng):
    img = rng.normal(size=(4, 4, 1))
    gin, _ = K.NUMPY_KERNELS["rotate_backward"](img, 0.2, np.ones_like(img), False)
    assert gin is None


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("off", "numpy"), ("false", "numpy")])
def test_env_flag_selects_numpy(monkeypatch, flag, expected):
    monkeypatch.setenv("ADASR_NUMBA", flag)
    assert K.active_backend() == expected
    assert K.get("rotate_forward") is K.rotate_forward_np


@needs_numba
def test_env_flag_default_is_numba(monkeypatch):
    monkeypatch.delenv("ADASR_NUMBA", raising=False)
    assert K.active_backend() == "numba"
