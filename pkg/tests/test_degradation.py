import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adasr.degradation import (
    PsfSpec,
    SpaDnet,
    SpeDnet,
    SrfSpec,
    default_srf,
    gaussian_psf,
    partition_supports,
    simulate_spatial_degrade,
    simulate_spectral_degrade,
    spadnet_forward,
    spednet_forward,
)
from adasr.tensor import ShapeError, Tensor, conv_spatial_depthwise, conv_spectral_1x1

from conftest import gradient_check


def random_srf(rng, C, C_m):
    supports = partition_supports(C, C_m)
    return SrfSpec(C, supports, [rng.uniform(0.1, 1.0, len(s)).tolist() for s in supports])


def random_psf(rng, r):
    k = rng.uniform(0.05, 1.0, (r, r))
    return PsfSpec(k / k.sum())


# --- simulators --------------------------------------------------------------------


def test_spatial_constant():
    out = simulate_spatial_degrade(np.full((8, 8, 3), 0.42), gaussian_psf(4))
    np.testing.assert_allclose(out, 0.42, rtol=0, atol=1e-15)


def test_spatial_block_means():
    x = np.arange(1, 17, dtype=float).reshape(4, 4).T[:, :, None]
    out = simulate_spatial_degrade(x, PsfSpec(np.full((2, 2), 0.25)))
    np.testing.assert_array_equal(out[:, :, 0].T, [[3.5, 5.5], [11.5, 13.5]])


def test_spatial_matches_conv(rng):
    x = rng.uniform(size=(12, 8, 4))
    psf = random_psf(rng, 4)
    ref = conv_spatial_depthwise(Tensor(x), Tensor(psf.kernel)).data
    assert np.max(np.abs(simulate_spatial_degrade(x, psf) - ref)) < 1e-12


def test_spectral_constant_pixel():
    srf = default_srf(7, 3)
    out = simulate_spectral_degrade(np.full((2, 2, 7), 0.8), srf)
    np.testing.assert_allclose(out, 0.8, rtol=0, atol=1e-15)


def test_spectral_hand_example():
    srf = SrfSpec(4, [[0, 1], [2, 3]], [[1, 1], [1, 1]])
    out = simulate_spectral_degrade(np.array([1.0, 2, 3, 4]).reshape(1, 1, 4), srf)
    np.testing.assert_array_equal(out.ravel(), [1.5, 3.5])


def test_spectral_matches_conv(rng):
    x = rng.uniform(size=(5, 6, 31))
    srf = random_srf(rng, 31, 3)
    ref = conv_spectral_1x1(Tensor(x), Tensor(srf.weight_matrix()), srf.mask()).data
    assert np.max(np.abs(simulate_spectral_degrade(x, srf) - ref)) < 1e-12


def test_commutativity_random_scenes(rng):
    for _ in range(50):
        C, C_m, r = rng.integers(4, 12), rng.integers(1, 4), rng.integers(1, 5)
        x = rng.uniform(size=(r * rng.integers(1, 5), r * rng.integers(1, 5), C))
        srf, psf = random_srf(rng, C, C_m), random_psf(rng, r)
        a = simulate_spectral_degrade(simulate_spatial_degrade(x, psf), srf)
        b = simulate_spatial_degrade(simulate_spectral_degrade(x, srf), psf)
        assert np.max(np.abs(a - b)) < 1e-10


def test_simulator_errors():
    with pytest.raises(ShapeError):
        simulate_spatial_degrade(np.ones((6, 8, 1)), gaussian_psf(4))
    with pytest.raises(ShapeError):
        simulate_spectral_degrade(np.ones((2, 2, 5)), default_srf(6, 2))


# --- specs ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        SrfSpec(4, [[0, 1], []], [[1, 1], []])
    with pytest.raises(ValueError):
        SrfSpec(4, [[0, 5]], [[1, 1]])
    with pytest.raises(ValueError):
        SrfSpec(4, [[0, 1]], [[0, 0]])
    with pytest.raises(ValueError):
        PsfSpec(np.full((2, 2), 0.3))
    with pytest.raises(ValueError):
        PsfSpec(np.array([[1.5, -0.5], [0, 0]]))


def test_spec_dict_round_trip(rng):
    srf = random_srf(rng, 10, 3)
    psf = random_psf(rng, 3)
    assert SrfSpec.from_dict(srf.to_dict()) == srf
    assert np.array_equal(PsfSpec.from_dict(psf.to_dict()).kernel, psf.kernel)


def test_default_operators():
    srf = default_srf(31, 3)
    assert [len(s) for s in srf.supports] == [10, 11, 10]
    np.testing.assert_allclose(srf.response_matrix().sum(axis=1), 1.0)
    psf = gaussian_psf(4)
    assert psf.scale == 4
    assert np.allclose(psf.kernel, psf.kernel.T)


# --- learnable networks -------------------------------------------------------------


def test_spednet_at_truth_matches_simulator(rng):
    srf = random_srf(rng, 31, 3)
    y = rng.uniform(size=(16, 16, 31))
    out = SpeDnet.from_srf(srf)(Tensor(y)).data
    assert np.max(np.abs(out - simulate_spectral_degrade(y, srf))) < 1e-12


def test_spadnet_at_truth_matches_simulator(rng):
    psf = random_psf(rng, 4)
    z = rng.uniform(size=(64, 64, 3))
    out = SpaDnet.from_psf(psf)(Tensor(z)).data
    assert np.max(np.abs(out - simulate_spatial_degrade(z, psf))) < 1e-10


def test_nets_constant_input(rng):
    spe = SpeDnet(partition_supports(8, 2), 8)
    spe.raw.data[...] = rng.normal(size=spe.raw.shape)
    spa = SpaDnet(3)
    spa.raw.data[...] = rng.normal(size=(3, 3))
    np.testing.assert_allclose(spe(Tensor(np.full((3, 3, 8), 0.6))).data, 0.6, rtol=0, atol=1e-14)
    np.testing.assert_allclose(spa(Tensor(np.full((6, 6, 2), 0.6))).data, 0.6, rtol=0, atol=1e-14)


def test_fresh_nets_are_uniform():
    spe = SpeDnet(partition_supports(9, 3), 9)
    np.testing.assert_allclose(spe.effective_weights()[spe.mask], 1.0, rtol=1e-15)
    np.testing.assert_allclose(SpaDnet(4).kernel(), 1 / 16, rtol=1e-15)


def test_spednet_raw_gradient(rng):
    mask = SpeDnet(partition_supports(6, 2), 6).mask
    y = rng.uniform(size=(3, 2, 6))
    for _ in range(20):
        raw = rng.normal(size=mask.shape)
        assert gradient_check(lambda r: spednet_forward(Tensor(y), r, mask), [raw], rng) < 1e-6


def test_spadnet_raw_gradient(rng):
    z = rng.uniform(size=(6, 6, 2))
    for _ in range(20):
        raw = rng.normal(size=(3, 3))
        assert gradient_check(lambda r: spadnet_forward(Tensor(z), r), [raw], rng) < 1e-6


def test_frozen_forward_records_no_parameter_grad(rng):
    spe = SpeDnet(partition_supports(6, 2), 6)
    y = Tensor(rng.uniform(size=(2, 2, 6)), requires_grad=True)
    spe(y, frozen=True).sum().backward()
    assert spe.raw.grad is None and y.grad is not None


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_spednet_convex_bounds(seed):
    rng = np.random.default_rng(seed)
    supports = partition_supports(9, 3)
    spe = SpeDnet(supports, 9)
    spe.raw.data[...] = rng.normal(scale=3.0, size=spe.raw.shape)
    y = rng.uniform(-1, 1, (3, 3, 9))
    out = spe(Tensor(y)).data
    for j, s in enumerate(supports):
        assert np.all(out[..., j] >= y[..., s].min(axis=-1) - 1e-12)
        assert np.all(out[..., j] <= y[..., s].max(axis=-1) + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_spadnet_convex_bounds(seed):
    rng = np.random.default_rng(seed)
    spa = SpaDnet(3)
    spa.raw.data[...] = rng.normal(scale=3.0, size=(3, 3))
    z = rng.uniform(-1, 1, (6, 9, 2))
    out = spa(Tensor(z)).data
    blocks = z.reshape(2, 3, 3, 3, 2)
    assert np.all(out >= blocks.min(axis=(1, 3)) - 1e-12)
    assert np.all(out <= blocks.max(axis=(1, 3)) + 1e-12)


def test_spectral_weight_scale_invariance(rng):
    srf = random_srf(rng, 12, 3)
    spe = SpeDnet.from_srf(srf)
    y = Tensor(rng.uniform(size=(4, 4, 12)))
    before = spe(y).data
    spe.set_weights(5.0 * srf.weight_matrix())
    assert np.max(np.abs(spe(y).data - before)) < 1e-12
    np.testing.assert_allclose(spe.response_matrix(), srf.response_matrix(), rtol=0, atol=1e-12)
