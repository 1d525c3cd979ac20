import numpy as np
import pytest
from scipy import fft

import tensor_core as tc
from errors import ConfigurationError, ShapeError
from spectral import (apply_spectral_residual, band_energy, build_gain, dct_matrix, dct_temporal, idct_temporal,
                      modulate_spectrum, resolve_cutoff, spectral_multipliers)


@pytest.mark.parametrize("length", [8, 16, 32])
def test_dct_matrix_is_orthonormal(length):
    d = dct_matrix(length)
    assert np.max(np.abs(d.T @ d - np.eye(length))) < 1e-10


def test_dct_matrix_is_read_only():
    with pytest.raises(ValueError):
        dct_matrix(8)[0, 0] = 1.0


def test_dct_of_short_ramp():
    out = dct_temporal(np.array([1.0, 2.0, 3.0, 4.0]), axis=0)
    np.testing.assert_allclose(out, [5.0, -2.2304425, 0.0, -0.1585133], atol=1e-7)


@pytest.mark.parametrize("length", [8, 16, 32])
def test_dct_matches_scipy_and_round_trips(length, rng):
    for _ in range(200 // 3):
        z = rng.normal(size=(3, length, 4))
        spectrum = dct_temporal(z)
        np.testing.assert_allclose(spectrum, fft.dct(z, type=2, norm="ortho", axis=-2), atol=1e-10)
        assert np.max(np.abs(idct_temporal(spectrum) - z)) < 1e-10
        assert abs(np.sum(spectrum ** 2) - np.sum(z ** 2)) < 1e-9


def test_resolve_cutoff():
    assert resolve_cutoff(16, 4) == 4
    assert resolve_cutoff(8, 16) == 1
    with pytest.raises(ConfigurationError):
        resolve_cutoff(16, 0)


def test_build_gain_validates_inputs():
    gain = build_gain(16, 4, 0.7, alpha=1.5)
    np.testing.assert_array_equal(gain.gain_values[:4], 0.0)
    np.testing.assert_array_equal(gain.gain_values[4:], 0.7)
    with pytest.raises(ConfigurationError):
        build_gain(16, 0, 0.5)
    with pytest.raises(ConfigurationError):
        build_gain(16, 17, 0.5)
    with pytest.raises(ConfigurationError):
        build_gain(16, 4, 1.2)


def test_residual_is_identity_when_gain_vanishes(rng):
    z = rng.normal(size=(2, 16, 3))
    assert apply_spectral_residual(z, build_gain(16, 4, 0.0, alpha=1.0)) is z
    assert apply_spectral_residual(z, build_gain(16, 4, 0.9, alpha=0.0)) is z


def test_residual_scales_high_band_energy_exactly(rng):
    z = rng.normal(size=(2, 16, 3))
    alpha, s_hat, cutoff = 1.5, 0.6, 4
    out = apply_spectral_residual(z, build_gain(16, cutoff, s_hat, alpha))
    before, after = band_energy(z, cutoff), band_energy(out, cutoff)
    assert after.low[0] == pytest.approx(before.low[0], rel=1e-12)
    assert after.high[0] == pytest.approx((1 + alpha * s_hat) ** 2 * before.high[0], rel=1e-9)


def test_residual_is_linear_and_self_adjoint(rng):
    gain = build_gain(8, 2, 0.8, alpha=1.0)
    x, y = rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 2))
    lhs = apply_spectral_residual(2.0 * x - 3.0 * y, gain)
    rhs = 2.0 * apply_spectral_residual(x, gain) - 3.0 * apply_spectral_residual(y, gain)
    assert np.max(np.abs(lhs - rhs)) < 1e-9
    # <S x, y> == <x, S y>
    assert abs(np.sum(apply_spectral_residual(x, gain) * y) - np.sum(x * apply_spectral_residual(y, gain))) < 1e-9

    params = tc.ParameterSet([("x", x)])
    _, grads = tc.value_and_grad(lambda p: tc.sum(apply_spectral_residual(p["x"], gain) * y), params)
    np.testing.assert_allclose(grads["x"], apply_spectral_residual(y, gain), atol=1e-9)


def test_residual_rejects_length_mismatch(rng):
    with pytest.raises(ShapeError):
        apply_spectral_residual(rng.normal(size=(2, 8, 3)), build_gain(16, 4, 0.5))


def test_per_sample_multipliers_match_single_gains(rng):
    s = np.array([0.0, 0.5, 1.0])
    multipliers = spectral_multipliers(8, 2, s, alpha=1.0)
    assert multipliers.shape == (3, 8)
    z = rng.normal(size=(3, 2, 8, 2))
    batched = modulate_spectrum(z, multipliers[:, None, :, None])
    for i, score in enumerate(s):
        np.testing.assert_allclose(batched[i], apply_spectral_residual(z[i], build_gain(8, 2, score)), atol=1e-12)


def test_band_energy_report_shapes(rng):
    z = rng.normal(size=(5, 2, 16, 3))
    report = band_energy(z, 4)
    assert len(report.low) == len(report.high) == 5
    assert len(report.per_k) == len(report.freq_axis) == 16
    np.testing.assert_allclose(report.total, np.sum(z ** 2, axis=(1, 2, 3)), rtol=1e-10)
    assert report.to_dict()["cutoff"] == 4
