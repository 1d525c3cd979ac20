import numpy as np
import pytest

from diffusion import estimate_z0, forward_diffuse, make_schedule, schedule_from_arrays
from errors import ConfigurationError, ShapeError


def test_linear_schedule_alpha_bar_at_midpoint():
    schedule = make_schedule(50)
    expected = np.prod(1.0 - np.linspace(1e-4, 0.02, 50)[:25])
    assert schedule.abar(25) == pytest.approx(expected, rel=1e-12)
    assert schedule.abar(25) == pytest.approx(0.88271, abs=1e-4)


def test_schedule_is_read_only_and_decreasing():
    schedule = make_schedule(50)
    assert np.all(np.diff(schedule.alpha_bar) < 0)
    with pytest.raises(ValueError):
        schedule.alpha_bar[0] = 1.0


def test_cosine_schedule_is_valid():
    schedule = make_schedule(50, "cosine")
    assert np.all((schedule.beta > 0) & (schedule.beta <= 0.999))
    assert np.all(np.diff(schedule.alpha_bar) < 0)


def test_schedule_errors():
    with pytest.raises(ConfigurationError):
        make_schedule(0)
    with pytest.raises(ConfigurationError):
        make_schedule(50, "quadratic")
    with pytest.raises(ConfigurationError):
        make_schedule(50).abar(0)
    with pytest.raises(ConfigurationError):
        make_schedule(50).abar(51)


def test_scalar_inversion_example():
    schedule = schedule_from_arrays([0.25], [0.75])
    z0_hat = estimate_z0(np.array(1.25), np.array(0.1), 1, schedule)
    assert float(z0_hat) == pytest.approx((1.25 - 0.5 * 0.1) / np.sqrt(0.75), rel=1e-12)
    assert float(z0_hat) == pytest.approx(1.385641, abs=1e-6)


def test_forward_then_estimate_recovers_z0_for_every_timestep(rng):
    schedule = make_schedule(50)
    z0 = rng.normal(size=(2, 8, 3))
    for t in range(1, 51):
        eps = rng.normal(size=z0.shape)
        z_t = forward_diffuse(z0, t, eps, schedule)
        assert np.max(np.abs(estimate_z0(z_t, eps, t, schedule) - z0)) < 1e-10


def test_per_sample_timesteps(rng):
    schedule = make_schedule(50)
    z0 = rng.normal(size=(3, 2, 8, 2))
    eps = rng.normal(size=z0.shape)
    t = np.array([1, 25, 50])
    z_t = forward_diffuse(z0, t, eps, schedule)
    for i, ti in enumerate(t):
        np.testing.assert_allclose(z_t[i], forward_diffuse(z0[i], int(ti), eps[i], schedule), rtol=1e-14)
    np.testing.assert_allclose(estimate_z0(z_t, eps, t, schedule), z0, atol=1e-10)


def test_noise_shape_must_match(rng):
    with pytest.raises(ShapeError):
        forward_diffuse(rng.normal(size=(2, 8, 3)), 5, rng.normal(size=(2, 8, 2)), make_schedule(50))
