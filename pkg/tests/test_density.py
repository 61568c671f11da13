import numpy as np
import pytest

from censimpute.density import DensityGrid, kde, silverman_bandwidth, uniform_grid


def test_single_value_kernel_peak():
    h = 0.2
    grid = uniform_grid(0.0, 2.0, 0.5)
    density = kde(np.array([1.0]), grid, h)
    peak = density.ordinates[np.argmin(np.abs(grid - 1.0))]
    assert abs(peak - 1.0 / (h * np.sqrt(2 * np.pi))) < 1e-12


def test_density_integrates_to_one():
    rng = np.random.default_rng(0)
    values = rng.normal(size=2000)
    h = silverman_bandwidth(values)
    grid = uniform_grid(values.min() - 6 * h, values.max() + 6 * h, 0.01)
    density = kde(values, grid, h)
    integral = np.trapezoid(density.ordinates, grid)
    assert abs(integral - 1.0) < 1e-3


def test_multiplicity_invariance():
    values = np.array([0.0, 0.5, 1.5])
    grid = uniform_grid(-1.0, 3.0, 0.1)
    once = kde(values, grid, 0.3).ordinates
    twice = kde(np.tile(values, 2), grid, 0.3).ordinates
    assert np.allclose(once, twice, atol=1e-14)


def test_bad_bandwidth_raises():
    with pytest.raises(ValueError):
        kde(np.array([1.0]), uniform_grid(0, 1, 0.1), 0.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        DensityGrid(abscissae=np.array([0.0, 0.1, 0.15]), ordinates=np.zeros(3))
    with pytest.raises(ValueError):
        DensityGrid(abscissae=np.array([0.0, 0.1]), ordinates=np.array([1.0, -0.5]))


def test_grid_step_property():
    g = DensityGrid(abscissae=uniform_grid(1.0, 2.0, 0.25), ordinates=np.ones(5))
    assert g.step == 0.25
