import math

import numpy as np
import pytest

from pyslide.errors import ConvergenceError, ParameterError
from pyslide.field import Grid, ScalarField, from_function, radial_plateau
from pyslide.integrand import DoubleWell, catalog
from pyslide.solver import (
    FlowConfig,
    criticality_residual,
    gradient_flow,
    heteroclinic_1d,
    variational_residual,
)

DIRICHLET = catalog("dirichlet")


@pytest.fixture
def unit_square():
    return Grid.box([-1.0, -1.0], [1.0, 1.0], 0.1)


def test_flow_relaxes_to_the_harmonic_field(unit_square):
    u0 = radial_plateau(unit_square, 0.3, 0.9)
    result = gradient_flow(DIRICHLET, u0, FlowConfig(tol=1e-6))
    assert result.converged
    assert result.residual <= 1e-6
    assert result.field.max_abs() < 1e-5
    assert np.all(np.diff(result.energies) <= 1e-14)
    assert len(result.residuals) == result.steps + 1


def test_linear_fields_are_critical(unit_square):
    u = from_function(unit_square, lambda x: 0.4 * x[0] - 1.1 * x[1])
    assert variational_residual(u, DIRICHLET) == pytest.approx(0.0, abs=1e-10)
    assert criticality_residual(u, DIRICHLET) == pytest.approx(0.0, abs=1e-10)


def test_constant_field_is_converged_at_once(unit_square):
    u = ScalarField(unit_square, np.full(unit_square.extent, 0.5))
    result = gradient_flow(DIRICHLET, u, FlowConfig(boundary="periodic"))
    assert result.converged
    assert result.steps == 0


def test_zero_flux_keeps_the_mean():
    grid = Grid.box([-1.0], [1.0], 0.05)
    u0 = from_function(grid, lambda x: np.cos(math.pi * x[0]))
    result = gradient_flow(DIRICHLET, u0, FlowConfig(boundary="zero-flux", tol=1e-7))
    assert result.converged
    assert np.ptp(result.field.values) < 1e-5


def test_tanh_profile_is_nearly_critical():
    grid = Grid.box([-5.0], [5.0], 0.01)
    u = from_function(grid, lambda x: np.tanh(x[0] / math.sqrt(2.0)))
    assert criticality_residual(u, catalog("allen_cahn")) < 1e-3


@pytest.mark.parametrize("kwargs", [
    dict(boundary=("fixed", "sticky")),
    dict(dt=-1.0),
    dict(max_steps=-1),
    dict(tol=0.0),
])
def test_invalid_flow_settings(kwargs):
    with pytest.raises(ParameterError):
        FlowConfig(**kwargs)


def test_flow_checks_settings_against_the_grid(unit_square):
    u0 = ScalarField.zeros(unit_square)
    with pytest.raises(ParameterError, match="stability"):
        gradient_flow(DIRICHLET, u0, FlowConfig(dt=1.0))
    with pytest.raises(ParameterError):
        gradient_flow(DIRICHLET, u0, FlowConfig(boundary=("fixed", "fixed", "fixed")))


def test_unstable_functional_diverges():
    grid = Grid.box([-10.0], [10.0], 0.1)
    u0 = from_function(grid, lambda x: np.sin(math.pi * (x[0] + 10.0) / 20.0))
    with pytest.raises(ConvergenceError, match="diverged"):
        gradient_flow(catalog("oned_example"), u0, FlowConfig(divergence_window=1000))


def test_history_file(tmp_path, unit_square):
    result = gradient_flow(DIRICHLET, radial_plateau(unit_square, 0.3, 0.9), FlowConfig(max_steps=5))
    assert not result.converged
    path = result.save_history(tmp_path / "history.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "step,residual,energy"
    assert len(lines) == 7


def test_heteroclinic_matches_the_tanh_profile():
    well = DoubleWell()
    u = heteroclinic_1d(well, 8.0, 0.01)
    s = u.grid.axes()[0]
    assert u.grid.extent == (1601,)
    assert np.all(np.diff(u.values) > 0)
    assert np.max(np.abs(u.values - well.profile(s))) < 5e-3


def test_heteroclinic_rejects_bad_sizes():
    with pytest.raises(ParameterError):
        heteroclinic_1d(DoubleWell(), 0.0, 0.01)


@pytest.fixture
def rough_start(rng):
    grid = Grid.box([0.0, 0.0], [1.9, 2.3], 0.1)
    return ScalarField(grid, rng.uniform(-0.5, 0.5, grid.extent))


def test_allen_cahn_flow_never_raises_the_energy(rough_start):
    result = gradient_flow(catalog("allen_cahn"), rough_start, FlowConfig(boundary="periodic", max_steps=300))
    assert np.all(np.diff(result.energies) <= 1e-10)


def test_periodic_flow_commutes_with_translation(rough_start):
    cfg = FlowConfig(boundary="periodic", max_steps=200, tol=1e-14)
    f = catalog("allen_cahn")
    flowed = gradient_flow(f, rough_start, cfg).field
    shifted = rough_start.with_values(np.roll(rough_start.values, 5, axis=1))
    np.testing.assert_allclose(gradient_flow(f, shifted, cfg).field.values, np.roll(flowed.values, 5, axis=1),
                               rtol=0.0, atol=1e-10)


def test_heteroclinic_is_odd():
    u = heteroclinic_1d(DoubleWell(), 4.0, 0.02)
    np.testing.assert_allclose(u.values, -u.values[::-1], rtol=0.0, atol=1e-8)
