import math

import numpy as np
import pytest

from pyslide.deformation import CutoffProfile, Deformation, apply
from pyslide.energy import (
    QuadratureRule,
    boundary_energy,
    check_growth,
    deformation_delta,
    deformed_energy,
    energy,
    energy_difference,
    energy_identity_check,
    first_variation_L,
    growth_profile,
    pullback_bound,
    second_difference,
    second_variation_Q,
)
from pyslide.errors import FieldError, HullError, IntegrandError, ParameterError
from pyslide.field import Grid, ScalarField, from_function, radial_plateau
from pyslide.integrand import Integrand, boundary_catalog, catalog

DIRICHLET = catalog("dirichlet")


@pytest.fixture
def linear(square_grid):
    a = np.array([0.3, -1.7])
    return a, from_function(square_grid, lambda x: np.tensordot(a, x, 1))


@pytest.fixture
def bump(square_grid):
    return radial_plateau(square_grid, 0.5, 1.5) * 0.2


def test_abs_energy_is_exact(line_grid):
    u = ScalarField(line_grid, np.abs(line_grid.axes()[0]))
    assert energy(u, catalog("abs_example"), R=2.0) == pytest.approx(4.0, rel=1e-12)


@pytest.mark.parametrize("scheme", ["midpoint", "trapezoid"])
def test_linear_dirichlet_box_energy(linear, scheme):
    a, u = linear
    assert energy(u, DIRICHLET, q=QuadratureRule(scheme)) == pytest.approx(0.5 * a @ a * 36.0, rel=1e-10)


def test_unknown_scheme():
    with pytest.raises(ParameterError):
        QuadratureRule("simpson")


def test_energy_needs_the_ball(interface):
    with pytest.raises(HullError):
        energy(interface, DIRICHLET, R=10.0)


def test_integrand_dimension_is_checked(line_grid):
    planar = Integrand("planar", value=lambda p, z, x: np.sum(p ** 2, axis=0), n=2)
    with pytest.raises(IntegrandError, match="n=2"):
        energy(ScalarField.zeros(line_grid), planar)


def test_energy_difference_cancels_untouched_cells(interface, bump):
    w = interface + bump
    diff = energy_difference(w, interface, DIRICHLET, R=2.5)
    direct = energy(w, DIRICHLET, R=2.5) - energy(interface, DIRICHLET, R=2.5)
    assert diff == pytest.approx(direct, abs=1e-10)
    assert energy_difference(interface, interface, DIRICHLET) == 0.0


def test_growth_of_a_planar_field(linear):
    a, u = linear
    radii = [1.0, 1.5, 2.0, 2.5, 2.9]
    rep = growth_profile(u, DIRICHLET, radii)
    assert rep.exponent == pytest.approx(2.0, abs=0.1)
    assert rep.growth[-1] == pytest.approx(a @ a * math.pi * 2.9 ** 2, rel=0.05)
    assert rep.energies[-1] == pytest.approx(0.5 * rep.growth[-1], rel=1e-12)
    assert rep.rows().shape == (5, 4)


def test_three_dimensional_linear_field_fails_growth():
    grid = Grid.box([-3.0] * 3, [3.0] * 3, 0.2)
    g = np.array([0.3, -0.2, 1.0])
    u = from_function(grid, lambda x: np.tensordot(g, x, 1))
    rep = growth_profile(u, DIRICHLET, [1.0, 1.5, 2.0, 2.5, 2.8])
    assert rep.exponent == pytest.approx(3.0, abs=0.15)
    assert not check_growth(rep).passed


def test_growth_report_csv(tmp_path, linear):
    _, u = linear
    path = growth_profile(u, DIRICHLET, [1.0, 2.0]).to_csv(tmp_path / "growth.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "r,a_r,E_r,ratio"
    assert len(lines) == 3


@pytest.mark.parametrize("radii", [[], [2.0, 1.0], [-1.0, 1.0]])
def test_invalid_radii(linear, radii):
    _, u = linear
    with pytest.raises(ParameterError):
        growth_profile(u, DIRICHLET, radii)


def test_second_difference_between_the_bounds():
    grid = Grid.box([-4.5, -4.5], [4.5, 4.5], 0.1)
    u = from_function(grid, lambda x: x[1])
    c = CutoffProfile(4.0, 0.3)
    diff = second_difference(u, DIRICHLET, c)
    bound = pullback_bound(u, DIRICHLET, c)
    assert bound > 0
    assert bound * (1 - 1e-12) <= diff <= bound / (1.0 - (c.t * c.slope_bound) ** 2) * (1 + 1e-12)
    assert second_difference(u, DIRICHLET, c.with_t(0.0)) == 0.0


def test_second_variation_of_dirichlet(interface, bump):
    Q = second_variation_Q(bump, interface, DIRICHLET, 2.0)
    assert Q == pytest.approx(2.0 * energy(bump, DIRICHLET, R=2.0), rel=1e-12)


def test_first_variation_vanishes_at_linear_fields(linear, bump):
    _, u = linear
    assert first_variation_L(bump, u, DIRICHLET, 2.0) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(FieldError):
        first_variation_L(bump, u, DIRICHLET, 1.0)


def test_lattice_identity_on_a_grid_aligned_kink(square_grid):
    a = from_function(square_grid, lambda x: x[1])
    assert energy_identity_check(a, a * -1.0, DIRICHLET, 2.5) == pytest.approx(0.0, abs=1e-10)


def test_chain_rule_matches_the_nodal_deformation(linear, bump):
    _, u = linear
    d = Deformation.along(2, bump)
    moved = apply(u, d)
    assert deformed_energy(u, d, DIRICHLET, R=2.5) == pytest.approx(energy(moved, DIRICHLET, R=2.5), rel=1e-10)
    expected = energy(moved, DIRICHLET, R=2.5) - energy(u, DIRICHLET, R=2.5)
    assert deformation_delta(u, d, DIRICHLET, R=2.5) == pytest.approx(expected, abs=1e-10)


def test_boundary_energy_on_the_trace():
    grid = Grid.box([0.0, -3.0], [2.0, 3.0], 0.1, k=2)
    u = ScalarField(grid, np.ones(grid.extent))
    assert boundary_energy(u, boundary_catalog("quadratic", {"c": 2.0}), 2.0) == pytest.approx(8.0)


def test_energy_is_additive_over_shells(interface, bump):
    f = catalog("allen_cahn")
    w = interface + bump
    shell_u = energy(interface, f, R=2.9) - energy(interface, f, R=2.0)
    shell_w = energy(w, f, R=2.9) - energy(w, f, R=2.0)
    assert shell_w == pytest.approx(shell_u, abs=1e-10)
    inner = energy(w, f, R=2.0) - energy(interface, f, R=2.0)
    assert energy(w, f, R=2.9) - energy(interface, f, R=2.9) == pytest.approx(inner, abs=1e-10)


def test_second_difference_is_even_in_t():
    grid = Grid.box([-4.5, -4.5], [4.5, 4.5], 0.1)
    u = from_function(grid, lambda x: np.tanh(x[1] / math.sqrt(2.0)))
    c = CutoffProfile(4.0, 0.3)
    f = catalog("allen_cahn")
    forward = second_difference(u, f, c)
    backward = second_difference(u, f, c.with_t(-0.3))
    assert abs(forward - backward) <= 1e-12 * max(1.0, abs(forward))


def test_first_variation_is_linear_and_second_is_quadratic(interface, bump):
    f = catalog("allen_cahn")
    wavy = bump.with_values(bump.values * np.sin(interface.grid.mesh()[0]))
    combined = bump * 2.0 + wavy * -3.0
    expected = 2.0 * first_variation_L(bump, interface, f, 2.0) - 3.0 * first_variation_L(wavy, interface, f, 2.0)
    assert first_variation_L(combined, interface, f, 2.0) == pytest.approx(expected, rel=1e-10, abs=1e-12)
    Q = second_variation_Q(wavy, interface, f, 2.0)
    assert second_variation_Q(wavy * 3.0, interface, f, 2.0) == pytest.approx(9.0 * Q, rel=1e-10, abs=1e-12)


def test_unit_boundary_integrand_measures_the_trace():
    one = boundary_catalog("constant")
    line = Grid.box([0.0, -3.0], [2.0, 3.0], 0.1, k=2)
    assert boundary_energy(ScalarField.zeros(line), one, 2.0) == pytest.approx(4.0)
    slab = Grid.box([0.0, -2.5, -2.5], [1.0, 2.5, 2.5], 0.1, k=2)
    assert boundary_energy(ScalarField.zeros(slab), one, 2.0) == pytest.approx(4.0 * math.pi, rel=0.03)
