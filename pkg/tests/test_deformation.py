import math

import numpy as np
import pytest

from pyslide.deformation import (
    CutoffProfile,
    Deformation,
    PiecewiseDeformation,
    apply,
    apply_piecewise,
    compose,
    cutoff_derivative,
    cutoff_value,
    ell,
    exp_iter,
    lattice,
    lipschitz_norm,
    load_deformation,
    pi,
    save_deformation,
    sigma,
    slide_field,
    theta,
)
from pyslide.errors import DeformationError, DomainError, HullError
from pyslide.experiments import abs_pieces
from pyslide.field import Grid, ScalarField, from_function, radial_plateau, sample_points


def test_iterated_logarithms():
    assert ell(1, math.e) == pytest.approx(1.0)
    assert ell(2, math.exp(math.e)) == pytest.approx(1.0)
    assert exp_iter(2, 0.0) == pytest.approx(math.e)
    assert pi(-1, 7.0) == 1.0
    assert pi(1, math.e ** 2) == pytest.approx(2.0 * math.e ** 2)
    assert sigma(0, 4.0) == pytest.approx(1.0 / 16.0)
    for R in (2.0, 10.0, 1e6):
        assert theta(0, R) == pytest.approx(math.sqrt(R))


@pytest.mark.parametrize("k", [0, 1, 2])
def test_theta_halves_the_next_logarithm(k):
    R = 1e6
    assert abs(ell(k + 1, theta(k, R)) - ell(k + 1, R) / 2.0) <= 1e-12 * max(1.0, ell(k + 1, R))


def test_iterated_logarithm_domain():
    with pytest.raises(DomainError):
        ell(2, 0.5)
    with pytest.raises(DomainError):
        ell(-1, 2.0)


def test_cutoff_values():
    c = CutoffProfile(math.e ** 2)
    assert cutoff_value(c, math.exp(1.5)) == pytest.approx(0.5)
    assert cutoff_value(c, c.inner_radius) == 1.0
    assert cutoff_value(c, 0.0) == 1.0
    assert cutoff_value(c, c.R) == 0.0
    assert cutoff_value(c, 2.0 * c.R) == 0.0
    deep = CutoffProfile(math.exp(math.e ** 2), k=1)
    assert deep.log_scale == pytest.approx(2.0)
    assert cutoff_value(deep, deep.inner_radius) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        cutoff_value(c, -1.0)


def test_cutoff_derivative_on_the_ramp():
    c = CutoffProfile(100.0)
    s = np.array([12.0, 50.0, 99.0])
    np.testing.assert_allclose(cutoff_derivative(c, s), -2.0 / (s * math.log(100.0)))
    assert cutoff_derivative(c, 5.0) == 0.0
    assert cutoff_derivative(c, 150.0) == 0.0
    assert c.slope_bound == pytest.approx(2.0 / (10.0 * math.log(100.0)))


@pytest.mark.parametrize("kwargs", [dict(R=1.0), dict(R=10.0, k=-1), dict(R=16.0, t=1.5), dict(R=2.0, k=1)])
def test_cutoff_profile_validation(kwargs):
    with pytest.raises(DomainError):
        CutoffProfile(**kwargs)


@pytest.fixture
def grid():
    return Grid.box([-2.0, -2.0], [2.0, 2.0], 0.1)


@pytest.fixture
def bump(grid):
    return radial_plateau(grid, 0.5, 1.5) * 0.2


def test_identity_deformation(grid):
    u = from_function(grid, lambda x: np.sin(x[0]) + x[1] ** 2)
    v = apply(u, Deformation.along(2, ScalarField.zeros(grid)))
    np.testing.assert_array_equal(v.values, u.values)


def test_linear_field_is_shifted_by_the_displacement(grid, bump):
    a = np.array([0.7, 1.3])
    u = from_function(grid, lambda x: np.tensordot(a, x, 1))
    v = apply(u, Deformation.along(2, bump, delta=0.5, R=1.6))
    np.testing.assert_allclose(v.values, u.values + a[1] * bump.values, atol=1e-12)


def test_abs_pieces_match_hand_formula():
    grid = Grid.box([-2.0], [2.0], 0.01)
    s = grid.axes()[0]
    u = ScalarField(grid, np.abs(s))
    first, second = abs_pieces(grid, 2.0)
    v1 = apply(u, first)
    np.testing.assert_allclose(v1.values, np.abs(s + first.displacements[0].values), atol=1e-12)
    pd = PiecewiseDeformation((first, second), (s > 0).astype(int))
    v = apply_piecewise(u, pd)
    np.testing.assert_allclose(v.values, 2.0 / 3.0 * np.abs(s) + 2.0 / 3.0, atol=1e-12)


def test_single_piece_equals_apply(grid, bump):
    u = from_function(grid, lambda x: np.tanh(x[1]))
    d = Deformation.along(2, bump)
    pd = PiecewiseDeformation((d,), np.zeros(grid.extent, dtype=int))
    np.testing.assert_array_equal(apply_piecewise(u, pd).values, apply(u, d).values)


def test_validation_errors(grid, bump):
    steep = from_function(grid, lambda x: 1.2 * x[1])
    with pytest.raises(DeformationError, match="exceeds 1"):
        apply(ScalarField.zeros(grid), Deformation.along(2, steep))
    with pytest.raises(DeformationError, match="outside"):
        Deformation.along(2, bump, R=1.0).validate()
    with pytest.raises(DeformationError, match="delta"):
        Deformation.along(2, bump, delta=0.1).validate()
    half = Grid.box([0.0, -2.0], [2.0, 2.0], 0.1, k=2)
    with pytest.raises(DeformationError, match="translation-invariant"):
        Deformation.along(1, ScalarField.zeros(half)).validate()
    with pytest.raises(DeformationError):
        Deformation((1, 1), (bump, bump))


def test_lattice_is_a_piecewise_deformation(grid, bump):
    u = from_function(grid, lambda x: x[1] + 0.1 * np.sin(x[0]))
    pieces = [Deformation.along(2, bump), Deformation.along(2, bump * -1.0)]
    upper, pd = lattice(u, pieces, "max")
    lower, _ = lattice(u, pieces, "min")
    for d in pieces:
        assert np.all(upper.values >= apply(u, d).values)
        assert np.all(lower.values <= apply(u, d).values)
    np.testing.assert_array_equal(apply_piecewise(u, pd).values, upper.values)
    with pytest.raises(DeformationError):
        lattice(u, pieces, "median")


def test_slide_moves_the_center_by_t():
    grid = Grid.box([-5.0, -5.0], [5.0, 5.0], 0.1)
    u = from_function(grid, lambda x: x[1])
    c = CutoffProfile(4.0, 0.3)
    centre = (50, 50)
    assert slide_field(u, c, 1).values[centre] == pytest.approx(-0.3, abs=1e-10)
    assert slide_field(u, c, -1).values[centre] == pytest.approx(0.3, abs=1e-10)
    far = grid.radius() > 4.5
    np.testing.assert_array_equal(slide_field(u, c, 1).values[far], u.values[far])
    assert slide_field(u, c.with_t(0.0), 1) is u
    with pytest.raises(DeformationError):
        slide_field(u, c, 0)


def test_slide_needs_the_ball_in_the_grid():
    grid = Grid.box([-3.0, -3.0], [3.0, 3.0], 0.1)
    u = from_function(grid, lambda x: x[1])
    with pytest.raises(HullError):
        slide_field(u, CutoffProfile(4.0, 0.3), 1)


def test_compose_with_identity(grid, bump):
    d = Deformation.along(2, bump, delta=0.5, R=1.6)
    zero = Deformation.along(2, ScalarField.zeros(grid), delta=0.0, R=1.6)
    composed = compose(d, zero)
    np.testing.assert_allclose(composed.displacements[0].values, bump.values, atol=1e-12)
    assert composed.delta == pytest.approx(0.5)
    other = compose(zero, d)
    np.testing.assert_array_equal(other.displacements[0].values, bump.values)


def test_deformation_files(tmp_path, grid, bump):
    d = Deformation((1, 2), (bump, bump * 0.5), delta=0.5, R=1.6)
    manifest = save_deformation(d, tmp_path / "psi")
    assert manifest.read_text().startswith("directions=1,2")
    loaded = load_deformation(manifest)
    assert loaded.directions == (1, 2)
    assert loaded.delta == 0.5 and loaded.R == 1.6
    np.testing.assert_array_equal(loaded.displacements[1].values, d.displacements[1].values)


def test_lipschitz_norm(grid):
    psi = from_function(grid, lambda x: 0.25 * x[0])
    assert lipschitz_norm(psi) == pytest.approx(0.5)


def test_compose_stays_within_three_delta(grid, bump):
    delta = lipschitz_norm(bump)
    d = Deformation.along(2, bump, delta=delta)
    composed = compose(d, d)
    assert lipschitz_norm(composed.displacements[0]) <= 3.0 * delta + 1e-9
    assert composed.delta <= 3.0 * delta


def test_apply_then_inverse_displacement(grid, bump):
    u = from_function(grid, lambda x: np.tanh(x[1]) + 0.1 * np.sin(x[0]))
    points = grid.mesh().reshape(2, -1).T
    inverse = np.zeros(len(points))
    for _ in range(40):
        moved = points.copy()
        moved[:, 1] += inverse
        inverse = -sample_points(bump, moved)
    v = apply(u, Deformation.along(2, bump))
    back = apply(v, Deformation.along(2, ScalarField(grid, inverse.reshape(grid.extent))))
    assert np.max(np.abs(v.values - u.values)) > 0.1
    np.testing.assert_allclose(back.values, u.values, atol=5e-3)


def test_slide_up_then_down_is_nearly_the_identity():
    grid = Grid.box([-5.0, -5.0], [5.0, 5.0], 0.1)
    u = from_function(grid, lambda x: x[1] + 0.2 * x[0])
    c = CutoffProfile(4.0, 0.3)
    back = slide_field(slide_field(u, c, 1), c, -1)
    assert np.max(np.abs(back.values - u.values)) <= c.t ** 2 * c.slope_bound + 1e-2


def test_piecewise_assembly_must_be_continuous():
    fine = Grid.box([-2.0, -2.0], [2.0, 2.0], 0.05)
    u = from_function(fine, lambda x: x[1])
    lift = radial_plateau(fine, 0.5, 1.5) * 0.3
    pieces = (Deformation.along(2, lift), Deformation.along(2, lift * -1.0))
    selector = (fine.mesh()[0] > 0).astype(int)
    with pytest.raises(DeformationError, match="jumps"):
        apply_piecewise(u, PiecewiseDeformation(pieces, selector))
