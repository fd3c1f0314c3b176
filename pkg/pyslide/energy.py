"""Quadrature of ``E_R(u) = ∫_{Ω∩B_R} F(∇u, u, x) dx`` and the quantities built on it.

The default ``midpoint`` rule splits every grid cell into its ``n!`` Kuhn
simplices. On each simplex the gradient of the piecewise linear interpolant
is exact, the value is the vertex mean and ``x`` is the cell center; a cell
belongs to ``B_R`` when its center does. Sums run over cell tiles of fixed
shape and are combined with :func:`pyslide.parallel.pairwise_sum`, so results
do not depend on the worker count.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .deformation import CutoffProfile, Deformation, cutoff_derivative, pi
from .errors import (
    DeformationError,
    FieldError,
    GridError,
    IntegrandError,
    ParameterError,
    SingularEvaluationError,
)
from .field import Grid, ScalarField, gradient, interpolant_gradient, sample_points
from .integrand import BoundaryIntegrand, Integrand, matrix_norm
from .parallel import map_tiles, pairwise_sum, rows_per_tile

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SCHEMES = ("midpoint", "trapezoid")

# Relative slack of the non-increasing ratio test in check_growth.
GROWTH_SLACK = 0.05

# Relative size below which a test function counts as vanishing.
SUPPORT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature scheme, ball membership rule and singular-axis handling."""

    scheme: str = "midpoint"
    ball: str = "cell-center"
    singular_offset: bool = True

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown quadrature scheme {self.scheme!r}; use one of {SCHEMES}")
        if self.ball != "cell-center":
            raise ParameterError(f"unsupported ball membership rule {self.ball!r}")


DEFAULT_RULE = QuadratureRule()


@dataclass
class CellSample:
    """Integrand arguments at the quadrature points of one tile, flattened to ``m`` points."""

    grad: np.ndarray
    value: np.ndarray
    x: np.ndarray
    weight: np.ndarray
    r2: np.ndarray

    @property
    def size(self) -> int:
        return int(self.value.size)


@lru_cache(maxsize=None)
def kuhn_paths(n: int) -> Tuple[Tuple[Tuple[Tuple[int, ...], ...], Tuple[int, ...]], ...]:
    """Vertex corners and axis order of the ``n!`` simplices of the unit cube."""

    paths = []
    for order in itertools.permutations(range(n)):
        corner = [0] * n
        vertices = [tuple(corner)]
        for axis in order:
            corner[axis] = 1
            vertices.append(tuple(corner))
        paths.append((tuple(vertices), tuple(order)))
    return tuple(paths)


def cells_shape(grid: Grid, lo: int, hi: int) -> Tuple[int, ...]:
    return (hi - lo,) + tuple(m - 1 for m in grid.extent[1:])


def corner_view(block: np.ndarray, corner: Tuple[int, ...], cells: Tuple[int, ...]) -> np.ndarray:
    return block[tuple(slice(c, c + m) for c, m in zip(corner, cells))]


def cell_centers(grid: Grid, lo: int, hi: int) -> np.ndarray:
    axes = [grid.origin[0] + grid.spacing[0] * (np.arange(lo, hi) + 0.5)]
    for axis in range(1, grid.n):
        axes.append(grid.origin[axis] + grid.spacing[axis] * (np.arange(grid.extent[axis] - 1) + 0.5))
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def simplex_arrays(grid: Grid, values: np.ndarray, lo: int, hi: int) -> Tuple[np.ndarray, np.ndarray]:
    """Simplex gradients ``(P, n, *cells)`` and vertex means ``(P, *cells)`` for cell rows ``lo:hi``."""

    n = grid.n
    cells = cells_shape(grid, lo, hi)
    block = values[lo:hi + 1]
    grads, means = [], []
    for vertices, order in kuhn_paths(n):
        corners = [corner_view(block, v, cells) for v in vertices]
        g = np.empty((n,) + cells)
        for step, axis in enumerate(order):
            g[axis] = (corners[step + 1] - corners[step]) / grid.spacing[axis]
        total = corners[0]
        for c in corners[1:]:
            total = total + c
        grads.append(g)
        means.append(total / (n + 1))
    return np.stack(grads), np.stack(means)


def _simplex_centroids(grid: Grid, lo: int, hi: int) -> np.ndarray:
    """Centroid coordinates of every simplex, shape ``(P, n, *cells)``."""

    n = grid.n
    lower = cell_centers(grid, lo, hi) - 0.5 * np.asarray(grid.spacing).reshape((n,) + (1,) * n)
    out = []
    for vertices, _ in kuhn_paths(n):
        offset = np.mean(np.asarray(vertices, dtype=float), axis=0) * np.asarray(grid.spacing)
        out.append(lower + offset.reshape((n,) + (1,) * n))
    return np.stack(out)


def _ball_mask(r2: np.ndarray, R: Optional[float]) -> np.ndarray:
    if R is None:
        return np.ones(r2.shape, dtype=bool)
    return r2 < R * R


def _midpoint_samples(grid: Grid, arrays: Sequence[np.ndarray], lo: int, hi: int,
                      R: Optional[float]) -> List[CellSample]:
    centers = cell_centers(grid, lo, hi)
    r2 = np.sum(centers ** 2, axis=0)
    mask = _ball_mask(r2, R)
    P = len(kuhn_paths(grid.n))
    count = int(mask.sum())
    x = np.broadcast_to(centers[:, mask][:, None, :], (grid.n, P, count)).reshape(grid.n, P * count)
    r2_flat = np.broadcast_to(r2[mask][None, :], (P, count)).reshape(-1)
    weight = np.full(P * count, grid.cell_volume / P)
    samples = []
    for values in arrays:
        grads, means = simplex_arrays(grid, values, lo, hi)
        g = np.moveaxis(grads[:, :, mask], 1, 0).reshape(grid.n, P * count)
        samples.append(CellSample(g, means[:, mask].reshape(-1), x, weight, r2_flat))
    return samples


def _trapezoid_weights(grid: Grid, lo: int, hi: int) -> np.ndarray:
    axes = []
    for axis in range(grid.n):
        w = np.full(grid.extent[axis], grid.spacing[axis])
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(w[lo:hi] if axis == 0 else w)
    total = axes[0]
    for w in axes[1:]:
        total = np.multiply.outer(total, w)
    return total


def _trapezoid_samples(grid: Grid, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                       lo: int, hi: int, R: Optional[float]) -> List[CellSample]:
    nodes = grid.mesh()[:, lo:hi]
    r2 = np.sum(nodes ** 2, axis=0)
    mask = _ball_mask(r2, R)
    weight = _trapezoid_weights(grid, lo, hi)[mask]
    x = nodes[:, mask]
    return [
        CellSample(g[:, lo:hi][:, mask], values[lo:hi][mask], x, weight, r2[mask])
        for values, g in zip(arrays, grads)
    ]


def _check_integrand(f: Integrand, grid: Grid, rule: QuadratureRule) -> None:
    if f.n is not None and f.n != grid.n:
        raise IntegrandError(f"{f.name} is defined for n={f.n}, grid has n={grid.n}")
    if f.singular_weight and rule.scheme == "trapezoid" and rule.singular_offset:
        if grid.origin[0] <= 0:
            raise SingularEvaluationError(
                f"{f.name}: trapezoid nodes touch x_1 <= 0; use Grid.box(..., cell_centered=True)"
            )


def _same_grid(*fields: ScalarField) -> Grid:
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise GridError("fields live on different grids")
    return grid


def _map_samples(fields: Sequence[ScalarField], R: Optional[float], rule: QuadratureRule,
                 fn: Callable[[List[CellSample]], object]) -> list:
    """Apply ``fn`` to the samples of every tile, in tile order."""

    grid = _same_grid(*fields)
    if R is not None:
        grid.require_ball(R)
    arrays = [f.values for f in fields]
    if rule.scheme == "midpoint":
        row = int(np.prod([m - 1 for m in grid.extent[1:]])) * len(kuhn_paths(grid.n))

        def work(lo, hi):
            return fn(_midpoint_samples(grid, arrays, lo, hi, R))

        return map_tiles(work, grid.extent[0] - 1, rows_per_tile(row))
    grads = [gradient(f).components for f in fields]
    row = int(np.prod(grid.extent[1:]))

    def work(lo, hi):
        return fn(_trapezoid_samples(grid, arrays, grads, lo, hi, R))

    return map_tiles(work, grid.extent[0], rows_per_tile(row))


def _integrate(fields: Sequence[ScalarField], R: Optional[float], rule: QuadratureRule,
               density: Callable[..., np.ndarray]) -> float:
    def tile(samples: List[CellSample]) -> float:
        if samples[0].size == 0:
            return 0.0
        return float(np.sum(density(*samples) * samples[0].weight))

    return pairwise_sum(_map_samples(fields, R, rule, tile))


def energy(u: ScalarField, f: Integrand, R: Optional[float] = None,
           q: QuadratureRule = DEFAULT_RULE) -> float:
    """``E_R(u)``; ``R=None`` integrates over the whole grid box."""

    _check_integrand(f, u.grid, q)
    return _integrate([u], R, q, lambda s: f.value(s.grad, s.value, s.x))


def energy_difference(w: ScalarField, u: ScalarField, f: Integrand, R: Optional[float] = None,
                      q: QuadratureRule = DEFAULT_RULE) -> float:
    """``E_R(w) - E_R(u)`` summed cellwise, so untouched cells cancel exactly."""

    _check_integrand(f, u.grid, q)
    return _integrate(
        [w, u], R, q,
        lambda sw, su: f.value(sw.grad, sw.value, sw.x) - f.value(su.grad, su.value, su.x),
    )


def boundary_energy(u: ScalarField, g: BoundaryIntegrand, R: float) -> float:
    """Midpoint quadrature of ``G(u, x)`` over the trace ``{x_1 = 0} ∩ B_R``."""

    grid = u.grid
    if grid.k < 2:
        raise GridError("boundary energy needs a bounded first axis (k >= 2)")
    x0, h0 = grid.origin[0], grid.spacing[0]
    first, second = u.values[0], u.values[1]
    trace = first + (0.0 - x0) * (second - first) / h0
    if grid.n == 1:
        return float(g.value(np.asarray(trace), np.zeros(1)))
    rest = grid.n - 1
    cells = tuple(m - 1 for m in grid.extent[1:])
    total = np.zeros(cells)
    for corner in itertools.product((0, 1), repeat=rest):
        total = total + corner_view(trace, corner, cells)
    value = total / 2 ** rest
    axes = [grid.origin[a] + grid.spacing[a] * (np.arange(grid.extent[a] - 1) + 0.5) for a in range(1, grid.n)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"))
    mask = np.sum(centers ** 2, axis=0) < R * R
    points = np.concatenate([np.zeros((1, int(mask.sum()))), centers[:, mask]])
    area = float(np.prod(grid.spacing[1:]))
    return float(np.sum(g.value(value[mask], points)) * area)


@dataclass
class EnergyReport:
    """Energies and the growth table ``a(r)`` over a list of radii."""

    radii: np.ndarray
    energies: np.ndarray
    growth: np.ndarray
    exponent: float = float("nan")
    constant: float = float("nan")
    second_differences: Optional[np.ndarray] = field(default=None, repr=False)

    def rows(self) -> np.ndarray:
        ratio = self.growth / self.radii ** 2
        return np.column_stack([self.radii, self.growth, self.energies, ratio])

    def to_csv(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, self.rows(), delimiter=",", header="r,a_r,E_r,ratio", comments="", fmt="%.17g")
        return path


def _validate_radii(radii: Sequence[float]) -> np.ndarray:
    arr = np.asarray(list(radii), dtype=float)
    if arr.size == 0:
        raise ParameterError("radii list empty")
    if np.any(arr <= 0) or np.any(np.diff(arr) <= 0):
        raise ParameterError(f"radii must be positive and strictly increasing, got {arr.tolist()}")
    return arr


def _fit_exponent(radii: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    count = max(2, (len(radii) + 1) // 2)
    r, a = radii[-count:], values[-count:]
    if len(r) < 2 or np.any(a <= 0):
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(r), np.log(a), 1)
    return float(slope), float(np.exp(intercept))


def growth_profile(u: ScalarField, f: Integrand, radii: Sequence[float],
                   q: QuadratureRule = DEFAULT_RULE, norm: str = "spectral") -> EnergyReport:
    """``a(r) = ∫_{Ω∩B_r} |F_pp(∇u, u, x)| |∇u|^2`` and ``E_r`` per radius, with a log-log fit."""

    r = _validate_radii(radii)
    _check_integrand(f, u.grid, q)
    outer = float(r[-1])

    def tile(samples):
        s = samples[0]
        if s.size == 0:
            return np.empty((0, 3))
        grad_sq = np.sum(s.grad ** 2, axis=0)
        a = matrix_norm(f.hess_pp(s.grad, s.value, s.x), norm) * grad_sq * s.weight
        e = f.value(s.grad, s.value, s.x) * s.weight
        return np.column_stack([s.r2, a, e])

    table = np.concatenate(_map_samples([u], outer, q, tile), axis=0)
    order = np.argsort(table[:, 0], kind="stable")
    r2 = table[order, 0]
    a_cum = np.concatenate([[0.0], np.cumsum(table[order, 1])])
    e_cum = np.concatenate([[0.0], np.cumsum(table[order, 2])])
    cut = np.searchsorted(r2, r ** 2, side="left")
    growth = a_cum[cut]
    energies = e_cum[cut]
    exponent, constant = _fit_exponent(r, growth)
    logger.info("growth profile: exponent %.4f over radii %s", exponent, r.tolist())
    return EnergyReport(r, energies, growth, exponent, constant)


@dataclass(frozen=True)
class GrowthCheck:
    passed: bool
    constant: float
    ratios: np.ndarray = field(repr=False)


def check_growth(rep: EnergyReport, k: int = 0) -> GrowthCheck:
    """Test ``a(r) <= C r π_k(r)`` by the trend of ``a(r) / (r π_k(r))`` over the upper radii."""

    if rep.radii.size == 0:
        raise ParameterError("growth report is empty")
    ratios = rep.growth / (rep.radii * np.asarray(pi(k, rep.radii)))
    top = ratios[len(ratios) // 2:] if len(ratios) > 1 else ratios
    passed = bool(np.all(top[1:] <= top[:-1] * (1 + GROWTH_SLACK) + 1e-300))
    return GrowthCheck(passed, float(np.max(ratios)), ratios)


def _pullback_terms(s: CellSample, c: CutoffProfile):
    radius = np.sqrt(s.r2)
    slope = np.asarray(cutoff_derivative(c, radius))
    tau = c.t * slope
    nu = s.x / radius
    p_n = s.grad[-1]
    pA = p_n * tau * nu
    trA = tau * nu[-1]
    return pA, trA


def second_difference(u: ScalarField, f: Integrand, c: CutoffProfile,
                      q: QuadratureRule = DEFAULT_RULE) -> float:
    """``E_R(u^+) + E_R(u^-) - 2 E_R(u)`` through the exact pullback to the fixed grid."""

    if c.t == 0.0:
        return 0.0
    if abs(c.t) * c.slope_bound >= 1.0:
        raise DeformationError(f"cutoff with t={c.t:g} is not invertible at R={c.R:g}")
    _check_integrand(f, u.grid, q)
    inner2 = c.inner_radius ** 2

    def tile(samples):
        s = samples[0]
        keep = s.r2 > inner2
        if not np.any(keep):
            return 0.0
        s = CellSample(s.grad[:, keep], s.value[keep], s.x[:, keep], s.weight[keep], s.r2[keep])
        pA, trA = _pullback_terms(s, c)
        plus = f.value(s.grad - pA / (1.0 + trA), s.value, s.x) * (1.0 + trA)
        minus = f.value(s.grad + pA / (1.0 - trA), s.value, s.x) * (1.0 - trA)
        base = f.value(s.grad, s.value, s.x)
        return float(np.sum((plus + minus - 2.0 * base) * s.weight))

    return pairwise_sum(_map_samples([u], c.R, q, tile))


def pullback_bound(u: ScalarField, f: Integrand, c: CutoffProfile, q: QuadratureRule = DEFAULT_RULE,
                   norm: str = "spectral") -> float:
    """``t^2 ∫ |F_pp| |∇u|^2 ψ_R'^2``, the quadratic majorant of the second difference."""

    _check_integrand(f, u.grid, q)

    def density(s):
        slope = np.asarray(cutoff_derivative(c, np.sqrt(s.r2)))
        hess = matrix_norm(f.hess_pp(s.grad, s.value, s.x), norm)
        return hess * np.sum(s.grad ** 2, axis=0) * slope ** 2

    return c.t ** 2 * _integrate([u], c.R, q, density)


def _require_support(g: ScalarField, eta: float) -> None:
    outside = g.grid.radius() >= eta
    scale = max(1.0, g.max_abs())
    if np.any(np.abs(g.values[outside]) > SUPPORT_TOLERANCE * scale):
        raise FieldError(f"test function is not supported in B_{eta:g}")


def first_variation_L(g: ScalarField, u: ScalarField, f: Integrand, eta: float,
                      q: QuadratureRule = DEFAULT_RULE) -> float:
    """``L(g) = ∫ F_p·∇g + F_z g`` evaluated at ``(∇u, u, x)`` over ``B_η``."""

    _require_support(g, eta)
    _check_integrand(f, u.grid, q)

    def density(su, sg):
        Fp = f.grad_p(su.grad, su.value, su.x)
        Fz = f.grad_z(su.grad, su.value, su.x)
        return np.sum(Fp * sg.grad, axis=0) + Fz * sg.value

    return _integrate([u, g], eta, q, density)


def second_variation_Q(g: ScalarField, u: ScalarField, f: Integrand, eta: float,
                       q: QuadratureRule = DEFAULT_RULE) -> float:
    """``Q(g) = ∫ ∇g·F_pp∇g + 2 g F_pz·∇g + F_zz g^2`` over ``B_η``."""

    _require_support(g, eta)
    _check_integrand(f, u.grid, q)

    def density(su, sg):
        H = f.hess_pp(su.grad, su.value, su.x)
        Hpz = f.hess_pz(su.grad, su.value, su.x)
        Hzz = f.hess_zz(su.grad, su.value, su.x)
        quad = np.einsum("i...,ij...,j...->...", sg.grad, H, sg.grad)
        return quad + 2.0 * sg.value * np.sum(Hpz * sg.grad, axis=0) + Hzz * sg.value ** 2

    return _integrate([u, g], eta, q, density)


def energy_identity_check(a: ScalarField, b: ScalarField, f: Integrand, R: float,
                          q: QuadratureRule = DEFAULT_RULE) -> float:
    """``|E(max{a,b}) + E(min{a,b}) - E(a) - E(b)|``, combined per cell."""

    grid = _same_grid(a, b)
    _check_integrand(f, grid, q)
    hi = a.with_values(np.maximum(a.values, b.values))
    lo = a.with_values(np.minimum(a.values, b.values))

    def density(s_hi, s_lo, s_a, s_b):
        return (f.value(s_hi.grad, s_hi.value, s_hi.x) + f.value(s_lo.grad, s_lo.value, s_lo.x)) - (
            f.value(s_a.grad, s_a.value, s_a.x) + f.value(s_b.grad, s_b.value, s_b.x)
        )

    return abs(_integrate([hi, lo, a, b], R, q, density))


@dataclass
class ChainSample:
    """Densities of ``u`` and of a deformation of ``u`` at the moved simplices of one tile."""

    deformed: np.ndarray
    reference: np.ndarray
    value: np.ndarray
    weight: np.ndarray


def _chain_tiles(u: ScalarField, d: Deformation, f: Integrand, R: Optional[float],
                 moved_only: bool) -> List[ChainSample]:
    """Chain-rule densities ``F((I + Dψ)^T ∇u(y), u(y), x)`` with ``y = x + Σ ψ_j e_j``."""

    d.validate()
    grid = _same_grid(u, *d.displacements)
    if R is not None:
        grid.require_ball(R)
    _check_integrand(f, grid, DEFAULT_RULE)
    n = grid.n
    P = len(kuhn_paths(n))
    row = int(np.prod([m - 1 for m in grid.extent[1:]])) * P
    psi_arrays = [psi.values for psi in d.displacements]

    def work(lo, hi):
        centers = cell_centers(grid, lo, hi)
        r2 = np.sum(centers ** 2, axis=0)
        mask = np.broadcast_to(_ball_mask(r2, R)[None], (P,) + r2.shape)
        centroids = _simplex_centroids(grid, lo, hi)
        shifts, jac = [], []
        moved = np.zeros((P,) + r2.shape, dtype=bool)
        for values in psi_arrays:
            grads, means = simplex_arrays(grid, values, lo, hi)
            shifts.append(means)
            jac.append(grads)
            # a vertex mean of |ψ| is zero only if every vertex is
            moved |= simplex_arrays(grid, np.abs(values), lo, hi)[1] > 0
        keep = mask & moved if moved_only else mask
        if not np.any(keep):
            return ChainSample(np.empty(0), np.empty(0), np.empty(0), np.empty(0))
        x_cell = np.broadcast_to(centers[:, None], (n, P) + r2.shape)[:, keep]
        base = np.moveaxis(centroids, 1, 0)[:, keep]
        y = base.copy()
        for j, means in zip(d.directions, shifts):
            y[j - 1] += means[keep]
        ref_points, def_points = base.T, y.T
        g_ref = interpolant_gradient(u, ref_points).T
        z_ref = sample_points(u, ref_points)
        g_def = interpolant_gradient(u, def_points).T
        z_def = sample_points(u, def_points)
        grad_v = g_def.copy()
        for j, grads in zip(d.directions, jac):
            dpsi = np.moveaxis(grads, 1, 0)[:, keep]
            grad_v += dpsi * g_def[j - 1]
        deformed = f.value(grad_v, z_def, x_cell)
        reference = f.value(g_ref, z_ref, x_cell)
        weight = np.full(deformed.shape, grid.cell_volume / P)
        return ChainSample(deformed, reference, z_def, weight)

    return map_tiles(work, grid.extent[0] - 1, rows_per_tile(row))


def deformed_energy(u: ScalarField, d: Deformation, f: Integrand, R: Optional[float] = None) -> float:
    """Energy of ``u∘(id + Σ ψ_j e_j)`` by the chain rule on the interpolant of ``u``."""

    tiles = _chain_tiles(u, d, f, R, moved_only=False)
    return pairwise_sum(float(np.sum(t.deformed * t.weight)) for t in tiles)


def deformation_delta(u: ScalarField, d: Deformation, f: Integrand, R: Optional[float] = None) -> float:
    """``E_R(u∘(id + ψ)) - E_R(u)`` by the chain rule; simplices that do not move contribute 0."""

    tiles = _chain_tiles(u, d, f, R, moved_only=True)
    return pairwise_sum(float(np.sum((t.deformed - t.reference) * t.weight)) for t in tiles)


def lattice_delta(u: ScalarField, pieces: Sequence[Deformation], f: Integrand, R: Optional[float] = None,
                  kind: str = "max") -> float:
    """Chain-rule energy change of the pointwise max (or min) of several deformations of ``u``."""

    if kind not in ("max", "min"):
        raise DeformationError(f"lattice kind must be 'max' or 'min', got {kind!r}")
    per_piece = [_chain_tiles(u, d, f, R, moved_only=False) for d in pieces]
    totals = []
    for tile_group in zip(*per_piece):
        values = np.stack([t.value for t in tile_group])
        dens = np.stack([t.deformed for t in tile_group])
        pick = np.argmax(values, axis=0) if kind == "max" else np.argmin(values, axis=0)
        chosen = np.take_along_axis(dens, pick[None], axis=0)[0]
        ref = tile_group[0].reference
        totals.append(float(np.sum((chosen - ref) * tile_group[0].weight)))
    return pairwise_sum(totals)
