"""Explicit gradient flow for catalog energies and the 1D heteroclinic.

The flow is the exact gradient of the simplex quadrature used in
:mod:`pyslide.energy`, divided by the lumped mass, so every accepted step
decreases the discrete energy once ``dt`` is below the stability bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .energy import cell_centers, cells_shape, corner_view, kuhn_paths, simplex_arrays
from .errors import ConvergenceError, ParameterError
from .field import Grid, ScalarField, gradient
from .integrand import DoubleWell, Integrand, catalog
from .log import verbose_log
from .parallel import map_tiles, pairwise_sum, rows_per_tile

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BOUNDARY_KINDS = ("fixed", "periodic", "zero-flux")

# Fraction of the explicit stability bound used when no time step is given.
DT_SAFETY = 0.9

# Coarsest spacing targeted by heteroclinic_1d before refining.
COARSE_SPACING = 0.05
SMOOTHING_STEPS = 64


@dataclass(frozen=True)
class FlowConfig:
    """Explicit Euler flow settings; ``boundary`` holds one kind per axis or a single kind for all."""

    dt: Optional[float] = None
    max_steps: int = 100_000
    tol: float = 1e-8
    boundary: Tuple[str, ...] = ("fixed",)
    seed: int = 0
    noise: float = 0.0
    log_every: int = 1000
    divergence_window: int = 100
    divergence_factor: float = 10.0

    def __post_init__(self) -> None:
        if isinstance(self.boundary, str):
            object.__setattr__(self, "boundary", (self.boundary,))
        else:
            object.__setattr__(self, "boundary", tuple(self.boundary))
        for kind in self.boundary:
            if kind not in BOUNDARY_KINDS:
                raise ParameterError(f"unknown boundary condition {kind!r}; use one of {BOUNDARY_KINDS}")
        if self.dt is not None and self.dt <= 0:
            raise ParameterError(f"time step must be positive, got {self.dt}")
        if self.max_steps < 0:
            raise ParameterError("max_steps must be non-negative")
        if self.tol <= 0:
            raise ParameterError(f"tolerance must be positive, got {self.tol}")

    def boundaries(self, n: int) -> Tuple[str, ...]:
        if len(self.boundary) == 1:
            return self.boundary * n
        if len(self.boundary) != n:
            raise ParameterError(f"{len(self.boundary)} boundary conditions given for {n} axes")
        return self.boundary

    def stability_bound(self, grid: Grid) -> float:
        return min(grid.spacing) ** 2 / (2 * grid.n)


@dataclass
class FlowResult:
    """Final field plus per-step residual and energy history."""

    field: ScalarField
    residuals: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)
    steps: int
    converged: bool

    @property
    def residual(self) -> float:
        return float(self.residuals[-1])

    def save_history(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table = np.column_stack([np.arange(len(self.residuals)), self.residuals, self.energies])
        np.savetxt(path, table, delimiter=",", header="step,residual,energy", comments="", fmt="%.17g")
        return path


class _Stencil:
    """Gradient of the simplex-rule energy with boundary handling on a fixed grid."""

    def __init__(self, grid: Grid, f: Integrand, boundaries: Sequence[str]):
        self.grid = grid
        self.f = f
        self.periodic = [axis for axis, kind in enumerate(boundaries) if kind == "periodic"]
        extent = list(grid.extent)
        for axis in self.periodic:
            extent[axis] += 1
        self.ext_grid = Grid(grid.origin, grid.spacing, tuple(extent), grid.k)
        self.free = np.ones(grid.extent, dtype=bool)
        for axis, kind in enumerate(boundaries):
            if kind == "fixed":
                index = [slice(None)] * grid.n
                for face in (0, -1):
                    index[axis] = face
                    self.free[tuple(index)] = False
        self.mass = self._fold(self._scatter(self._extend(np.zeros(grid.extent)), mass_only=True)[0])

    def _extend(self, values: np.ndarray) -> np.ndarray:
        for axis in self.periodic:
            values = np.concatenate([values, np.take(values, [0], axis=axis)], axis=axis)
        return values

    def _fold(self, values: np.ndarray) -> np.ndarray:
        for axis in reversed(self.periodic):
            m = values.shape[axis] - 1
            head = np.take(values, np.arange(m), axis=axis).copy()
            index = [slice(None)] * values.ndim
            index[axis] = 0
            head[tuple(index)] += np.take(values, m, axis=axis)
            values = head
        return values

    def _scatter(self, ext: np.ndarray, mass_only: bool = False, stiffness: bool = False) -> Tuple[np.ndarray, float, float]:
        grid = self.ext_grid
        n = grid.n
        paths = kuhn_paths(n)
        P = len(paths)
        weight = grid.cell_volume / P
        f = self.f

        def work(lo, hi):
            cells = cells_shape(grid, lo, hi)
            local = np.zeros((hi - lo + 1,) + grid.extent[1:])
            if mass_only:
                Fp = np.zeros((n, P) + cells)
                Fz = np.ones((P,) + cells)
                total, stiff = 0.0, 0.0
            else:
                grads, means = simplex_arrays(grid, ext, lo, hi)
                p = np.moveaxis(grads, 1, 0)
                x = np.broadcast_to(cell_centers(grid, lo, hi)[:, None], p.shape)
                Fp = f.grad_p(p, means, x)
                Fz = f.grad_z(p, means, x)
                total = float(np.sum(f.value(p, means, x)) * weight)
                stiff = float(np.max(f.hessian_norm(p, means, x), initial=0.0)) if stiffness else 0.0
            for index, (vertices, order) in enumerate(paths):
                for m, vertex in enumerate(vertices):
                    term = Fz[index] / (n + 1)
                    if m >= 1:
                        axis = order[m - 1]
                        term = term + Fp[axis, index] / grid.spacing[axis]
                    if m < n:
                        axis = order[m]
                        term = term - Fp[axis, index] / grid.spacing[axis]
                    corner_view(local, vertex, cells)[...] += term * weight
            return lo, local, total, stiff

        row = int(np.prod([m - 1 for m in grid.extent[1:]])) * P
        out = np.zeros(grid.extent)
        energies, stiff_parts = [], []
        for lo, local, total, stiff in map_tiles(work, grid.extent[0] - 1, rows_per_tile(row)):
            out[lo:lo + local.shape[0]] += local
            energies.append(total)
            stiff_parts.append(stiff)
        return out, pairwise_sum(energies), max(stiff_parts, default=0.0)

    def residual_field(self, values: np.ndarray, stiffness: bool = False) -> Tuple[np.ndarray, float, float]:
        """``M^{-1} ∇E`` at the free nodes (zero elsewhere), the energy and ``sup |F_pp|``."""

        grad, total, stiff = self._scatter(self._extend(values), stiffness=stiffness)
        field_ = self._fold(grad) / self.mass
        field_[~self.free] = 0.0
        return field_, total, stiff


def variational_residual(u: ScalarField, f: Integrand, boundary: Union[str, Sequence[str]] = "fixed") -> float:
    """Sup norm of the discrete Euler-Lagrange residual of the simplex-rule energy."""

    cfg = FlowConfig(boundary=boundary)
    stencil = _Stencil(u.grid, f, cfg.boundaries(u.grid.n))
    field_, _, _ = stencil.residual_field(np.asarray(u.values, dtype=float))
    return float(np.max(np.abs(field_)))


def criticality_residual(u: ScalarField, f: Integrand) -> float:
    """``‖div F_p(∇u, u, x) - F_z(∇u, u, x)‖_∞`` over interior nodes, by centered differences."""

    grid = u.grid
    p = gradient(u).components
    x = grid.mesh()
    Fp = f.grad_p(p, u.values, x)
    Fz = f.grad_z(p, u.values, x)
    div = np.zeros(grid.extent)
    for axis in range(grid.n):
        div += np.gradient(Fp[axis], grid.spacing[axis], axis=axis, edge_order=1)
    interior = tuple(slice(1, -1) for _ in range(grid.n))
    res = (div - Fz)[interior]
    if res.size == 0:
        return 0.0
    return float(np.max(np.abs(res)))


def gradient_flow(f: Integrand, u0: ScalarField, cfg: FlowConfig = FlowConfig()) -> FlowResult:
    """Iterate ``u <- u - dt M^{-1} ∇E(u)`` until the residual is below ``cfg.tol``."""

    grid = u0.grid
    stencil = _Stencil(grid, f, cfg.boundaries(grid.n))
    values = np.array(u0.values, dtype=float)
    if cfg.noise > 0:
        rng = np.random.default_rng(cfg.seed)
        values[stencil.free] += cfg.noise * rng.uniform(-1.0, 1.0, int(stencil.free.sum()))

    residuals, energies = [], []
    dt = cfg.dt
    bound = cfg.stability_bound(grid)
    if dt is not None and dt > bound:
        raise ParameterError(f"time step {dt:g} exceeds the stability bound {bound:g}")
    converged = False
    step = 0
    while True:
        field_, total, stiff = stencil.residual_field(values, stiffness=dt is None)
        if dt is None:
            dt = DT_SAFETY * bound / max(1.0, stiff)
            logger.debug("gradient flow: dt=%.3e (sup|F_pp|=%.3g)", dt, stiff)
        res = float(np.max(np.abs(field_)))
        if not math.isfinite(res) or not math.isfinite(total):
            raise ConvergenceError(f"gradient flow produced non-finite values at step {step}")
        residuals.append(res)
        energies.append(total)
        if cfg.log_every and step % cfg.log_every == 0:
            verbose_log("step %d: residual=%.3e energy=%.10g", step, res, total)
        if res <= cfg.tol:
            converged = True
            break
        window = cfg.divergence_window
        if step >= window and res > cfg.divergence_factor * residuals[step - window]:
            raise ConvergenceError(
                f"gradient flow diverged: residual {res:.3e} at step {step}, "
                f"{residuals[step - window]:.3e} at step {step - window}"
            )
        if step >= cfg.max_steps:
            break
        values = values - dt * field_
        step += 1

    if converged:
        logger.info("gradient flow converged in %d steps (residual %.3e)", step, residuals[-1])
    else:
        logger.warning("gradient flow stopped after %d steps with residual %.3e", step, residuals[-1])
    return FlowResult(u0.with_values(values), np.asarray(residuals), np.asarray(energies), step, converged)


def _smooth(f: Integrand, u: ScalarField, steps: int) -> ScalarField:
    """A fixed number of flow steps with fixed ends; damps interpolation kinks."""

    stencil = _Stencil(u.grid, f, ("fixed",) * u.grid.n)
    values = np.array(u.values, dtype=float)
    dt = None
    for _ in range(steps):
        field_, _, stiff = stencil.residual_field(values, stiffness=dt is None)
        if dt is None:
            dt = DT_SAFETY * FlowConfig().stability_bound(u.grid) / max(1.0, stiff)
        values -= dt * field_
    return u.with_values(values)


def _coarsening_levels(cells: int, h: float) -> int:
    levels = max(0, int(math.floor(math.log2(COARSE_SPACING / h)))) if h < COARSE_SPACING else 0
    while levels > 0 and cells % (2 ** levels):
        levels -= 1
    return levels


def heteroclinic_1d(W: DoubleWell, L: float, h: float, tol: float = 1e-9,
                    left: Optional[float] = None, right: Optional[float] = None,
                    max_steps: int = 2_000_000) -> ScalarField:
    """Connection between the wells on ``[-L, L]`` with fixed end values.

    The flow runs to ``tol`` on a coarse grid of spacing about
    ``COARSE_SPACING`` and is then refined by factors of two, with a short
    smoothing flow on every finer level.
    """

    if L <= 0 or h <= 0:
        raise ParameterError(f"need L > 0 and h > 0, got L={L}, h={h}")
    left = W.lower if left is None else float(left)
    right = W.upper if right is None else float(right)
    f = catalog("allen_cahn", {"lower": W.lower, "upper": W.upper, "scale": W.scale})
    fine = Grid.box([-L], [L], h)
    cells = fine.extent[0] - 1
    levels = _coarsening_levels(cells, fine.spacing[0])

    grid = Grid((-L,), (fine.spacing[0] * 2 ** levels,), (cells // 2 ** levels + 1,))
    s = grid.axes()[0]
    if left == right:
        start = np.full(grid.extent, left)
    else:
        start = 0.5 * (left + right) + 0.5 * (right - left) * np.clip(s, -1.0, 1.0)
    result = gradient_flow(f, ScalarField(grid, start), FlowConfig(tol=tol, max_steps=max_steps))
    if not result.converged:
        raise ConvergenceError(f"heteroclinic flow did not reach {tol:g} on the coarse grid")
    u = result.field
    for level in range(levels - 1, -1, -1):
        finer = Grid((-L,), (fine.spacing[0] * 2 ** level,), (cells // 2 ** level + 1,))
        values = np.interp(finer.axes()[0], u.grid.axes()[0], u.values)
        u = _smooth(f, ScalarField(finer, values), SMOOTHING_STEPS)
    logger.info("heteroclinic on [-%g, %g] with h=%g after %d refinements", L, L, h, levels)
    return u
