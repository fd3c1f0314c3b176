"""Horizontal deformations of the domain and the sliding cutoff.

A deformation moves the argument of a field, ``v(x) = u(x + Σ_j ψ_j(x) e_j)``,
along translation-invariant directions. The sliding cutoff ``ψ_R`` turns a
translation at infinity into a compactly supported perturbation; its
iterated-logarithm variant weakens the growth hypothesis the sliding
argument needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConvergenceError, DeformationError, DomainError
from .field import (
    Grid,
    ScalarField,
    load_field,
    pointwise_max,
    pointwise_min,
    sample_points,
    save_field,
)
from .parallel import tiled_array

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Fixed-point inversion of the sliding map.
SLIDE_TOLERANCE = 1e-12
SLIDE_MAX_ITERATIONS = 50
SLIDE_CHUNK = 4096

# Slack on the closed Lipschitz and support bounds.
BOUND_SLACK = 1e-9


def _check_log_argument(value, k: int, R) -> None:
    if np.any(np.asarray(value) <= 0):
        raise DomainError(f"iterated logarithm of depth {k} undefined at R={R}: nonpositive intermediate value")


def ell(k: int, R):
    """``ℓ_0(R) = R`` and ``ℓ_k(R) = log ℓ_{k-1}(R)``."""

    if k < 0:
        raise DomainError(f"log depth must be nonnegative, got {k}")
    value = np.asarray(R, dtype=float)
    for _ in range(k):
        _check_log_argument(value, k, R)
        value = np.log(value)
    return value if value.ndim else float(value)


def exp_iter(k: int, s):
    """``e_0(s) = s`` and ``e_k(s) = exp(e_{k-1}(s))``."""

    if k < 0:
        raise DomainError(f"exponential depth must be nonnegative, got {k}")
    value = np.asarray(s, dtype=float)
    for _ in range(k):
        value = np.exp(value)
    return value if value.ndim else float(value)


def pi(k: int, R):
    """``π_k(R) = ℓ_0(R)···ℓ_k(R)``, with ``π_{-1} = 1``."""

    if k < -1:
        raise DomainError(f"product depth must be at least -1, got {k}")
    product = np.ones_like(np.asarray(R, dtype=float))
    for j in range(k + 1):
        product = product * ell(j, R)
    return product if np.ndim(product) else float(product)


def theta(k: int, R):
    """``θ_k(R) = e_k(sqrt(ℓ_k(R)))``; ``θ_0(R) = sqrt(R)``."""

    inner = np.asarray(ell(k, R), dtype=float)
    if np.any(inner < 0):
        raise DomainError(f"θ_{k} undefined at R={R}: ℓ_{k}(R) < 0")
    return exp_iter(k, np.sqrt(inner))


def sigma(k: int, r):
    return 1.0 / np.asarray(pi(k, r)) ** 2


@dataclass(frozen=True)
class CutoffProfile:
    """Radial sliding cutoff with radius ``R``, log depth ``k`` and translation size ``t``."""

    R: float
    t: float = 0.0
    k: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "k", int(self.k))
        if self.k < 0:
            raise DomainError(f"log depth must be nonnegative, got {self.k}")
        if self.k == 0 and self.R <= 1:
            raise DomainError(f"cutoff needs R > 1, got {self.R}")
        if self.k >= 1 and not ell(self.k, self.R) > 1:
            raise DomainError(f"cutoff of depth {self.k} needs ℓ_{self.k + 1}(R) > 0, R={self.R}")
        limit = self.inner_radius / 4
        if abs(self.t) > limit * (1 + 1e-12):
            raise DomainError(f"|t| = {abs(self.t):g} exceeds θ_k(R)/4 = {limit:g}")

    @property
    def inner_radius(self) -> float:
        return float(theta(self.k, self.R))

    @property
    def log_scale(self) -> float:
        return float(ell(self.k + 1, self.R))

    @property
    def slope_bound(self) -> float:
        """``sup |ψ_R'|``, attained at the inner radius."""

        return 2.0 / (self.log_scale * float(pi(self.k, self.inner_radius)))

    def with_t(self, t: float) -> "CutoffProfile":
        return CutoffProfile(self.R, t, self.k)


def _ramp_mask(c: CutoffProfile, s: np.ndarray) -> np.ndarray:
    return (s > c.inner_radius) & (s < c.R)


def cutoff_value(c: CutoffProfile, s):
    """1 on ``[0, θ]``, ``2 - 2ℓ_{k+1}(s)/ℓ_{k+1}(R)`` on ``(θ, R)``, 0 beyond."""

    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("cutoff evaluated at a negative radius")
    out = np.where(s_arr <= c.inner_radius, 1.0, 0.0)
    ramp = _ramp_mask(c, s_arr)
    if np.any(ramp):
        out = np.array(out)
        out[ramp] = 2.0 - 2.0 * np.asarray(ell(c.k + 1, s_arr[ramp])) / c.log_scale
    return out if out.ndim else float(out)


def cutoff_derivative(c: CutoffProfile, s):
    """``-2 / (ℓ_{k+1}(R) π_k(s))`` on ``(θ, R)``, 0 elsewhere."""

    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("cutoff evaluated at a negative radius")
    out = np.zeros_like(s_arr)
    ramp = _ramp_mask(c, s_arr)
    if np.any(ramp):
        out[ramp] = -2.0 / (c.log_scale * np.asarray(pi(c.k, s_arr[ramp])))
    return out if out.ndim else float(out)


def axis_slopes(psi: ScalarField) -> np.ndarray:
    """Largest adjacent difference quotient along each axis."""

    grid = psi.grid
    return np.array([
        float(np.max(np.abs(np.diff(psi.values, axis=axis)))) / grid.spacing[axis]
        for axis in range(grid.n)
    ])


def lipschitz_slope(psi: ScalarField) -> float:
    return float(np.max(axis_slopes(psi)))


def lipschitz_norm(psi: ScalarField) -> float:
    """Grid ``C^{0,1}`` norm: max of the sup norm and the largest slope."""

    return max(psi.max_abs(), lipschitz_slope(psi))


@dataclass(frozen=True, eq=False)
class Deformation:
    """Displacements ``ψ_j`` along the 1-based directions ``j`` of a common grid."""

    directions: Tuple[int, ...]
    displacements: Tuple[ScalarField, ...]
    delta: Optional[float] = None
    R: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "directions", tuple(int(j) for j in self.directions))
        object.__setattr__(self, "displacements", tuple(self.displacements))
        if len(self.directions) != len(self.displacements):
            raise DeformationError("one displacement field per direction is required")
        if not self.directions:
            raise DeformationError("a deformation needs at least one direction")
        if len(set(self.directions)) != len(self.directions):
            raise DeformationError(f"repeated direction in {self.directions}")

    @classmethod
    def along(cls, direction: int, psi: ScalarField, delta: Optional[float] = None,
              R: Optional[float] = None) -> "Deformation":
        return cls((direction,), (psi,), delta, R)

    @property
    def grid(self) -> Grid:
        return self.displacements[0].grid

    def displacement_array(self) -> np.ndarray:
        """Full displacement vector per node, shape ``(n, *extent)``."""

        grid = self.grid
        out = np.zeros((grid.n,) + grid.extent)
        for j, psi in zip(self.directions, self.displacements):
            out[j - 1] += psi.values
        return out

    def moved_mask(self) -> np.ndarray:
        return np.any(self.displacement_array() != 0, axis=0)

    def slope_sum(self) -> float:
        return float(sum(np.sum(axis_slopes(psi) ** 2) for psi in self.displacements))

    def validate(self) -> None:
        grid = self.grid
        for j, psi in zip(self.directions, self.displacements):
            if psi.grid != grid:
                raise DeformationError("displacement fields live on different grids")
            if not grid.k <= j <= grid.n:
                raise DeformationError(f"direction e_{j} is not translation-invariant (k={grid.k}, n={grid.n})")
        total = self.slope_sum()
        if total > 1.0 + BOUND_SLACK:
            raise DeformationError(f"Σ‖∂_i ψ_j‖² = {total:.6g} exceeds 1")
        if self.R is not None:
            outside = grid.radius() >= self.R
            leak = max(float(np.max(np.abs(psi.values[outside]), initial=0.0)) for psi in self.displacements)
            if leak > BOUND_SLACK:
                raise DeformationError(f"displacement reaches {leak:.3e} outside B_{self.R:g}")
        if self.delta is not None:
            worst = max(lipschitz_norm(psi) for psi in self.displacements)
            if worst > self.delta + BOUND_SLACK:
                raise DeformationError(f"C^0,1 norm {worst:.6g} exceeds delta = {self.delta:g}")

    def manifest(self) -> str:
        directions = ",".join(str(j) for j in self.directions)
        delta = "none" if self.delta is None else repr(float(self.delta))
        R = "none" if self.R is None else repr(float(self.R))
        return f"directions={directions}, delta={delta}, R={R}"


@dataclass(frozen=True, eq=False)
class PiecewiseDeformation:
    """Field assembled nodewise from several deformations of the same ``u``."""

    pieces: Tuple[Deformation, ...]
    selector: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise DeformationError("a piecewise deformation needs at least one piece")
        sel = np.asarray(self.selector).astype(int)
        if sel.shape != self.pieces[0].grid.extent:
            raise DeformationError(f"selector shape {sel.shape} does not match the grid")
        if sel.min() < 0 or sel.max() >= len(self.pieces):
            raise DeformationError("selector refers to a missing piece")
        sel.setflags(write=False)
        object.__setattr__(self, "selector", sel)


def apply(u: ScalarField, d: Deformation) -> ScalarField:
    """``v(x) = u(x + Σ_j ψ_j(x) e_j)``; nodes that do not move keep their exact value."""

    d.validate()
    if d.grid != u.grid:
        raise DeformationError("deformation and field live on different grids")
    grid = u.grid
    shift = d.displacement_array()
    moved = np.any(shift != 0, axis=0)
    values = np.array(u.values)
    if np.any(moved):
        points = (grid.mesh() + shift)[:, moved].T
        values[moved] = sample_points(u, points)
    return ScalarField(grid, values)


def _max_adjacent_jump(values: np.ndarray, selector: np.ndarray) -> float:
    """Largest difference between adjacent nodes taken from different pieces."""

    worst = 0.0
    for axis in range(values.ndim):
        cut = np.diff(selector, axis=axis) != 0
        if np.any(cut):
            worst = max(worst, float(np.max(np.abs(np.diff(values, axis=axis))[cut])))
    return worst


def apply_piecewise(u: ScalarField, pd: PiecewiseDeformation) -> ScalarField:
    """Select piece ``selector[x]`` at every node and check the result is continuous."""

    pieces = [apply(u, d) for d in pd.pieces]
    if len(pieces) == 1:
        return pieces[0]
    stacked = np.stack([p.values for p in pieces])
    values = np.take_along_axis(stacked, pd.selector[None, ...], axis=0)[0]
    grid = u.grid
    tolerance = 10.0 * max(grid.spacing) * lipschitz_slope(u) + 1e-12
    jump = _max_adjacent_jump(values, pd.selector)
    if jump > tolerance:
        raise DeformationError(f"assembled field jumps by {jump:.3e} across a selector interface (tolerance {tolerance:.3e})")
    return ScalarField(grid, values)


def lattice(u: ScalarField, pieces: Sequence[Deformation], kind: str = "max") -> Tuple[ScalarField, PiecewiseDeformation]:
    """Pointwise max (or min) of several deformations of ``u`` as a piecewise deformation."""

    fields = [apply(u, d) for d in pieces]
    stacked = np.stack([f.values for f in fields])
    if kind == "max":
        selector = np.argmax(stacked, axis=0)
    elif kind == "min":
        selector = np.argmin(stacked, axis=0)
    else:
        raise DeformationError(f"lattice kind must be 'max' or 'min', got {kind!r}")
    pd = PiecewiseDeformation(tuple(pieces), selector)
    combined = fields[0]
    for other in fields[1:]:
        combined = pointwise_max(combined, other) if kind == "max" else pointwise_min(combined, other)
    return combined, pd


def slide_field(u: ScalarField, c: CutoffProfile, sign: int) -> ScalarField:
    """``u^±_{R,t}``: the value at ``y`` is ``u(x)`` where ``y = x ± t ψ_R(|x|) e_n``."""

    if sign not in (1, -1):
        raise DeformationError(f"sign must be +1 or -1, got {sign}")
    grid = u.grid
    if c.t == 0.0:
        return u
    if abs(c.t) * c.slope_bound >= 1.0:
        raise DeformationError(f"|t|·sup|ψ'| = {abs(c.t) * c.slope_bound:.3g} is not a contraction")
    grid.require_ball(c.R + abs(c.t))
    step = sign * c.t
    mesh = grid.mesh()
    r_nodes = np.sqrt(np.sum(mesh ** 2, axis=0))
    candidates = r_nodes < c.R + abs(c.t)
    points = mesh[:, candidates].T
    tol = SLIDE_TOLERANCE * max(1.0, c.R)

    def invert(lo: int, hi: int) -> np.ndarray:
        y = points[lo:hi]
        x = y.copy()
        for _ in range(SLIDE_MAX_ITERATIONS):
            radius = np.sqrt(np.sum(x ** 2, axis=1))
            update = y[:, -1] - step * cutoff_value(c, radius)
            change = np.max(np.abs(update - x[:, -1]), initial=0.0)
            x[:, -1] = update
            if change <= tol:
                return x
        raise ConvergenceError(f"sliding inversion did not converge in {SLIDE_MAX_ITERATIONS} iterations")

    preimages = tiled_array(invert, len(points), SLIDE_CHUNK) if len(points) else points
    values = np.array(u.values)
    if len(points):
        radius = np.sqrt(np.sum(preimages ** 2, axis=1))
        displaced = np.asarray(cutoff_value(c, radius)) != 0
        flat = np.flatnonzero(candidates.ravel())[displaced]
        values.ravel()[flat] = sample_points(u, preimages[displaced])
    logger.debug("slid %d node(s) with t=%g sign=%d", int(candidates.sum()), c.t, sign)
    return ScalarField(grid, values)


def compose(first: Deformation, second: Deformation) -> Deformation:
    """Displacement of ``w = v∘(id + ψ_second)`` relative to ``u`` when ``v = u∘(id + ψ_first)``."""

    if first.grid != second.grid:
        raise DeformationError("deformations live on different grids")
    grid = first.grid
    directions = tuple(sorted(set(first.directions) | set(second.directions)))
    inner = second.displacement_array()
    points = (grid.mesh() + inner).reshape(grid.n, -1).T
    outer = {j: psi for j, psi in zip(first.directions, first.displacements)}
    fields = []
    for j in directions:
        total = inner[j - 1].ravel().copy()
        if j in outer:
            total += sample_points(outer[j], points)
        fields.append(ScalarField(grid, total))
    delta = None
    if first.delta is not None and second.delta is not None:
        delta = second.delta + first.delta * (1 + second.delta)
    R = None if first.R is None or second.R is None else max(first.R, second.R)
    return Deformation(directions, tuple(fields), delta, R)


def save_deformation(d: Deformation, stem: PathLike) -> Path:
    """Write ``<stem>.manifest`` plus one field file per direction."""

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = stem.with_suffix(".manifest")
    manifest.write_text(d.manifest() + "\n")
    for j, psi in zip(d.directions, d.displacements):
        save_field(psi, stem.parent / f"{stem.name}_{j}.txt")
    return manifest


def _parse_manifest(line: str) -> dict:
    entries = {}
    for part in line.strip().split(", "):
        key, _, value = part.partition("=")
        entries[key.strip()] = value.strip()
    missing = {"directions", "delta", "R"} - set(entries)
    if missing:
        raise DeformationError(f"manifest misses {sorted(missing)}: {line!r}")
    return entries


def load_deformation(manifest: PathLike) -> Deformation:
    manifest = Path(manifest)
    entries = _parse_manifest(manifest.read_text().splitlines()[0])
    directions = [int(j) for j in entries["directions"].split(",")]
    stem = manifest.with_suffix("")
    fields = [load_field(stem.parent / f"{stem.name}_{j}.txt") for j in directions]
    delta = None if entries["delta"] == "none" else float(entries["delta"])
    R = None if entries["R"] == "none" else float(entries["R"])
    return Deformation(tuple(directions), tuple(fields), delta, R)
