"""Closed convex set-valued right-hand sides.

A set field maps (t, v) to a nonempty, closed, convex subset of state space:
a ball around a base point, a componentwise box, a polytope with at most
eight vertices, or a single point (a radius-zero ball).  Set values support
metric projection (unique nearest point in the L2-type norm), support points,
magnitude sup ||x||, and the selection rules the solvers use.  Radial
truncation retracts the state argument onto a fixed ball before the base maps
see it, making the field uniformly bounded.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .operators import AssumptionReport
from .spaces import Grid, TimeMesh, h_norm, pairing

__all__ = [
    "InvalidSetError",
    "ProjectionFailure",
    "BallValue",
    "BoxValue",
    "PolytopeValue",
    "SetValue",
    "BallField",
    "BoxField",
    "PolytopeField",
    "SingletonField",
    "SetField",
    "radial_retraction",
    "truncate",
    "MinimalNorm",
    "ProjectPrevious",
    "Extremal",
    "ConstantCenter",
    "SelectionRule",
    "select",
    "distance_to_set",
    "GrowthEnvelope",
    "check_growth_f",
]


class InvalidSetError(ValueError):
    """The requested set value is empty or malformed."""


class ProjectionFailure(RuntimeError):
    """The iterative nearest-point solve exhausted its budget."""


@dataclass(frozen=True)
class BallValue:
    """{y : h_norm(y - center) <= radius}; radius 0 is a single point."""

    center: np.ndarray
    radius: float
    grid: Grid

    def __post_init__(self) -> None:
        if self.radius < 0.0:
            raise InvalidSetError("ball radius must be nonnegative")

    def magnitude(self) -> float:
        return h_norm(self.center, self.grid) + self.radius

    def project(self, x: np.ndarray) -> np.ndarray:
        gap = x - self.center
        dist = h_norm(gap, self.grid)
        if dist <= self.radius:
            return np.array(x, dtype=float)
        return self.center + (self.radius / dist) * gap

    def support_point(self, d: np.ndarray) -> np.ndarray:
        nd = h_norm(d, self.grid)
        if nd == 0.0:
            raise ValueError("support direction must be nonzero")
        return self.center + (self.radius / nd) * d

    def centroid(self) -> np.ndarray:
        return np.array(self.center, dtype=float)


@dataclass(frozen=True)
class BoxValue:
    """Componentwise interval [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise InvalidSetError(f"box has lower > upper at component {bad}")

    def magnitude(self) -> float:
        corner = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return h_norm(corner, self.grid)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def support_point(self, d: np.ndarray) -> np.ndarray:
        if not np.any(d):
            raise ValueError("support direction must be nonzero")
        mid = 0.5 * (self.lower + self.upper)
        return np.where(d > 0.0, self.upper, np.where(d < 0.0, self.lower, mid))

    def centroid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def _affine_minimizer(points: np.ndarray) -> np.ndarray:
    # min ||sum a_i P_i|| subject to sum a_i = 1, signs free
    k = points.shape[0]
    sys = np.zeros((k + 1, k + 1))
    sys[:k, :k] = points @ points.T
    sys[:k, k] = 1.0
    sys[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
    return sol[:k]


def _nearest_point_hull(vertices: np.ndarray, x: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Nearest point of conv(vertices) to x; Wolfe-style active-set iteration.

    Each outer pass adds the vertex that violates the optimality criterion
    most, then restores the affine minimizer over the active set, dropping
    vertices whose weights would turn negative.  Terminates on the active
    face, where the solve is exact to round-off.
    """
    pts = np.asarray(vertices, dtype=float) - x
    if pts.shape[0] == 1:
        return vertices[0].astype(float)
    norms2 = np.einsum("ij,ij->i", pts, pts)
    scale = max(1.0, float(norms2.max()))
    active = [int(np.argmin(norms2))]
    lam = np.array([1.0])
    y = pts[active[0]].copy()
    budget = max_iter
    while budget > 0:
        budget -= 1
        gaps = float(y @ y) - pts @ y
        j = int(np.argmax(gaps))
        if gaps[j] <= 1e-13 * scale or j in active:
            return y + x
        active.append(j)
        lam = np.append(lam, 0.0)
        while budget > 0:
            budget -= 1
            alpha = _affine_minimizer(pts[active])
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            shrink = lam - alpha
            movable = shrink > 1e-14
            theta = float(np.min(lam[movable] / shrink[movable]))
            lam = (1.0 - theta) * lam + theta * alpha
            keep = lam > 1e-14
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep]
            lam /= lam.sum()
        y = lam @ pts[active]
    raise ProjectionFailure("nearest-point iteration exceeded its budget")


@dataclass(frozen=True)
class PolytopeValue:
    """Convex hull of at most eight vertices."""

    vertices: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        if self.vertices.ndim != 2 or not 1 <= self.vertices.shape[0] <= 8:
            raise InvalidSetError("polytope needs between 1 and 8 vertices")

    def magnitude(self) -> float:
        # the sup over a hull is attained at an extreme point
        return max(h_norm(v, self.grid) for v in self.vertices)

    def project(self, x: np.ndarray) -> np.ndarray:
        return _nearest_point_hull(self.vertices, np.asarray(x, dtype=float))

    def support_point(self, d: np.ndarray) -> np.ndarray:
        if not np.any(d):
            raise ValueError("support direction must be nonzero")
        scores = self.vertices @ d
        return self.vertices[int(np.argmax(scores))].astype(float)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


SetValue = Union[BallValue, BoxValue, PolytopeValue]

VectorMap = Callable[[float, np.ndarray], np.ndarray]
ScalarMap = Callable[[float, np.ndarray], float]


def radial_retraction(v: np.ndarray, bound: float, grid: Grid) -> np.ndarray:
    """v itself inside the h_norm ball of the given radius, else v scaled onto it."""
    nv = h_norm(v, grid)
    if nv <= bound:
        return v
    return (bound / nv) * v


def _retract(v: np.ndarray, bound: float | None, grid: Grid) -> np.ndarray:
    if bound is None:
        return v
    return radial_retraction(v, bound, grid)


@dataclass(frozen=True)
class BallField:
    center_map: VectorMap
    radius_map: ScalarMap
    truncation_radius: float | None = None

    def evaluate(self, t: float, v: np.ndarray, grid: Grid) -> BallValue:
        v = _retract(v, self.truncation_radius, grid)
        center = np.asarray(self.center_map(t, v), dtype=float)
        return BallValue(center, float(self.radius_map(t, v)), grid)


@dataclass(frozen=True)
class BoxField:
    lower_map: VectorMap
    upper_map: VectorMap
    truncation_radius: float | None = None

    def evaluate(self, t: float, v: np.ndarray, grid: Grid) -> BoxValue:
        v = _retract(v, self.truncation_radius, grid)
        lower = np.asarray(self.lower_map(t, v), dtype=float)
        upper = np.asarray(self.upper_map(t, v), dtype=float)
        return BoxValue(lower, upper, grid)


@dataclass(frozen=True)
class PolytopeField:
    vertex_maps: tuple[VectorMap, ...]
    truncation_radius: float | None = None

    def __post_init__(self) -> None:
        if not 1 <= len(self.vertex_maps) <= 8:
            raise InvalidSetError("polytope field needs between 1 and 8 vertex maps")

    def evaluate(self, t: float, v: np.ndarray, grid: Grid) -> PolytopeValue:
        v = _retract(v, self.truncation_radius, grid)
        verts = np.array([np.asarray(f(t, v), dtype=float) for f in self.vertex_maps])
        return PolytopeValue(verts, grid)


@dataclass(frozen=True)
class SingletonField:
    point_map: VectorMap
    truncation_radius: float | None = None

    def evaluate(self, t: float, v: np.ndarray, grid: Grid) -> BallValue:
        v = _retract(v, self.truncation_radius, grid)
        return BallValue(np.asarray(self.point_map(t, v), dtype=float), 0.0, grid)


SetField = Union[BallField, BoxField, PolytopeField, SingletonField]


def truncate(field: SetField, m1: float) -> SetField:
    """Field whose state argument is radially retracted onto the m1-ball.

    Inside the ball the evaluated sets are identical to the untruncated
    field's; outside, the base maps see the retracted point, so the field
    becomes uniformly bounded.
    """
    if not m1 > 0.0:
        raise ValueError("truncation radius must be positive")
    return dataclasses.replace(field, truncation_radius=float(m1))


@dataclass(frozen=True)
class MinimalNorm:
    pass


@dataclass(frozen=True)
class ProjectPrevious:
    pass


@dataclass(frozen=True)
class Extremal:
    direction: np.ndarray


@dataclass(frozen=True)
class ConstantCenter:
    pass


SelectionRule = Union[MinimalNorm, ProjectPrevious, Extremal, ConstantCenter]


def select(value: SetValue, rule: SelectionRule, prev: np.ndarray | None = None) -> np.ndarray:
    """Pick one point of the set according to the rule; the result lies in the set."""
    if isinstance(rule, MinimalNorm):
        return value.project(np.zeros(value.grid.n))
    if isinstance(rule, ProjectPrevious):
        if prev is None:
            raise ValueError("ProjectPrevious needs the previous selection")
        return value.project(prev)
    if isinstance(rule, Extremal):
        return value.support_point(rule.direction)
    if isinstance(rule, ConstantCenter):
        return value.centroid()
    raise TypeError(f"unknown selection rule: {rule!r}")


def distance_to_set(value: SetValue, x: np.ndarray) -> float:
    """h_norm distance from x to the set; zero iff x belongs to it."""
    return h_norm(x - value.project(x), value.grid)


@dataclass(frozen=True)
class GrowthEnvelope:
    """Claimed bound magnitude(F(t, v)) <= a(t) + b * h_norm(v)^(2/q)."""

    a: Callable[[float], float]
    b: float
    q: float

    def __post_init__(self) -> None:
        if not self.b > 0.0:
            raise ValueError("envelope slope b must be positive")
        if not 1.0 < self.q <= 2.0:
            raise ValueError("envelope exponent q must lie in (1, 2]")

    def bound(self, t: float, v_h_norm: float) -> float:
        return float(self.a(t)) + self.b * v_h_norm ** (2.0 / self.q)

    def a_values(self, mesh: TimeMesh) -> np.ndarray:
        vals = np.array([float(self.a(t)) for t in mesh.nodes()])
        if np.any(vals < 0.0):
            raise ValueError("envelope offset a(t) must be nonnegative")
        return vals

    def truncated_bound(self, t: float, m1: float) -> float:
        """Uniform bound for the field truncated at radius m1."""
        return float(self.a(t)) + self.b * m1 ** (2.0 / self.q)


def check_growth_f(
    field: SetField,
    env: GrowthEnvelope,
    mesh: TimeMesh,
    grid: Grid,
    samples: int = 16,
    seed: int = 0,
    tol: float = 1e-9,
) -> AssumptionReport:
    """Test the growth envelope at every mesh node against sampled states."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    env.a_values(mesh)
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes()
    witness = None
    worst_excess = -math.inf
    fitted_b = 0.0
    for k in range(samples):
        v = rng.standard_normal(grid.n)
        nv = h_norm(v, grid)
        if nv > 0.0:
            v /= nv
        for mag in np.logspace(-2.0, 2.0, 7):
            state = mag * v
            vh = h_norm(state, grid)
            for t in nodes:
                size = field.evaluate(t, state, grid).magnitude()
                bound = env.bound(t, vh)
                excess = size - bound
                if vh > 0.0:
                    fitted_b = max(fitted_b, (size - float(env.a(t))) / vh ** (2.0 / env.q))
                if excess > worst_excess:
                    worst_excess = excess
                if excess > tol * max(1.0, bound) and witness is None:
                    witness = {
                        "t": float(t),
                        "v": state,
                        "magnitude": size,
                        "bound": bound,
                        "sample": k,
                    }
    return AssumptionReport(
        name="growth_f",
        passed=witness is None,
        constants={"worst_excess": worst_excess, "fitted_b": fitted_b},
        witness=witness,
        seed=seed,
    )
