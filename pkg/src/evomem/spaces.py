"""One discrete state space carrying three norms.

State vectors are real values on the interior nodes of a uniform 1D grid with
homogeneous Dirichlet boundaries.  The same vector is measured in three ways:

* ``h_norm``   -- the L2-type norm sqrt(h * sum v_i^2),
* ``va_norm``  -- the W^{1,p}_0-type gradient norm built from forward jumps
  with ghost zeros at both boundaries (a norm thanks to the Dirichlet
  conditions),
* ``b_norm``   -- the energy norm <Bv, v>^{1/2} induced by a symmetric,
  strongly positive operator B.

Dual norms have no closed form in general; ``dual_norm_estimate`` reports a
certified lower bound obtained by normalized ascent from several starts, which
is all the growth checkers need in order to falsify a bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Grid",
    "TimeMesh",
    "Exponents",
    "pairing",
    "h_norm",
    "va_norm",
    "b_norm",
    "jumps",
    "VaNormProbe",
    "BNormProbe",
    "dual_norm_estimate",
    "embedding_constant",
    "sine_profile",
    "tent_profile",
]


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a uniform grid on (0, length), zero boundary values."""

    n: int
    length: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("grid needs at least one interior node")
        if not self.length > 0.0:
            raise ValueError("grid length must be positive")

    @property
    def h(self) -> float:
        return self.length / (self.n + 1)

    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)


@dataclass(frozen=True)
class TimeMesh:
    """Uniform time mesh on [0, final_time] with nodes t_k = k * tau."""

    steps: int
    final_time: float

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("time mesh needs at least one step")
        if not self.final_time > 0.0:
            raise ValueError("final time must be positive")

    @property
    def tau(self) -> float:
        return self.final_time / self.steps

    def nodes(self) -> np.ndarray:
        return self.tau * np.arange(self.steps + 1)


@dataclass(frozen=True)
class Exponents:
    """Conjugate exponent pair with 2 <= p < inf, q = p / (p - 1)."""

    p: float

    def __post_init__(self) -> None:
        if not (2.0 <= self.p < math.inf):
            raise ValueError("exponent p must satisfy 2 <= p < inf")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)


def pairing(g: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """Discrete duality pairing h * sum(g_i v_i); bilinear and symmetric."""
    return grid.h * float(np.dot(g, v))


def h_norm(v: np.ndarray, grid: Grid) -> float:
    """L2-type norm sqrt(h * sum v_i^2)."""
    return math.sqrt(grid.h * float(np.dot(v, v)))


def jumps(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Forward difference quotients (v_{i+1} - v_i)/h with Dirichlet ghosts.

    Returns n+1 values: the jump into the first node, the n-1 interior jumps,
    and the jump out of the last node.
    """
    padded = np.concatenate(([0.0], np.asarray(v, dtype=float), [0.0]))
    return np.diff(padded) / grid.h


def va_norm(v: np.ndarray, grid: Grid, p: float) -> float:
    """Gradient norm (h * sum_i |jump_i|^p)^(1/p), the W^{1,p}_0 analogue."""
    if p < 2.0:
        raise ValueError("va_norm requires p >= 2")
    d = np.abs(jumps(v, grid))
    return float((grid.h * np.sum(d**p)) ** (1.0 / p))


def b_norm(v: np.ndarray, b_op) -> float:
    """Energy norm <Bv, v>^{1/2} of a symmetric strongly positive operator.

    Rejects operators whose quadratic form turns negative beyond round-off,
    which signals a broken B rather than a property of v.
    """
    grid = b_op.grid
    quad = pairing(b_op.apply(v), v, grid)
    scale = max(1.0, grid.h * float(np.dot(v, v)))
    if quad < -1e-10 * scale:
        raise ValueError("operator quadratic form is negative; B is not positive")
    return math.sqrt(max(quad, 0.0))


class VaNormProbe:
    """va_norm together with its gradient, for use in ascent routines."""

    def __init__(self, grid: Grid, p: float):
        if p < 2.0:
            raise ValueError("probe requires p >= 2")
        self.grid = grid
        self.p = float(p)

    def value(self, v: np.ndarray) -> float:
        return va_norm(v, self.grid, self.p)

    def grad(self, v: np.ndarray) -> np.ndarray:
        # d/dv of (h sum |d_i|^p)^(1/p) = value^(1-p) * h * (-div |d|^{p-2} d)
        d = jumps(v, self.grid)
        flux = np.abs(d) ** (self.p - 2.0) * d
        stencil = -np.diff(flux) / self.grid.h
        val = self.value(v)
        if val == 0.0:
            return np.zeros(self.grid.n)
        return val ** (1.0 - self.p) * self.grid.h * stencil


class BNormProbe:
    """b_norm together with its gradient."""

    def __init__(self, b_op):
        self.b_op = b_op
        self.grid = b_op.grid

    def value(self, v: np.ndarray) -> float:
        return b_norm(v, self.b_op)

    def grad(self, v: np.ndarray) -> np.ndarray:
        val = self.value(v)
        if val == 0.0:
            return np.zeros(self.grid.n)
        return self.grid.h * self.b_op.apply(v) / val


NormSpec = Union[str, VaNormProbe, BNormProbe, Callable[[np.ndarray], float]]


def _norm_value_grad(norm: NormSpec, grid: Grid):
    if hasattr(norm, "value") and hasattr(norm, "grad"):
        return norm.value, norm.grad
    if not callable(norm):
        raise TypeError("norm must be 'h', a probe object, or a callable")

    def fd_grad(v: np.ndarray) -> np.ndarray:
        base = norm(v)
        eps = 1e-7 * max(1.0, h_norm(v, grid))
        g = np.empty(grid.n)
        for i in range(grid.n):
            probe = v.copy()
            probe[i] += eps
            g[i] = (norm(probe) - base) / eps
        return g

    return norm, fd_grad


def _ratio_ascent(
    numer_val,
    numer_grad,
    denom_val,
    denom_grad,
    starts: list[np.ndarray],
    grid: Grid,
    iters: int,
) -> float:
    """Hill-climb P(v)/N(v); every accepted move strictly improves the ratio,
    so the result is monotone in ``iters`` and always a valid lower bound."""
    best = 0.0
    for v0 in starts:
        nv0 = h_norm(v0, grid)
        if nv0 == 0.0:
            continue
        v = v0 / nv0
        denom = denom_val(v)
        if denom == 0.0:
            continue
        r = numer_val(v) / denom
        step = 1.0
        for _ in range(iters):
            num, den = numer_val(v), denom_val(v)
            grad = (numer_grad(v) * den - num * denom_grad(v)) / den**2
            gn = h_norm(grad, grid)
            if gn == 0.0:
                break
            cand = v + (step / gn) * grad
            den_c = denom_val(cand)
            r_c = numer_val(cand) / den_c if den_c > 0.0 else -math.inf
            if r_c > r:
                v = cand / h_norm(cand, grid)
                r = r_c
                step = min(step * 1.5, 1e3)
            else:
                step *= 0.5
                if step < 1e-14:
                    break
        best = max(best, r)
    return best


def dual_norm_estimate(
    g: np.ndarray,
    grid: Grid,
    norm: NormSpec,
    iters: int = 40,
    starts: int = 4,
    seed: int = 0,
) -> float:
    """Lower bound for the dual norm sup_{v != 0} pairing(g, v) / norm(v).

    For ``norm="h"`` the value is exact by self-duality of the discrete L2
    pairing.  Otherwise the supremum is approached by gradient ascent on the
    ratio from ``starts`` seeded random starts plus g itself; the estimate is
    monotone nondecreasing in ``iters`` and never exceeds the true dual norm.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    g = np.asarray(g, dtype=float)
    if norm == "h":
        return h_norm(g, grid)
    if not np.any(g):
        return 0.0
    nval, ngrad = _norm_value_grad(norm, grid)
    rng = np.random.default_rng(seed)
    start_list = [g.copy()] + [rng.standard_normal(grid.n) for _ in range(max(starts - 1, 0))]

    def numer(v: np.ndarray) -> float:
        return pairing(g, v, grid)

    def numer_grad(v: np.ndarray) -> np.ndarray:
        return grid.h * g

    return _ratio_ascent(numer, numer_grad, nval, ngrad, start_list, grid, iters)


def sine_profile(grid: Grid, mode: int = 1, amplitude: float = 1.0) -> np.ndarray:
    """sin(mode * pi * x / L) on the interior nodes (discrete Dirichlet eigenvector)."""
    return amplitude * np.sin(mode * math.pi * grid.nodes() / grid.length)


def tent_profile(grid: Grid) -> np.ndarray:
    """Piecewise-linear tent with unit peak at the middle of the domain."""
    x = grid.nodes()
    half = grid.length / 2.0
    return 1.0 - np.abs(x - half) / half


def embedding_constant(
    grid: Grid,
    p: float,
    samples: int = 24,
    iters: int = 60,
    seed: int = 0,
) -> float:
    """Discrete embedding constant: sup of h_norm(v) / va_norm(v, p).

    Computed as a sup over seeded random samples, the low sine modes, and the
    tent function, refined by ratio ascent.  Deterministic for a fixed seed and
    never above the true supremum.  For p = 2 the sup is attained at the first
    Dirichlet eigenvector (included among the starts), so the value is exact.
    """
    rng = np.random.default_rng(seed)
    starts = [sine_profile(grid, mode=k) for k in range(1, min(3, grid.n) + 1)]
    starts.append(tent_profile(grid))
    starts.extend(rng.standard_normal(grid.n) for _ in range(samples))
    probe = VaNormProbe(grid, p)

    def numer(v: np.ndarray) -> float:
        return h_norm(v, grid)

    def numer_grad(v: np.ndarray) -> np.ndarray:
        val = h_norm(v, grid)
        if val == 0.0:
            return np.zeros(grid.n)
        return grid.h * v / val

    return _ratio_ascent(numer, numer_grad, probe.value, probe.grad, starts, grid, iters)
