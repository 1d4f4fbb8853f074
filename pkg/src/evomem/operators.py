"""Concrete diffusion and coupling operators, plus assumption checkers.

The nonlinear part A is a discrete p-Laplacian (or any matrix / callable with
the same duck-typed ``apply``/``jacobian`` surface); the coupling B is a
symmetric positive-definite matrix, built as the Dirichlet Laplacian, its
spectral fractional power, or a scaled identity.

The checkers are falsifiers, not verifiers: they sample seeded states across
several magnitudes, fit the constants the energy estimates need (mu_a, c_a,
beta_a, mu_b, beta_b), and on failure return a reproducible witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spaces import Grid, VaNormProbe, dual_norm_estimate, h_norm, jumps, pairing, va_norm

__all__ = [
    "PLaplacian",
    "LinearOperatorA",
    "CustomOperatorA",
    "SignSwitchOperator",
    "negated_laplacian",
    "OperatorB",
    "laplacian_matrix",
    "laplacian_b",
    "fractional_laplacian_b",
    "identity_scaled_b",
    "asymmetric_b",
    "AssumptionReport",
    "check_monotone",
    "check_growth_a",
    "check_coercive_a",
    "check_b",
    "hemicontinuity_probe",
]


def laplacian_matrix(grid: Grid) -> np.ndarray:
    """Tridiagonal Dirichlet Laplacian, stencil (-1, 2, -1) / h^2."""
    n, h = grid.n, grid.h
    m = 2.0 * np.eye(n)
    if n > 1:
        off = -np.ones(n - 1)
        m += np.diag(off, 1) + np.diag(off, -1)
    return m / h**2


class PLaplacian:
    """Discrete p-Laplacian with Dirichlet ghosts.

    (Av)_i = -(phi(d_i) - phi(d_{i-1})) / h with d_i = (v_{i+1} - v_i)/h and
    phi(x) = |x|^{p-2} x.  For p = 2 this is exactly the Laplacian matrix.
    The Jacobian is the tridiagonal weighted stencil with weights
    phi'(d) = (p - 1) |d|^{p-2}.
    """

    def __init__(self, grid: Grid, p: float):
        if p < 2.0:
            raise ValueError("p-Laplacian requires p >= 2")
        self.grid = grid
        self.p = float(p)

    def apply(self, v: np.ndarray) -> np.ndarray:
        d = jumps(v, self.grid)
        flux = np.abs(d) ** (self.p - 2.0) * d
        return -np.diff(flux) / self.grid.h

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        d = jumps(v, self.grid)
        c = (self.p - 1.0) * np.abs(d) ** (self.p - 2.0)
        h2 = self.grid.h ** 2
        m = np.diag((c[:-1] + c[1:]) / h2)
        if self.grid.n > 1:
            off = -c[1:-1] / h2
            m += np.diag(off, 1) + np.diag(off, -1)
        return m


class LinearOperatorA:
    """A v = M v for a fixed matrix; monotone iff M is positive semidefinite."""

    def __init__(self, grid: Grid, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (grid.n, grid.n):
            raise ValueError("matrix shape must match the grid")
        self.grid = grid
        self.matrix = matrix

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        return self.matrix


class CustomOperatorA:
    """Wrap a callable; Jacobian by forward differences unless one is given."""

    def __init__(self, grid: Grid, fn: Callable[[np.ndarray], np.ndarray], jac=None):
        self.grid = grid
        self.fn = fn
        self.jac = jac

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(v), dtype=float)

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        if self.jac is not None:
            return np.asarray(self.jac(v), dtype=float)
        base = self.apply(v)
        eps = 1e-7 * max(1.0, float(np.max(np.abs(v))))
        cols = []
        for i in range(self.grid.n):
            probe = v.astype(float, copy=True)
            probe[i] += eps
            cols.append((self.apply(probe) - base) / eps)
        return np.column_stack(cols)


class SignSwitchOperator:
    """Built-in hemicontinuity counterexample: Laplacian plus a sign jump."""

    def __init__(self, grid: Grid, jump: float = 1.0):
        self.grid = grid
        self.jump = float(jump)
        self._lap = laplacian_matrix(grid)

    def apply(self, v: np.ndarray) -> np.ndarray:
        shift = self.jump if float(np.sum(v)) > 0.0 else -self.jump
        return self._lap @ v + shift * np.ones(self.grid.n)

    def jacobian(self, v: np.ndarray) -> np.ndarray:
        return self._lap


def negated_laplacian(grid: Grid) -> LinearOperatorA:
    """Built-in monotonicity counterexample."""
    return LinearOperatorA(grid, -laplacian_matrix(grid))


class OperatorB:
    """Symmetric strongly positive coupling operator in matrix form."""

    def __init__(self, grid: Grid, matrix: np.ndarray, kind: str = "custom"):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (grid.n, grid.n):
            raise ValueError("matrix shape must match the grid")
        self.grid = grid
        self.matrix = matrix
        self.kind = kind

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def laplacian_b(grid: Grid) -> OperatorB:
    return OperatorB(grid, laplacian_matrix(grid), kind="laplacian")


def fractional_laplacian_b(grid: Grid, s: float) -> OperatorB:
    """Spectral fractional Laplacian: same eigenvectors, eigenvalues to the s.

    The spectral definition keeps symmetry and strong positivity exactly,
    which is what the B-side assumptions require.
    """
    if not 0.5 < s < 1.0:
        raise ValueError("fractional exponent must lie in (1/2, 1)")
    vals, vecs = np.linalg.eigh(laplacian_matrix(grid))
    m = (vecs * vals**s) @ vecs.T
    return OperatorB(grid, 0.5 * (m + m.T), kind=f"fractional_laplacian(s={s})")


def identity_scaled_b(grid: Grid, scale: float) -> OperatorB:
    if not scale > 0.0:
        raise ValueError("identity scale must be positive")
    return OperatorB(grid, scale * np.eye(grid.n), kind=f"identity_scaled({scale})")


def asymmetric_b(grid: Grid, bump: float = 1e-3) -> OperatorB:
    """Built-in symmetry counterexample: Laplacian with a one-sided bump."""
    m = laplacian_matrix(grid).copy()
    if grid.n > 1:
        m[0, -1] += bump
    else:
        # n = 1 admits no asymmetry; fall back to a negative diagonal instead
        m[0, 0] = -abs(bump)
    return OperatorB(grid, m, kind="asymmetric")


@dataclass
class AssumptionReport:
    """Verdict of one sampled checker run.

    Failed reports always carry a witness that can be regenerated from the
    seed; fitted constants are the ones the a priori estimates consume.
    """

    name: str
    passed: bool
    constants: dict = field(default_factory=dict)
    witness: dict | None = None
    seed: int | None = None

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "passed": bool(self.passed),
            "constants": {k: float(v) for k, v in self.constants.items()},
            "seed": self.seed,
        }
        if self.witness is not None:
            out["witness"] = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.witness.items()
            }
        return out


_MAGNITUDES = np.logspace(-2.0, 2.0, 9)


def _unit_sample(rng: np.random.Generator, grid: Grid) -> np.ndarray:
    v = rng.standard_normal(grid.n)
    nv = h_norm(v, grid)
    return v / nv if nv > 0.0 else np.ones(grid.n) / h_norm(np.ones(grid.n), grid)


def check_monotone(op_a, seeds: int = 16, seed: int = 0, tol: float = 1e-10) -> AssumptionReport:
    """Sample pairs (u, v) and test pairing(Au - Av, u - v) >= -tol."""
    if seeds < 1:
        raise ValueError("seeds must be at least 1")
    grid = op_a.grid
    rng = np.random.default_rng(seed)
    worst = math.inf
    witness = None
    for k in range(seeds):
        for mag in _MAGNITUDES[::2]:
            u = mag * _unit_sample(rng, grid)
            v = mag * _unit_sample(rng, grid)
            gap = pairing(op_a.apply(u) - op_a.apply(v), u - v, grid)
            floor = -tol * max(1.0, h_norm(u - v, grid) ** 2)
            if gap < worst:
                worst = gap
            if gap < floor and witness is None:
                witness = {"u": u, "v": v, "pairing": gap, "sample": k, "magnitude": float(mag)}
    return AssumptionReport(
        name="monotone",
        passed=witness is None,
        constants={"min_pairing": worst},
        witness=witness,
        seed=seed,
    )


def check_growth_a(op_a, p: float, seeds: int = 8, seed: int = 0, dual_iters: int = 30) -> AssumptionReport:
    """Fit the smallest growth constant beta_a with
    dual_norm(Av) <= beta_a (1 + va_norm(v)^{p-1}) across magnitudes.

    Fails when the fitted ratio keeps growing with the sample magnitude (the
    bound admits no finite beta_a) or turns non-finite.
    """
    if seeds < 1:
        raise ValueError("seeds must be at least 1")
    grid = op_a.grid
    rng = np.random.default_rng(seed)
    probe = VaNormProbe(grid, p)
    per_mag: dict[float, float] = {float(m): 0.0 for m in _MAGNITUDES}
    witness = None
    beta = 0.0
    for k in range(seeds):
        u = _unit_sample(rng, grid)
        for m in _MAGNITUDES:
            v = m * u
            image = op_a.apply(v)
            num = dual_norm_estimate(image, grid, probe, iters=dual_iters, seed=seed + 7 * k)
            den = 1.0 + va_norm(v, grid, p) ** (p - 1.0)
            ratio = num / den
            if not math.isfinite(ratio):
                witness = {"v": v, "magnitude": float(m), "ratio": ratio, "sample": k}
                per_mag[float(m)] = math.inf
                continue
            per_mag[float(m)] = max(per_mag[float(m)], ratio)
            if ratio > beta:
                beta = ratio
    top = per_mag[float(_MAGNITUDES[-1])]
    mid = per_mag[float(_MAGNITUDES[-3])]
    stable = math.isfinite(top) and top <= 3.0 * max(mid, 1e-300)
    if not stable and witness is None:
        witness = {"top_ratio": top, "mid_ratio": mid, "magnitude": float(_MAGNITUDES[-1])}
    return AssumptionReport(
        name="growth_a",
        passed=witness is None,
        constants={"beta_a": beta},
        witness=witness,
        seed=seed,
    )


def check_coercive_a(op_a, p: float, seeds: int = 8, seed: int = 0) -> AssumptionReport:
    """Fit (mu_a, c_a) with pairing(Av, v) >= mu_a va_norm(v)^p - c_a.

    The candidate c_a = 0 is tried first: if the sampled ratio
    pairing(Av, v) / va_norm^p stays positive everywhere, mu_a is its minimum
    and c_a = 0.  Otherwise mu_a comes from the large-magnitude tier (where
    the -c_a offset is negligible) and c_a is fitted to cover the rest;
    coercivity fails when even the large-magnitude ratio collapses.
    """
    if seeds < 1:
        raise ValueError("seeds must be at least 1")
    grid = op_a.grid
    rng = np.random.default_rng(seed)
    records = []
    for k in range(seeds):
        u = _unit_sample(rng, grid)
        for m in _MAGNITUDES:
            v = m * u
            x = va_norm(v, grid, p) ** p
            if x <= 1e-14:
                continue
            y = pairing(op_a.apply(v), v, grid)
            records.append((float(m), x, y, v))
    top_mag = float(_MAGNITUDES[-1])
    top = [(x, y, v) for m, x, y, v in records if m == top_mag]
    mu_top = min(y / x for x, y, v in top)
    if mu_top <= 1e-8:
        x, y, v = min(top, key=lambda r: r[1] / r[0])
        witness = {"v": v, "pairing": y, "va_power": x, "ratio": y / x}
        return AssumptionReport("coercive_a", False, {"mu_a": mu_top}, witness, seed)
    mu_all = min(y / x for _, x, y, _ in records)
    if mu_all > 1e-8:
        mu_a, c_a = mu_all, 0.0
    else:
        mu_a = 0.5 * mu_top
        c_a = max(0.0, max(mu_a * x - y for _, x, y, _ in records))
    return AssumptionReport("coercive_a", True, {"mu_a": mu_a, "c_a": c_a}, None, seed)


def _inverse_iteration(m: np.ndarray, rng: np.random.Generator, max_iter: int = 500) -> float:
    x = rng.standard_normal(m.shape[0])
    x /= np.linalg.norm(x)
    ray = float(x @ m @ x)
    for _ in range(max_iter):
        x = np.linalg.solve(m, x)
        x /= np.linalg.norm(x)
        new = float(x @ m @ x)
        if abs(new - ray) <= 1e-13 * max(1.0, abs(new)):
            return new
        ray = new
    return ray


def _power_iteration(m: np.ndarray, rng: np.random.Generator, max_iter: int = 500) -> float:
    x = rng.standard_normal(m.shape[0])
    x /= np.linalg.norm(x)
    ray = float(x @ m @ x)
    for _ in range(max_iter):
        x = m @ x
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
        new = float(x @ m @ x)
        if abs(new - ray) <= 1e-13 * max(1.0, abs(new)):
            return new
        ray = new
    return ray


def check_b(op_b: OperatorB, seed: int = 0) -> AssumptionReport:
    """Exact symmetry check plus extreme eigenvalues by inverse/power iteration.

    mu_b and beta_b are eigenvalues of the coupling matrix, i.e. the strong
    positivity and boundedness constants measured against the L2-type norm.
    """
    m = op_b.matrix
    gap = np.abs(m - m.T)
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    if gap[i, j] > 1e-12:
        witness = {"i": int(i), "j": int(j), "b_ij": float(m[i, j]), "b_ji": float(m[j, i])}
        return AssumptionReport("operator_b", False, {"max_asymmetry": float(gap[i, j])}, witness, seed)
    rng = np.random.default_rng(seed)
    mu_b = _inverse_iteration(m, rng)
    beta_b = _power_iteration(m, rng)
    # inverse iteration finds the smallest |eigenvalue|; random Rayleigh
    # probes catch indefinite matrices it would miss
    probes = min(
        float(x @ m @ x) / float(x @ x)
        for x in (rng.standard_normal(m.shape[0]) for _ in range(16))
    )
    passed = mu_b > 0.0 and probes > 0.0
    witness = None if passed else {"rayleigh_min": float(min(mu_b, probes))}
    return AssumptionReport("operator_b", passed, {"mu_b": mu_b, "beta_b": beta_b}, witness, seed)


def hemicontinuity_probe(op_a, u: np.ndarray, v: np.ndarray, w: np.ndarray, m: int) -> float:
    """Largest adjacent difference of theta -> pairing(A(u + theta v), w).

    Sampled on m uniform points of [0, 1]; smooth operators give O(1/m),
    a built-in jump does not decay with m.
    """
    if m < 2:
        raise ValueError("probe needs at least two sample points")
    grid = op_a.grid
    thetas = np.linspace(0.0, 1.0, m)
    vals = np.array([pairing(op_a.apply(u + t * v), w, grid) for t in thetas])
    return float(np.max(np.abs(np.diff(vals))))
