"""Exponentially fading memory.

The memory operator maps a trajectory v to u0 + integral of
rate * exp(-rate * (t - s)) * v(s).  Everything here works with the shifted
memory state w(t) = (memory of v)(t) - u0, which starts at w(0) = 0 exactly
and obeys the local ODE w' = rate * (v - w).  For piecewise-constant-in-time
v the one-step variation-of-constants update is exact, which makes the O(N)
recurrence and the O(N^2) direct convolution algebraically identical - an
oracle pair the test suite leans on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spaces import Grid, TimeMesh, h_norm

__all__ = [
    "MemoryParams",
    "kernel_eval",
    "l1_kernel_norm",
    "memory_step",
    "apply_k_direct",
    "check_relation5",
    "LemmaBoundsReport",
    "verify_lemma_bounds",
]


@dataclass(frozen=True)
class MemoryParams:
    """Decay rate (1/time), initial memory datum, and time horizon."""

    rate: float
    u0: np.ndarray
    final_time: float

    def __post_init__(self) -> None:
        if not self.rate > 0.0:
            raise ValueError("memory decay rate must be positive")
        if not self.final_time > 0.0:
            raise ValueError("final time must be positive")
        if not np.all(np.isfinite(self.u0)):
            raise ValueError("initial memory datum must be finite")


def kernel_eval(z, rate: float):
    """Kernel value rate * exp(-rate * z); positive and decreasing in z >= 0."""
    if not rate > 0.0:
        raise ValueError("rate must be positive")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise ValueError("kernel argument must be nonnegative")
    out = rate * np.exp(-rate * z)
    return float(out) if out.ndim == 0 else out


def l1_kernel_norm(rate: float, final_time: float) -> float:
    """Integral of the kernel over (0, T): 1 - exp(-rate * T), always in (0, 1)."""
    if not (rate > 0.0 and final_time > 0.0):
        raise ValueError("rate and final_time must be positive")
    return float(-np.expm1(-rate * final_time))


def memory_step(w: np.ndarray, v: np.ndarray, rate: float, tau: float) -> np.ndarray:
    """One exact step of w' = rate * (v - w) with v frozen over the step.

    Returns exp(-rate*tau) * w + (1 - exp(-rate*tau)) * v, a convex
    combination, so the memory never overshoots either input.
    """
    if not tau > 0.0:
        raise ValueError("step size must be positive")
    decay = math.exp(-rate * tau)
    return decay * w + (-math.expm1(-rate * tau)) * v


def apply_k_direct(vtraj: np.ndarray, mp: MemoryParams, mesh: TimeMesh) -> np.ndarray:
    """Direct O(N^2) convolution of the piecewise-constant (left) interpolant.

    ``vtraj`` holds one state per mesh node, shape (N+1, n).  Returns the
    memory states w_k = sum_{j<k} (e^{-rate(t_k - t_{j+1})} - e^{-rate(t_k - t_j)}) v_j
    with w_0 = 0; only the left node values v_0 .. v_{N-1} enter.
    """
    v = np.atleast_2d(np.asarray(vtraj, dtype=float))
    if v.shape[0] != mesh.steps + 1:
        raise ValueError("trajectory must hold one state per mesh node")
    t = mesh.nodes()
    w = np.zeros_like(v)
    for k in range(1, mesh.steps + 1):
        weights = np.exp(-mp.rate * (t[k] - t[1 : k + 1])) - np.exp(-mp.rate * (t[k] - t[:k]))
        w[k] = weights @ v[:k]
    return w


def check_relation5(
    vtraj: np.ndarray,
    wtraj: np.ndarray,
    mp: MemoryParams,
    mesh: TimeMesh,
    grid: Grid,
) -> float:
    """Max interior-node residual of the memory ODE, by centered differences.

    Measures h_norm of (w_{k+1} - w_{k-1})/(2 tau) - rate * (v_k - w_k) over
    the interior time nodes.  On smooth memory states the centered probe is
    second order, so genuine identity violations stand out above the
    discretization floor.
    """
    v = np.atleast_2d(np.asarray(vtraj, dtype=float))
    w = np.atleast_2d(np.asarray(wtraj, dtype=float))
    if v.shape != w.shape or v.shape[0] != mesh.steps + 1:
        raise ValueError("trajectories must be aligned on the mesh")
    tau = mesh.tau
    worst = 0.0
    for k in range(1, mesh.steps):
        dw = (w[k + 1] - w[k - 1]) / (2.0 * tau)
        res = dw - mp.rate * (v[k] - w[k])
        worst = max(worst, h_norm(res, grid))
    return worst


@dataclass(frozen=True)
class LemmaBoundsReport:
    """Both memory bounds on one trajectory, with their slacks."""

    l2_lhs: float
    l2_rhs: float
    sup_lhs: float
    sup_rhs: float

    @property
    def slack_l2(self) -> float:
        return self.l2_rhs - self.l2_lhs

    @property
    def slack_sup(self) -> float:
        return self.sup_rhs - self.sup_lhs

    @property
    def l2_ok(self) -> bool:
        return self.slack_l2 >= -1e-10 * max(1.0, self.l2_rhs)

    @property
    def c_ok(self) -> bool:
        return self.slack_sup >= -1e-10 * max(1.0, self.sup_rhs)

    @property
    def passed(self) -> bool:
        return self.l2_ok and self.c_ok


def verify_lemma_bounds(vtraj: np.ndarray, mp: MemoryParams, mesh: TimeMesh, grid: Grid) -> LemmaBoundsReport:
    """Check the two norm bounds of the memory operator on a trajectory.

    L2 in time:   ||w||_{L2} <= (1 - e^{-rate*T}) ||v||_{L2}
    uniform:      max_k ||w_k|| <= rate * ||v||_{L1}

    Time integrals use left rectangles, consistent with the left interpolant
    inside the convolution; with that convention both inequalities hold
    exactly (discrete Young), so any negative slack indicates a bug.
    """
    v = np.atleast_2d(np.asarray(vtraj, dtype=float))
    w = apply_k_direct(v, mp, mesh)
    tau = mesh.tau
    v_h = np.array([h_norm(row, grid) for row in v])
    w_h = np.array([h_norm(row, grid) for row in w])
    l2_lhs = math.sqrt(tau * float(np.sum(w_h[:-1] ** 2)))
    l2_rhs = l1_kernel_norm(mp.rate, mesh.final_time) * math.sqrt(tau * float(np.sum(v_h[:-1] ** 2)))
    sup_lhs = float(np.max(w_h))
    sup_rhs = mp.rate * tau * float(np.sum(v_h[:-1]))
    return LemmaBoundsReport(l2_lhs=l2_lhs, l2_rhs=l2_rhs, sup_lhs=sup_lhs, sup_rhs=sup_rhs)
