"""Machine verification of the analytic backbone on computed trajectories.

Three layers:

* ``energy_ledger`` evaluates the discrete energy identity obtained by
  testing the scheme with v_{k+1}, term by term, and the coercivity
  inequality that starts the a priori chain.
* ``gronwall_constants`` tracks the chain's constants explicitly (Young
  constant, embedding constant, the 2^{q-1} splittings) down to the final
  bounds M1, M2, M3.  Nothing generic is left: every factor is computed.
* ``verify_apriori`` replays the bounds against a trajectory and reports
  margins.  The bounds are conservative by design; a violation falsifies
  either a fitted constant or the solver.

Discrete time integrals use left rectangles throughout, consistent with the
solver's piecewise-constant forcing convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .operators import (
    AssumptionReport,
    check_b,
    check_coercive_a,
    check_growth_a,
    check_monotone,
)
from .setvalued import GrowthEnvelope, check_growth_f
from .solver import ProblemData, Trajectory, marching_solve, solve_single_valued
from .spaces import TimeMesh, b_norm, embedding_constant, h_norm, pairing, va_norm

__all__ = [
    "EnergyLedger",
    "energy_ledger",
    "OperatorFit",
    "fit_problem_constants",
    "InvalidConstantsError",
    "AprioriConstants",
    "gronwall_constants",
    "AprioriReport",
    "verify_apriori",
    "ConvergenceStudy",
    "convergence_study",
]


@dataclass
class EnergyLedger:
    """Per-node terms of the discrete energy identity and inequality.

    ``identity_slack`` compares the tested-scheme left side against the
    continuous-form right side (memory terms weighted by 1/(2 rate)); it
    decays like O(tau) on smooth runs.  ``inequality_slack`` uses the exact
    discrete memory weight kappa = tau / (1 - e^{-rate tau}) together with
    the memory-increment compensation, so its sign is a machine-checkable
    certificate: up to Newton residuals it equals the (nonnegative) kinetic
    dissipation plus the coercivity gap.
    """

    times: np.ndarray
    kinetic: np.ndarray
    memory_energy: np.ndarray
    coercivity_cum: np.ndarray
    memory_dissipation_cum: np.ndarray
    forcing_cum: np.ndarray
    u0_coupling_cum: np.ndarray
    identity_lhs: np.ndarray
    identity_slack: np.ndarray
    inequality_slack: np.ndarray

    def max_identity_slack(self) -> float:
        return float(np.max(np.abs(self.identity_slack)))

    def min_inequality_slack(self) -> float:
        return float(np.min(self.inequality_slack))

    def summary(self) -> dict:
        return {
            "max_identity_slack": self.max_identity_slack(),
            "min_inequality_slack": self.min_inequality_slack(),
            "final_kinetic": float(self.kinetic[-1]),
            "final_memory_energy": float(self.memory_energy[-1]),
            "final_coercivity": float(self.coercivity_cum[-1]),
            "final_forcing": float(self.forcing_cum[-1]),
        }


def energy_ledger(traj: Trajectory, data: ProblemData, mu_a: float = 1.0, c_a: float = 0.0) -> EnergyLedger:
    """Evaluate the discrete energy identity and coercivity inequality.

    Identity left side, cumulative over steps m < k:
        pairing(v_{m+1} - v_m, v_{m+1}) + tau * pairing(B W_m, v_{m+1}),
    with W = w + u0.  Right side (continuous form): kinetic difference,
    memory energy (1/(2 rate)) ||W||_B^2 difference, memory dissipation,
    u0 coupling, all by left rectangles; forcing pairs f_m with the test
    vector v_{m+1}.
    """
    grid, mesh = data.grid, data.mesh
    steps, tau = mesh.steps, mesh.tau
    p = data.exps.p
    rate = data.rate
    kappa = tau / (-math.expm1(-rate * tau))

    W = traj.w + data.u0
    BW = W @ data.op_b.matrix.T

    def bq(k: int) -> float:
        return pairing(BW[k], W[k], grid)

    kinetic = np.array([0.5 * h_norm(traj.v[k], grid) ** 2 for k in range(steps + 1)])
    memory_energy = np.array([bq(k) / (2.0 * rate) for k in range(steps + 1)])

    coercivity_cum = np.zeros(steps + 1)
    memory_dissipation_cum = np.zeros(steps + 1)
    forcing_cum = np.zeros(steps + 1)
    u0_coupling_cum = np.zeros(steps + 1)
    identity_lhs = np.zeros(steps + 1)
    dv_dissipation = np.zeros(steps + 1)
    dW_compensation = np.zeros(steps + 1)

    for m in range(steps):
        v_new = traj.v[m + 1]
        coercivity_cum[m + 1] = coercivity_cum[m] + mu_a * tau * va_norm(v_new, grid, p) ** p
        memory_dissipation_cum[m + 1] = memory_dissipation_cum[m] + tau * bq(m)
        forcing_cum[m + 1] = forcing_cum[m] + tau * pairing(traj.f[m], v_new, grid)
        u0_coupling_cum[m + 1] = u0_coupling_cum[m] + tau * pairing(BW[m], data.u0, grid)
        identity_lhs[m + 1] = (
            identity_lhs[m]
            + pairing(v_new - traj.v[m], v_new, grid)
            + tau * pairing(BW[m], v_new, grid)
        )
        dv_dissipation[m + 1] = dv_dissipation[m] + 0.5 * h_norm(v_new - traj.v[m], grid) ** 2
        dW = W[m + 1] - W[m]
        dW_compensation[m + 1] = dW_compensation[m] + 0.5 * kappa * pairing(
            data.op_b.apply(dW), dW, grid
        )

    identity_rhs = (
        kinetic
        - kinetic[0]
        + memory_energy
        - memory_energy[0]
        - u0_coupling_cum
        + memory_dissipation_cum
    )
    identity_slack = identity_lhs - identity_rhs

    times = mesh.nodes()
    mem_kappa = (rate * kappa) * memory_energy  # kappa/2 * ||W||_B^2
    inequality_lhs = kinetic + coercivity_cum + mem_kappa + memory_dissipation_cum
    inequality_rhs = (
        kinetic[0]
        + c_a * times
        + mem_kappa[0]
        + dW_compensation
        + forcing_cum
        + u0_coupling_cum
    )
    inequality_slack = inequality_rhs - inequality_lhs

    return EnergyLedger(
        times=times,
        kinetic=kinetic,
        memory_energy=memory_energy,
        coercivity_cum=coercivity_cum,
        memory_dissipation_cum=memory_dissipation_cum,
        forcing_cum=forcing_cum,
        u0_coupling_cum=u0_coupling_cum,
        identity_lhs=identity_lhs,
        identity_slack=identity_slack,
        inequality_slack=inequality_slack,
    )


class InvalidConstantsError(ValueError):
    """The fitted constants cannot support the a priori chain."""


@dataclass(frozen=True)
class OperatorFit:
    """Constants the checkers fitted, plus the embedding constant."""

    mu_a: float
    c_a: float
    beta_a: float
    beta_b: float
    mu_b: float
    c_e: float


def fit_problem_constants(
    data: ProblemData,
    env: GrowthEnvelope,
    seed: int = 0,
    samples: int = 8,
) -> tuple[OperatorFit, list[AssumptionReport]]:
    """Run every checker and assemble the fitted constants.

    Raises InvalidConstantsError when any check fails; the failing reports
    are attached to the exception for display.
    """
    p = data.exps.p
    reports = [
        check_monotone(data.op_a, seeds=samples, seed=seed),
        check_growth_a(data.op_a, p, seeds=samples, seed=seed),
        check_coercive_a(data.op_a, p, seeds=samples, seed=seed),
        check_b(data.op_b, seed=seed),
        check_growth_f(data.field, env, data.mesh, data.grid, samples=samples, seed=seed),
    ]
    failed = [r for r in reports if not r.passed]
    if failed:
        exc = InvalidConstantsError(
            "checks failed: " + ", ".join(r.name for r in failed)
        )
        exc.reports = reports
        raise exc
    by_name = {r.name: r for r in reports}
    fit = OperatorFit(
        mu_a=by_name["coercive_a"].constants["mu_a"],
        c_a=by_name["coercive_a"].constants["c_a"],
        beta_a=by_name["growth_a"].constants["beta_a"],
        beta_b=by_name["operator_b"].constants["beta_b"],
        mu_b=by_name["operator_b"].constants["mu_b"],
        c_e=embedding_constant(data.grid, p, seed=seed),
    )
    return fit, reports


@dataclass(frozen=True)
class AprioriConstants:
    """The explicit constant chain behind the a priori bounds.

    c_y is the Young constant for a b <= (mu_a/2) a^p + c_y b^q; r0 collects
    the data terms; c1 is the Gronwall kernel coefficient; m1 bounds
    max ||v||_H^2; m2_pform bounds the accumulated p-th power of the gradient
    norm, m2 its square form (by Hoelder interpolation in time), m2_bform the
    squared memory energy norm; m3 bounds the derivative in the dual-space
    sense.
    """

    mu_a: float
    c_a: float
    beta_a: float
    beta_b: float
    mu_b: float
    c_e: float
    c_y: float
    r0: float
    c1: float
    m1: float
    m2: float
    m2_pform: float
    m2_bform: float
    m3: float

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def gronwall_constants(data: ProblemData, env: GrowthEnvelope, fit: OperatorFit) -> AprioriConstants:
    """Track the a priori chain with every constant explicit.

    Chain: test the equation with v, use coercivity and the two Young
    splittings, bound the forcing through the embedding constant and the
    growth envelope with the 2^{q-1} power splitting, then apply the
    integral-form Gronwall lemma:

        c_y = (p mu_a / 2)^(-q/p) / q
        r0  = c_a T + 1/2 ||v0||_H^2 + (1/(2 rate) + T/2) ||u0||_B^2
              + c_y c_e^q 2^(q-1) * sum tau a(t_k)^q
        c1  = c_y c_e^q 2^(q-1) b^q
        m1  = 2 r0 exp(2 c1 T)
        m2_pform = (2/mu_a) (r0 + c1 T m1),   m2 = T^(1-2/p) m2_pform^(2/p)
        m2_bform = 2 rate (r0 + c1 T m1)
        m3  = max(growth-of-A term at the m2 budget plus the envelope term,
                  beta_b (sqrt(m2_bform) + ||u0||_B))
    """
    if not fit.mu_a > 0.0:
        raise InvalidConstantsError("coercivity constant mu_a must be positive")
    if not env.b > 0.0:
        raise InvalidConstantsError("envelope slope b must be positive")
    p, q = data.exps.p, data.exps.q
    T = data.mesh.final_time
    tau = data.mesh.tau
    rate = data.rate

    c_y = (p * fit.mu_a / 2.0) ** (-q / p) / q
    u0_b = b_norm(data.u0, data.op_b)
    a_vals = env.a_values(data.mesh)[:-1]
    a_q_int = tau * float(np.sum(a_vals**q))
    split = c_y * fit.c_e**q * 2.0 ** (q - 1.0)
    r0 = (
        fit.c_a * T
        + 0.5 * h_norm(data.v0, data.grid) ** 2
        + (1.0 / (2.0 * rate) + T / 2.0) * u0_b**2
        + split * a_q_int
    )
    c1 = split * env.b**q
    m1 = 2.0 * r0 * math.exp(2.0 * c1 * T)
    budget = r0 + c1 * T * m1
    m2_pform = (2.0 / fit.mu_a) * budget
    m2 = T ** (1.0 - 2.0 / p) * m2_pform ** (2.0 / p)
    m2_bform = 2.0 * rate * budget
    a_norm_q = a_q_int ** (1.0 / q)
    growth_term = fit.beta_a * 2.0 ** (1.0 / p) * (T + m2_pform) ** (1.0 / q)
    envelope_term = fit.c_e * (a_norm_q + env.b * (T * m1) ** (1.0 / q))
    m3 = max(growth_term + envelope_term, fit.beta_b * (math.sqrt(m2_bform) + u0_b))
    return AprioriConstants(
        mu_a=fit.mu_a,
        c_a=fit.c_a,
        beta_a=fit.beta_a,
        beta_b=fit.beta_b,
        mu_b=fit.mu_b,
        c_e=fit.c_e,
        c_y=c_y,
        r0=r0,
        c1=c1,
        m1=m1,
        m2=m2,
        m2_pform=m2_pform,
        m2_bform=m2_bform,
        m3=m3,
    )


@dataclass(frozen=True)
class AprioriReport:
    """Margins of the three a priori bounds on one trajectory."""

    h_value: float
    h_bound: float
    va_sq_value: float
    va_sq_bound: float
    va_p_value: float
    va_p_bound: float
    memory_value: float
    memory_bound: float

    @property
    def margins(self) -> dict:
        return {
            "h": self.h_bound - self.h_value,
            "va_sq": self.va_sq_bound - self.va_sq_value,
            "va_p": self.va_p_bound - self.va_p_value,
            "memory": self.memory_bound - self.memory_value,
        }

    @property
    def passed(self) -> bool:
        return all(m >= 0.0 for m in self.margins.values())

    def first_violation(self) -> str | None:
        for name, margin in self.margins.items():
            if margin < 0.0:
                return name
        return None

    def as_dict(self) -> dict:
        out = {
            "h": {"value": self.h_value, "bound": self.h_bound},
            "va_sq": {"value": self.va_sq_value, "bound": self.va_sq_bound},
            "va_p": {"value": self.va_p_value, "bound": self.va_p_bound},
            "memory": {"value": self.memory_value, "bound": self.memory_bound},
        }
        for name, margin in self.margins.items():
            out[name]["margin"] = margin
        out["passed"] = self.passed
        return out


def verify_apriori(traj: Trajectory, consts: AprioriConstants, data: ProblemData) -> AprioriReport:
    """Replay the a priori bounds on a computed trajectory.

    Checks max ||v_k||_H^2 <= m1, the accumulated gradient norms (square form
    against m2 and p-power form against m2_pform, left rectangles), and
    max ||w_k + u0||_B^2 <= m2_bform.
    """
    grid, mesh = data.grid, data.mesh
    p = data.exps.p
    tau = mesh.tau
    h_sq = np.array([h_norm(v, grid) ** 2 for v in traj.v])
    va_vals = np.array([va_norm(v, grid, p) for v in traj.v[:-1]])
    mem_sq = np.array([b_norm(w + data.u0, data.op_b) ** 2 for w in traj.w])
    return AprioriReport(
        h_value=float(np.max(h_sq)),
        h_bound=consts.m1,
        va_sq_value=tau * float(np.sum(va_vals**2)),
        va_sq_bound=consts.m2,
        va_p_value=tau * float(np.sum(va_vals**p)),
        va_p_bound=consts.m2_pform,
        memory_value=float(np.max(mem_sq)),
        memory_bound=consts.m2_bform,
    )


@dataclass
class ConvergenceStudy:
    taus: list[float]
    errors: list[float]
    orders: list[float]


def convergence_study(
    data: ProblemData,
    taus: list[float],
    forcing: Callable[[float], np.ndarray] | None = None,
    rule=None,
    reference: Callable[[float], np.ndarray] | None = None,
    tol_newton: float = 1e-12,
    refine: int = 64,
) -> ConvergenceStudy:
    """Observed convergence orders over a strictly decreasing tau list.

    Each tau must divide the final time.  The run uses the sampled ``forcing``
    when given, otherwise the selection ``rule`` on the problem's field.  The
    reference is either an analytic trajectory callable or, when omitted, a
    self-reference run at the finest tau divided by ``refine`` (the coarser
    step counts must divide that of the reference, e.g. a halving sequence).
    Errors are max-node h_norm distances; orders are the successive
    log(error ratio) / log(tau ratio).
    """
    if len(taus) < 3:
        raise ValueError("a convergence study needs at least three step sizes")
    if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    T = data.mesh.final_time

    def steps_for(tau: float) -> int:
        steps = round(T / tau)
        if not math.isclose(steps * tau, T, rel_tol=1e-9):
            raise ValueError(f"step size {tau} does not divide the final time {T}")
        return steps

    def run(steps: int) -> Trajectory:
        run_data = replace(data, mesh=TimeMesh(steps=steps, final_time=T))
        if forcing is not None:
            t = run_data.mesh.nodes()
            ftraj = np.array([forcing(tk) for tk in t[:-1]])
            return solve_single_valued(ftraj, run_data, tol_newton=tol_newton)
        if rule is None:
            raise ValueError("need either a forcing or a selection rule")
        return marching_solve(run_data, rule, tol_newton=tol_newton)

    step_counts = [steps_for(t) for t in taus]
    trajectories = [run(s) for s in step_counts]

    if reference is not None:
        def error(steps: int, traj: Trajectory) -> float:
            t = TimeMesh(steps=steps, final_time=T).nodes()
            return max(
                h_norm(traj.v[k] - reference(t[k]), data.grid) for k in range(steps + 1)
            )
    else:
        steps_ref = refine * max(step_counts)
        for s in step_counts:
            if steps_ref % s != 0:
                raise ValueError("coarse step counts must divide the reference count")
        traj_ref = run(steps_ref)

        def error(steps: int, traj: Trajectory) -> float:
            stride = steps_ref // steps
            return max(
                h_norm(traj.v[k] - traj_ref.v[k * stride], data.grid)
                for k in range(steps + 1)
            )

    errors = [error(s, tr) for s, tr in zip(step_counts, trajectories)]
    orders = [
        math.log(e1 / e2) / math.log(t1 / t2)
        for (e1, e2, t1, t2) in zip(errors, errors[1:], taus, taus[1:])
    ]
    return ConvergenceStudy(taus=list(taus), errors=errors, orders=orders)
