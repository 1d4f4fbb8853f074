"""Energy ledger, Gronwall constants, a priori bounds, convergence study."""

import math
from dataclasses import replace

import numpy as np
import pytest

from evomem import (
    BallField,
    Exponents,
    Grid,
    GrowthEnvelope,
    LinearOperatorA,
    MinimalNorm,
    PLaplacian,
    ProblemData,
    SingletonField,
    TimeMesh,
    energy_ledger,
    fit_problem_constants,
    gronwall_constants,
    fractional_laplacian_b,
    h_norm,
    identity_scaled_b,
    laplacian_b,
    marching_solve,
    sine_profile,
    solve_single_valued,
    verify_apriori,
)
from evomem.diagnostics import InvalidConstantsError, OperatorFit, convergence_study

from conftest import scalar_analytic_problem, scalar_exact


def test_ledger_zero_trajectory_all_zero():
    g = Grid(n=3, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=8, final_time=1.0),
        rate=1.0,
        u0=np.zeros(3),
        v0=np.zeros(3),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: np.zeros(3)),
        exps=Exponents(2.0),
    )
    traj = solve_single_valued(np.zeros((8, 3)), data)
    ledger = energy_ledger(traj, data)
    for arr in (ledger.kinetic, ledger.identity_slack, ledger.inequality_slack,
                ledger.forcing_cum, ledger.coercivity_cum):
        assert not np.any(arr)


def test_ledger_identity_slack_first_order():
    taus = [1e-2, 5e-3, 2.5e-3]
    slacks = []
    for tau in taus:
        steps = round(1.0 / tau)
        data = scalar_analytic_problem(steps)
        traj = solve_single_valued(np.zeros((steps, 1)), data)
        ledger = energy_ledger(traj, data, mu_a=0.5, c_a=0.0)
        slacks.append(ledger.max_identity_slack())
    orders = [
        math.log(a / b) / math.log(t1 / t2)
        for a, b, t1, t2 in zip(slacks, slacks[1:], taus, taus[1:])
    ]
    assert all(o >= 0.9 for o in orders)


@pytest.mark.parametrize("seed", range(25))
def test_ledger_inequality_nonnegative_on_random_certified_runs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    steps = int(rng.integers(16, 64))
    g = Grid(n=n, length=1.0)
    p = float(rng.choice([2.0, 3.0]))
    gamma = float(rng.uniform(0.0, 0.5))
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=steps, final_time=float(rng.uniform(0.3, 1.5))),
        rate=float(rng.uniform(0.1, 10.0)),
        u0=rng.standard_normal(n) * 0.3,
        v0=rng.standard_normal(n),
        op_a=PLaplacian(g, p),
        op_b=laplacian_b(g) if rng.random() < 0.5 else identity_scaled_b(g, 1.5),
        field=BallField(
            center_map=lambda t, v: -gamma * v,
            radius_map=lambda t, v: 0.1,
        ),
        exps=Exponents(p),
    )
    traj = marching_solve(data, MinimalNorm(), tol_newton=1e-13)
    ledger = energy_ledger(traj, data, mu_a=1.0, c_a=0.0)
    assert ledger.min_inequality_slack() >= -1e-10


def test_young_constant_p2():
    data = scalar_analytic_problem(8)
    env = GrowthEnvelope(a=lambda t: 0.1, b=1.0, q=2.0)
    fit = OperatorFit(mu_a=1.0, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=1.0)
    consts = gronwall_constants(data, env, fit)
    assert consts.c_y == pytest.approx(0.5)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_young_inequality_sampled(rng, p):
    # a b <= (mu/2) a^p + c_y b^q with c_y = (p mu / 2)^(-q/p) / q
    q = p / (p - 1.0)
    for mu in (0.5, 1.0, 2.0):
        c_y = (p * mu / 2.0) ** (-q / p) / q
        for _ in range(200):
            a, b = rng.uniform(0.0, 10.0, size=2)
            assert a * b <= (mu / 2.0) * a**p + c_y * b**q + 1e-12


def test_gronwall_zero_data_gives_zero_bound():
    g = Grid(n=4, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=8, final_time=1.0),
        rate=1.0,
        u0=np.zeros(4),
        v0=np.zeros(4),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: np.zeros(4)),
        exps=Exponents(2.0),
    )
    env = GrowthEnvelope(a=lambda t: 0.0, b=1.0, q=2.0)
    fit = OperatorFit(mu_a=1.0, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=0.5)
    consts = gronwall_constants(data, env, fit)
    assert consts.r0 == 0.0
    assert consts.m1 == 0.0
    # only the zero trajectory is admitted, and it satisfies the bounds
    traj = solve_single_valued(np.zeros((8, 4)), data)
    assert verify_apriori(traj, consts, data).passed


def test_m1_admits_initial_state_and_is_monotone():
    env = GrowthEnvelope(a=lambda t: 0.2, b=0.5, q=2.0)
    fit = OperatorFit(mu_a=0.5, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=0.7)
    m1s = []
    for amp in (0.5, 1.0, 2.0, 4.0):
        data = scalar_analytic_problem(16)
        data.v0 = amp * np.ones(1)
        consts = gronwall_constants(data, env, fit)
        assert consts.m1 >= h_norm(data.v0, data.grid) ** 2
        m1s.append(consts.m1)
    assert all(a < b for a, b in zip(m1s, m1s[1:]))


def test_gronwall_monotone_in_data_terms():
    data = scalar_analytic_problem(16)
    fit = OperatorFit(mu_a=0.5, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=0.7)
    base = gronwall_constants(data, GrowthEnvelope(a=lambda t: 0.2, b=0.5, q=2.0), fit)
    bigger_a = gronwall_constants(data, GrowthEnvelope(a=lambda t: 0.4, b=0.5, q=2.0), fit)
    bigger_b = gronwall_constants(data, GrowthEnvelope(a=lambda t: 0.2, b=1.0, q=2.0), fit)
    assert bigger_a.m1 > base.m1
    assert bigger_b.m1 > base.m1
    data_u = scalar_analytic_problem(16)
    data_u.u0 = 0.5 * np.ones(1)
    bigger_u = gronwall_constants(data_u, GrowthEnvelope(a=lambda t: 0.2, b=0.5, q=2.0), fit)
    assert bigger_u.m1 > base.m1


def test_gronwall_rejects_bad_constants():
    data = scalar_analytic_problem(8)
    env = GrowthEnvelope(a=lambda t: 0.1, b=1.0, q=2.0)
    bad = OperatorFit(mu_a=0.0, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=1.0)
    with pytest.raises(InvalidConstantsError):
        gronwall_constants(data, env, bad)


def test_verify_apriori_scalar_case_positive_margin():
    data = scalar_analytic_problem(100)
    env = GrowthEnvelope(a=lambda t: 0.1, b=1.0, q=2.0)
    fit, _ = fit_problem_constants(data, env)
    consts = gronwall_constants(data, env, fit)
    traj = solve_single_valued(np.zeros((100, 1)), data)
    report = verify_apriori(traj, consts, data)
    assert report.passed
    assert all(m > 0.0 for m in report.margins.values())


def test_verify_apriori_adversarial_constants_fail_named_bound():
    # an envelope far smaller than the field's true growth produces
    # constants the actual trajectory violates
    g = Grid(n=4, length=1.0)
    growth = 1.2
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=128, final_time=2.0),
        rate=1.0,
        u0=np.zeros(4),
        v0=sine_profile(g),
        op_a=LinearOperatorA(g, 0.01 * np.eye(4)),
        op_b=identity_scaled_b(g, 0.05),
        field=BallField(center_map=lambda t, v: growth * v, radius_map=lambda t, v: 0.0),
        exps=Exponents(2.0),
    )
    traj = marching_solve(data, MinimalNorm())
    assert max(h_norm(v, g) for v in traj.v) > 2.0  # the run really grows
    env_lie = GrowthEnvelope(a=lambda t: 1e-4, b=1e-4, q=2.0)
    fit = OperatorFit(mu_a=1.0, c_a=0.0, beta_a=1.0, beta_b=1.0, mu_b=1.0, c_e=0.5)
    consts = gronwall_constants(data, env_lie, fit)
    report = verify_apriori(traj, consts, data)
    assert not report.passed
    assert report.first_violation() == "h"


def test_convergence_study_analytic_scalar():
    data = scalar_analytic_problem(100)
    study = convergence_study(
        data,
        [1e-2, 5e-3, 2.5e-3],
        forcing=lambda t: np.zeros(1),
        reference=lambda t: np.array([scalar_exact(t)]),
    )
    assert all(abs(o - 1.0) <= 0.1 for o in study.orders)


def test_convergence_study_self_reference_nonlinear():
    g = Grid(n=8, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=32, final_time=0.5),
        rate=2.0,
        u0=np.zeros(8),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 3.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: 0.2 * np.ones(8)),
        exps=Exponents(3.0),
    )
    taus = [0.5 / 32, 0.5 / 64, 0.5 / 128]
    study = convergence_study(
        data, taus, forcing=lambda t: 0.2 * np.ones(8), refine=64
    )
    assert all(o >= 0.8 for o in study.orders)


def manufactured_setup(n=64, s=0.75, rate=2.0, p=3.0):
    g = Grid(n=n, length=1.0)
    op_a = PLaplacian(g, p)
    op_b = fractional_laplacian_b(g, s)
    prof = sine_profile(g, mode=1)
    u0 = sine_profile(g, mode=2, amplitude=0.3)
    a_of_g = op_a.apply(prof)
    b_of_g = op_b.apply(prof)
    b_of_u0 = op_b.apply(u0)

    def memory_coef(t):
        # exact memory state of e^{-t} g under the exponential kernel
        return rate / (rate - 1.0) * (math.exp(-t) - math.exp(-rate * t))

    def forcing(t):
        return (
            -math.exp(-t) * prof
            + math.exp(-(p - 1.0) * t) * a_of_g
            + memory_coef(t) * b_of_g
            + b_of_u0
        )

    def reference(t):
        return math.exp(-t) * prof

    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=1024, final_time=1.0),
        rate=rate,
        u0=u0,
        v0=prof,
        op_a=op_a,
        op_b=op_b,
        field=SingletonField(lambda t, v: forcing(t)),
        exps=Exponents(p),
    )
    return data, forcing, reference


def test_convergence_study_manufactured_solution():
    data, forcing, reference = manufactured_setup(n=16)
    study = convergence_study(
        data, [1.0 / 256, 1.0 / 512, 1.0 / 1024], forcing=forcing, reference=reference
    )
    assert all(o >= 0.8 for o in study.orders)


def test_convergence_study_validates_inputs():
    data = scalar_analytic_problem(10)
    with pytest.raises(ValueError):
        convergence_study(data, [0.1, 0.05], forcing=lambda t: np.zeros(1))
    with pytest.raises(ValueError):
        convergence_study(data, [0.1, 0.2, 0.05], forcing=lambda t: np.zeros(1))
    with pytest.raises(ValueError):
        convergence_study(data, [0.3, 0.15, 0.075], forcing=lambda t: np.zeros(1))
