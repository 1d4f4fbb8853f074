"""Implicit step, solution operator, marching and fixed-point strategies."""

import math

import numpy as np
import pytest

from evomem import (
    BallField,
    BoxField,
    Exponents,
    Grid,
    GrowthEnvelope,
    LinearOperatorA,
    MinimalNorm,
    NonlinearSolveFailure,
    PLaplacian,
    ProblemData,
    ProjectPrevious,
    SingletonField,
    TimeMesh,
    b_norm,
    fixed_point_iterate,
    h_norm,
    identity_scaled_b,
    implicit_step_a,
    laplacian_b,
    laplacian_matrix,
    marching_solve,
    residual_certificate,
    sine_profile,
    solve_no_memory,
    solve_single_valued,
    truncate,
)
from evomem.operators import OperatorB
from evomem.setvalued import Extremal

from conftest import scalar_analytic_problem, scalar_exact


def test_implicit_step_zero_operator(rng):
    g = Grid(n=5, length=1.0)
    op = LinearOperatorA(g, np.zeros((5, 5)))
    rhs = rng.standard_normal(5)
    v, iters, res = implicit_step_a(rhs, 0.1, op)
    assert np.allclose(v, rhs, rtol=1e-14)


def test_implicit_step_p2_direct_solve_oracle(rng):
    g = Grid(n=9, length=1.0)
    op = PLaplacian(g, 2.0)
    tau = 0.05
    rhs = rng.standard_normal(9)
    v, iters, res = implicit_step_a(rhs, tau, op, tol=1e-12)
    oracle = np.linalg.solve(np.eye(9) + tau * laplacian_matrix(g), rhs)
    assert np.allclose(v, oracle, atol=1e-12)
    assert res <= 1e-12
    assert iters == 1  # linear problem: one Newton step


def brute_force_implicit_p4(rhs: np.ndarray, tau: float, op) -> np.ndarray:
    """Zoomed grid search for v + tau A(v) = rhs on a 2-node grid."""
    center = rhs.copy()
    span = 2.0
    best = center
    for _ in range(9):
        xs = np.linspace(center[0] - span, center[0] + span, 41)
        ys = np.linspace(center[1] - span, center[1] + span, 41)
        best_r = np.inf
        for x in xs:
            for y in ys:
                v = np.array([x, y])
                r = np.max(np.abs(v + tau * op.apply(v) - rhs))
                if r < best_r:
                    best_r, best = r, v
        center = best
        span *= 0.1
    return best


def test_implicit_step_p4_brute_force_oracle():
    g = Grid(n=2, length=3.0)
    op = PLaplacian(g, 4.0)
    tau = 0.2
    rhs = np.array([0.8, -0.5])
    v, _, _ = implicit_step_a(rhs, tau, op, tol=1e-13)
    oracle = brute_force_implicit_p4(rhs, tau, op)
    assert np.max(np.abs(v - oracle)) <= 1e-6


def test_implicit_step_budget_failure():
    g = Grid(n=3, length=1.0)
    op = PLaplacian(g, 3.0)
    with pytest.raises(NonlinearSolveFailure) as info:
        implicit_step_a(np.ones(3), 0.5, op, tol=1e-12, max_iter=0)
    assert info.value.residual > 0.0


def test_solve_zero_problem_stays_zero():
    g = Grid(n=4, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=16, final_time=1.0),
        rate=2.0,
        u0=np.zeros(4),
        v0=np.zeros(4),
        op_a=PLaplacian(g, 3.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: np.zeros(4)),
        exps=Exponents(3.0),
    )
    traj = solve_single_valued(np.zeros((16, 4)), data)
    assert not np.any(traj.v) and not np.any(traj.w)


def test_scalar_analytic_error_and_order():
    taus = [1e-2, 5e-3, 2.5e-3]
    errors = []
    for tau in taus:
        steps = round(1.0 / tau)
        data = scalar_analytic_problem(steps)
        traj = solve_single_valued(np.zeros((steps, 1)), data)
        t = data.mesh.nodes()
        errors.append(float(np.max(np.abs(traj.v[:, 0] - scalar_exact(t)))))
        assert errors[-1] <= 2.0 * tau
    orders = [
        math.log(e1 / e2) / math.log(t1 / t2)
        for e1, e2, t1, t2 in zip(errors, errors[1:], taus, taus[1:])
    ]
    assert all(abs(o - 1.0) <= 0.1 for o in orders)


def test_solver_deterministic_bitwise():
    data = scalar_analytic_problem(64)
    t1 = solve_single_valued(np.zeros((64, 1)), data)
    t2 = solve_single_valued(np.zeros((64, 1)), data)
    assert np.array_equal(t1.v, t2.v) and np.array_equal(t1.w, t2.w)


def test_uniqueness_surrogate_perturbed_newton_guess(rng):
    g = Grid(n=6, length=1.0)
    tol = 1e-12
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=32, final_time=0.5),
        rate=1.0,
        u0=np.zeros(6),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 3.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: np.zeros(6)),
        exps=Exponents(3.0),
    )
    f = np.zeros((32, 6))
    base = solve_single_valued(f, data, tol_newton=tol)
    jitter = solve_single_valued(
        f, data, tol_newton=tol,
        guess_fn=lambda k, vk, rhs: vk + 0.05 * rng.standard_normal(6),
    )
    gap = max(h_norm(base.v[k] - jitter.v[k], g) for k in range(33))
    assert gap <= 10.0 * tol


def test_lambda_to_zero_decouples():
    g = Grid(n=4, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=64, final_time=1.0),
        rate=1e-8,
        u0=np.zeros(4),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: np.zeros(4)),
        exps=Exponents(2.0),
    )
    traj = solve_single_valued(np.zeros((64, 4)), data)
    assert max(h_norm(w, g) for w in traj.w) <= 1e-6


@pytest.mark.parametrize("rate", [1e2, 1e3])
def test_lambda_to_infinity_matches_no_memory(rate):
    g = Grid(n=6, length=1.0)
    steps = 64
    tau = 1.0 / steps
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=steps, final_time=1.0),
        rate=rate,
        u0=np.zeros(6),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=SingletonField(lambda t, v: 0.3 * np.ones(6)),
        exps=Exponents(2.0),
    )
    f = np.tile(0.3 * np.ones(6), (steps, 1))
    with_memory = solve_single_valued(f, data)
    without = solve_no_memory(f, data)
    deviation = max(h_norm(with_memory.v[k] - without.v[k], g) for k in range(steps + 1))
    assert deviation <= 10.0 / rate + 10.0 * tau


def test_combined_energy_decay_unforced_symmetric():
    # dissipativity holds for the pair energy 1/2|v|^2 + (kappa/2)|w|_B^2;
    # the state norm alone oscillates once the memory pushes back
    data = scalar_analytic_problem(300, final_time=3.0)
    traj = solve_single_valued(np.zeros((300, 1)), data)
    tau = data.mesh.tau
    kappa = tau / (-math.expm1(-data.rate * tau))
    energy = [
        0.5 * h_norm(traj.v[k], data.grid) ** 2
        + 0.5 * kappa * b_norm(traj.w[k], data.op_b) ** 2
        for k in range(301)
    ]
    assert all(b <= a + 1e-15 for a, b in zip(energy, energy[1:]))


def test_state_norm_decay_without_coupling(rng):
    # with B = 0 the scheme is plain backward Euler: |v| decays exactly
    g = Grid(n=5, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=50, final_time=1.0),
        rate=1.0,
        u0=np.zeros(5),
        v0=rng.standard_normal(5),
        op_a=LinearOperatorA(g, laplacian_matrix(g)),
        op_b=OperatorB(g, np.zeros((5, 5))),
        field=SingletonField(lambda t, v: np.zeros(5)),
        exps=Exponents(2.0),
    )
    traj = solve_single_valued(np.zeros((50, 5)), data)
    norms = [h_norm(v, g) for v in traj.v]
    assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))


def singleton_problem(point_fn, steps=32):
    g = Grid(n=4, length=1.0)
    return ProblemData(
        grid=g,
        mesh=TimeMesh(steps=steps, final_time=1.0),
        rate=1.5,
        u0=np.zeros(4),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=SingletonField(point_fn),
        exps=Exponents(2.0),
    )


def test_marching_singleton_equals_solution_operator():
    forcing = lambda t, v: math.exp(-t) * np.array([0.1, -0.2, 0.3, 0.0])
    data = singleton_problem(forcing)
    t = data.mesh.nodes()
    via_rule = marching_solve(data, MinimalNorm())
    ftraj = np.array([forcing(tk, None) for tk in t[:-1]])
    direct = solve_single_valued(ftraj, data)
    assert np.array_equal(via_rule.v, direct.v)


def test_marching_minimal_norm_on_centered_ball_is_unforced():
    g = Grid(n=4, length=1.0)
    data = ProblemData(
        grid=g,
        mesh=TimeMesh(steps=32, final_time=1.0),
        rate=1.0,
        u0=np.zeros(4),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 2.0),
        op_b=laplacian_b(g),
        field=BallField(center_map=lambda t, v: np.zeros(4), radius_map=lambda t, v: 0.4),
        exps=Exponents(2.0),
    )
    traj = marching_solve(data, MinimalNorm())
    assert not np.any(traj.f)
    unforced = solve_single_valued(np.zeros((32, 4)), data)
    assert np.array_equal(traj.v, unforced.v)


def test_extremal_selections_bracket_the_midpoint():
    # monotone scalar configuration: weak memory over a short horizon
    g = Grid(n=1, length=2.0)
    lo, hi = -0.3, 0.7

    def make(field):
        return ProblemData(
            grid=g,
            mesh=TimeMesh(steps=30, final_time=0.3),
            rate=0.5,
            u0=np.zeros(1),
            v0=np.ones(1),
            op_a=LinearOperatorA(g, np.eye(1)),
            op_b=identity_scaled_b(g, 1.0),
            field=field,
            exps=Exponents(2.0),
        )

    box = BoxField(lower_map=lambda t, v: np.array([lo]), upper_map=lambda t, v: np.array([hi]))
    up = marching_solve(make(box), Extremal(np.ones(1)))
    down = marching_solve(make(box), Extremal(-np.ones(1)))
    mid_field = SingletonField(lambda t, v: np.array([(lo + hi) / 2.0]))
    mid = marching_solve(make(mid_field), MinimalNorm())
    assert np.all(down.v[:, 0] <= mid.v[:, 0] + 1e-12)
    assert np.all(mid.v[:, 0] <= up.v[:, 0] + 1e-12)


def test_fixed_point_singleton_one_step():
    forcing = lambda t, v: math.exp(-2.0 * t) * np.array([0.2, 0.0, -0.1, 0.1])
    data = singleton_problem(forcing)
    t = data.mesh.nodes()
    target = np.array([forcing(tk, None) for tk in t[:-1]])
    f0 = np.ones((32, 4))  # start far from the fixed point
    result = fixed_point_iterate(f0, data, k_max=10, tol_fp=1e-12)
    assert result.converged
    assert np.array_equal(result.f_star, target)  # selection map is constant
    assert result.residual_history[1] == 0.0  # the first update already landed


def contraction_problem(steps=64):
    g = Grid(n=8, length=1.0)
    gamma = 0.4
    return ProblemData(
        grid=g,
        mesh=TimeMesh(steps=steps, final_time=1.0),
        rate=1.0,
        u0=np.zeros(8),
        v0=sine_profile(g),
        op_a=PLaplacian(g, 2.0),
        op_b=identity_scaled_b(g, 1.0),
        field=BallField(center_map=lambda t, v: -gamma * v, radius_map=lambda t, v: 0.0),
        exps=Exponents(2.0),
    )


def test_fixed_point_contraction_geometric_residuals():
    data = contraction_problem()
    f0 = np.zeros((64, 8))
    result = fixed_point_iterate(f0, data, k_max=60, tol_fp=1e-11)
    assert result.converged
    hist = result.residual_history
    assert all(b < a for a, b in zip(hist, hist[1:]))
    ratios = [b / a for a, b in zip(hist[1:], hist[2:])]
    assert all(r < 0.5 for r in ratios)  # comfortably contractive
    cert = residual_certificate(result.trajectory, data, tol_set=1e-9, tol_eq=1e-8)
    assert cert.passed


def test_fixed_point_first_iteration_enters_admissible_tube():
    data = contraction_problem(steps=16)
    env = GrowthEnvelope(a=lambda t: 0.4, b=0.4, q=2.0)
    m1 = 4.0
    data.field = truncate(data.field, m1)
    cap = env.truncated_bound(0.0, m1)
    f0 = 100.0 * np.ones((16, 8))  # far outside any admissible selection
    result = fixed_point_iterate(f0, data, k_max=1, tol_fp=1e-12)
    sizes = [h_norm(fk, data.grid) for fk in result.f_star]
    assert all(s <= cap + 1e-9 for s in sizes)


def test_fixed_point_non_convergence_is_reported_not_raised():
    data = contraction_problem(steps=16)
    f0 = np.zeros((16, 8))
    result = fixed_point_iterate(f0, data, k_max=2, tol_fp=1e-16)
    assert not result.converged
    assert len(result.residual_history) == 2


def test_certificate_passes_on_marching_output():
    data = contraction_problem()
    traj = marching_solve(data, MinimalNorm(), tol_newton=1e-12)
    cert = residual_certificate(traj, data, tol_set=1e-9, tol_eq=1e-10)
    assert cert.passed
    assert cert.eq_residual_max <= 1e-10


def test_certificate_flags_corrupted_selection():
    data = contraction_problem(steps=16)
    traj = marching_solve(data, MinimalNorm())
    traj.f[5] += 3.0  # push the selection outside the (radius 0) set
    cert = residual_certificate(traj, data)
    assert not cert.inclusion_ok
    assert cert.set_distance_max >= 1.0


def test_certificate_zero_problem():
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
    assert residual_certificate(traj, data).passed


def test_trajectory_initial_data_exact():
    data = contraction_problem(steps=8)
    traj = marching_solve(data, MinimalNorm())
    assert np.array_equal(traj.v[0], data.v0)
    assert not np.any(traj.w[0])
    assert np.all(np.isfinite(traj.v)) and np.all(np.isfinite(traj.w))
