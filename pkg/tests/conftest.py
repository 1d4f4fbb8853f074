import numpy as np
import pytest

from evomem import (
    Exponents,
    Grid,
    LinearOperatorA,
    MinimalNorm,
    ProblemData,
    SingletonField,
    TimeMesh,
    identity_scaled_b,
)


def scalar_analytic_problem(steps: int, final_time: float = 1.0) -> ProblemData:
    """n=1 linear problem whose exact solution is v(t) = e^-t cos t.

    With A = identity, B = identity, rate 1, u0 = 0, v0 = 1 and no forcing,
    the continuous system is v' = -v - w, w' = v - w (eigenvalues -1 +- i).
    """
    grid = Grid(n=1, length=2.0)
    return ProblemData(
        grid=grid,
        mesh=TimeMesh(steps=steps, final_time=final_time),
        rate=1.0,
        u0=np.zeros(1),
        v0=np.ones(1),
        op_a=LinearOperatorA(grid, np.eye(1)),
        op_b=identity_scaled_b(grid, 1.0),
        field=SingletonField(lambda t, v: np.zeros(1)),
        exps=Exponents(2.0),
    )


def scalar_exact(t: np.ndarray) -> np.ndarray:
    return np.exp(-t) * np.cos(t)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
