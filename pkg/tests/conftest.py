import numpy as np
import pytest

from dresplit import (
    LDLTFactor,
    ProblemData,
    QuadraticTerm,
    StiffOperator,
)


def random_factor(rng, n, r, definite=False):
    """Random LDL^T factor; indefinite core unless definite is requested."""
    l_mat = rng.standard_normal((n, r))
    if definite:
        g = rng.standard_normal((r, r))
        core = g @ g.T
    else:
        g = rng.standard_normal((r, r))
        core = g + g.T
    return LDLTFactor(l_mat, core)


def make_tanh_problem(horizon=1.0, p0=0.0):
    """Scalar p' = 1 - p^2 whose solution is tanh(t + atanh(p0))."""
    if p0 == 0.0:
        start = LDLTFactor.zero(1)
    else:
        start = LDLTFactor(np.array([[1.0]]), np.array([[p0]]))
    return ProblemData(
        a=StiffOperator(np.zeros((1, 1))),
        q=LDLTFactor(np.ones((1, 1)), np.ones((1, 1))),
        s=QuadraticTerm.from_dense(np.ones((1, 1))),
        p0=start,
        horizon=horizon,
    )


def make_random_problem(rng, n, rank, horizon=1.0, spectral_scale=None):
    """Dense random problem with PSD rank-`rank` data factors."""
    a = rng.standard_normal((n, n))
    if spectral_scale is not None:
        a = a * (spectral_scale / np.sqrt(n))
    r = min(rank, n)
    return ProblemData(
        a=StiffOperator(a),
        q=LDLTFactor(rng.standard_normal((n, r)), np.eye(r)),
        s=QuadraticTerm.from_dense(
            (lambda g: g @ g.T)(rng.standard_normal((n, r)))
        ),
        p0=LDLTFactor(rng.standard_normal((n, r)), np.eye(r)),
        horizon=horizon,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
