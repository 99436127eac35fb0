"""Hot numeric kernels with a numba-compiled default and a pure-numpy fallback.

The environment variable ``DRESPLIT_PURE_NUMPY`` (any value other than
``""``/``"0"``/``"false"``) forces the fallback path; the fallback is also
selected automatically when numba is not importable.  Both paths share the
same source, so they agree up to floating-point summation order inside the
BLAS calls.  ``benchmarks/bench_kernels.py`` compares them.
"""

import os

import numpy as np


def _numba_wanted() -> bool:
    flag = os.environ.get("DRESPLIT_PURE_NUMPY", "").strip().lower()
    return flag in ("", "0", "false", "no")


def _dre_rk4_steps(at, a, q, s, p0, h, n_steps):
    """Advance the dense matrix Riccati ODE with n_steps classical RK4 steps.

    The iterate is re-symmetrized after every step to prevent drift.
    """
    p = p0.copy()
    for _ in range(n_steps):
        k1 = at @ p + p @ a + q - (p @ s) @ p
        p2 = p + (0.5 * h) * k1
        k2 = at @ p2 + p2 @ a + q - (p2 @ s) @ p2
        p3 = p + (0.5 * h) * k2
        k3 = at @ p3 + p3 @ a + q - (p3 @ s) @ p3
        p4 = p + h * k3
        k4 = at @ p4 + p4 @ a + q - (p4 @ s) @ p4
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.T)
    return p


def _repeat_apply(k_mat, v, n):
    """Apply the one-substep propagator n times: v -> k_mat^n v."""
    w = v.copy()
    for _ in range(n):
        w = k_mat @ w
    return w


dre_rk4_steps_numpy = _dre_rk4_steps
repeat_apply_numpy = _repeat_apply

dre_rk4_steps_numba = None
repeat_apply_numba = None

if _numba_wanted():
    try:
        import numba
    except ImportError:
        numba = None
    if numba is not None:
        dre_rk4_steps_numba = numba.njit(cache=True, nogil=True)(_dre_rk4_steps)
        repeat_apply_numba = numba.njit(cache=True, nogil=True)(_repeat_apply)

USE_NUMBA = dre_rk4_steps_numba is not None

if USE_NUMBA:
    dre_rk4_steps = dre_rk4_steps_numba
    repeat_apply = repeat_apply_numba
else:
    dre_rk4_steps = dre_rk4_steps_numpy
    repeat_apply = repeat_apply_numpy


def as_kernel_array(x) -> np.ndarray:
    """C-contiguous float64 view/copy, the layout both kernel paths expect."""
    return np.ascontiguousarray(x, dtype=np.float64)
