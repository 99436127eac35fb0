import numpy as np
import pytest

from dresplit import _kernels


def test_selected_path_reported():
    assert isinstance(_kernels.USE_NUMBA, bool)


def test_rk4_paths_agree(rng):
    n = 8
    a = rng.standard_normal((n, n))
    g = rng.standard_normal((n, 3))
    q = g @ g.T
    s = rng.standard_normal((n, 3))
    s = s @ s.T
    p0 = rng.standard_normal((n, 3))
    p0 = p0 @ p0.T
    args = [_kernels.as_kernel_array(x) for x in (a.T, a, q, s, p0)]
    ref = _kernels.dre_rk4_steps_numpy(*args, 0.01, 50)
    if _kernels.dre_rk4_steps_numba is None:
        pytest.skip("numba path unavailable")
    jit = _kernels.dre_rk4_steps_numba(*args, 0.01, 50)
    assert np.allclose(ref, jit, rtol=1e-12, atol=1e-13)


def test_repeat_apply_paths_agree(rng):
    k = rng.standard_normal((6, 6)) * 0.3
    v = rng.standard_normal((6, 4))
    ref = _kernels.repeat_apply_numpy(_kernels.as_kernel_array(k),
                                      _kernels.as_kernel_array(v), 17)
    if _kernels.repeat_apply_numba is None:
        pytest.skip("numba path unavailable")
    jit = _kernels.repeat_apply_numba(_kernels.as_kernel_array(k),
                                      _kernels.as_kernel_array(v), 17)
    assert np.allclose(ref, jit, rtol=1e-12, atol=1e-14)


def test_repeat_apply_matches_matrix_power(rng):
    k = rng.standard_normal((5, 5)) * 0.4
    v = rng.standard_normal((5, 2))
    out = _kernels.repeat_apply(_kernels.as_kernel_array(k),
                                _kernels.as_kernel_array(v), 9)
    ref = np.linalg.matrix_power(k, 9) @ v
    assert np.allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_env_flag_forces_numpy(tmp_path):
    import subprocess
    import sys

    code = (
        "import os; os.environ['DRESPLIT_PURE_NUMPY']='1';"
        "from dresplit import _kernels;"
        "assert not _kernels.USE_NUMBA;"
        "assert _kernels.dre_rk4_steps is _kernels.dre_rk4_steps_numpy;"
        "print('ok')"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"
