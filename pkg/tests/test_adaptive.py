import numpy as np
import pytest

from dresplit import (
    CompressionOptions,
    ControllerParams,
    ExpActionOptions,
    InvalidInput,
    LDLTFactor,
    ProblemData,
    QuadraticTerm,
    SchemeSpec,
    StepSizeCollapse,
    StiffOperator,
    estimate_derivatives,
    frob_norm,
    integrate_adaptive,
    integrate_fixed,
    interpolation_error_bound,
    pi_update,
    reject_resize,
    to_dense,
)

from conftest import make_tanh_problem, random_factor

EXP = ExpActionOptions(rel_tol=1e-12)
COMP = CompressionOptions(rel_tol=1e-14)


class TestController:
    def test_unchanged_at_target(self):
        params = ControllerParams(tol=1e-3)
        e = 0.9 * 1e-3
        assert pi_update(e, e, 0.1, params, 2) == pytest.approx(0.1)

    def test_known_shrink_factor(self):
        p = 3
        params = ControllerParams(tol=1e-4)
        e = 2.0**p * 0.9 * params.tol
        out = pi_update(e, e, 1.0, params, p)
        assert out == pytest.approx(2.0**-0.2, rel=1e-12)

    def test_zero_estimate_capped_growth(self):
        params = ControllerParams(tol=1e-3)
        out = pi_update(0.0, 0.0, 0.5, params, 2)
        assert 0.5 < out <= 0.5 * params.growth_cap
        # A deep floor would hit the cap without it.
        deep = ControllerParams(tol=1e-3, est_floor_factor=1e-12)
        assert pi_update(0.0, 0.0, 0.5, deep, 2) == pytest.approx(0.5 * deep.growth_cap)

    def test_scale_invariance(self):
        params_a = ControllerParams(tol=1e-3)
        params_b = ControllerParams(tol=1e-6)
        scale = 1e-3
        h_a = pi_update(4e-4, 7e-4, 0.2, params_a, 2)
        h_b = pi_update(4e-4 * scale, 7e-4 * scale, 0.2, params_b, 2)
        assert h_a == pytest.approx(h_b, rel=1e-12)

    def test_reject_resize_known_values(self):
        params = ControllerParams(tol=1.0)
        assert reject_resize(4.0 * 0.9, 1.0, params, 2) == pytest.approx(0.5)
        assert reject_resize(10.0 * 0.9, 1.0, params, 1) == pytest.approx(0.1)

    def test_reject_resize_strictly_shrinks(self):
        params = ControllerParams(tol=1.0)
        e = 0.9 + 1e-9
        assert reject_resize(e, 1.0, params, 3) < 1.0

    def test_invalid_params(self):
        with pytest.raises(InvalidInput):
            ControllerParams(tol=-1.0)
        with pytest.raises(InvalidInput):
            ControllerParams(tol=1.0, safety=1.5)


class TestFixedDriver:
    def test_tanh_fourth_order_refinement(self):
        problem = make_tanh_problem()
        exact = np.tanh(1.0)
        spec = SchemeSpec("sym", 2)
        errs = {}
        for n in (16, 32):
            traj = integrate_fixed(problem, spec, n, EXP, COMP)
            errs[n] = abs(to_dense(traj.final)[0, 0] - exact)
        ratio = errs[16] / errs[32]
        assert 8.0 <= ratio <= 32.0

    def test_pure_conjugation(self, rng):
        n = 5
        a = rng.standard_normal((n, n)) / np.sqrt(n)
        p = random_factor(rng, n, 2, definite=True)
        problem = ProblemData(
            a=StiffOperator(a),
            q=LDLTFactor.zero(n),
            s=QuadraticTerm.from_dense(np.zeros((n, n))),
            p0=p,
            horizon=0.8,
        )
        from scipy.linalg import expm

        phi = expm(problem.horizon * a)
        ref = phi.T @ to_dense(p) @ phi
        for n_steps in (1, 4):
            traj = integrate_fixed(problem, SchemeSpec("strang"), n_steps, EXP, COMP)
            assert np.linalg.norm(to_dense(traj.final) - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_final_time_exact_and_monotone(self):
        problem = make_tanh_problem(horizon=0.7)
        traj = integrate_fixed(problem, SchemeSpec("sym", 2), 7, EXP, COMP)
        times = traj.times
        assert times[-1] == 0.7
        assert np.all(np.diff(times) > 0)

    def test_records_have_ranks(self):
        problem = make_tanh_problem()
        traj = integrate_fixed(problem, SchemeSpec("asym", 2), 5, EXP, COMP)
        assert all(r.rank >= 1 for r in traj.records)
        assert traj.records[0].fresh_quad_blocks > 0
        assert all(r.fresh_quad_blocks == 0 for r in traj.records[1:])


class TestAdaptiveDriver:
    def test_requires_embedded(self):
        problem = make_tanh_problem()
        with pytest.raises(InvalidInput):
            integrate_adaptive(problem, SchemeSpec("sym", 1), 0.1,
                               ControllerParams(tol=1e-4))
        with pytest.raises(InvalidInput):
            integrate_adaptive(problem, SchemeSpec("strang"), 0.1,
                               ControllerParams(tol=1e-4))

    def test_tanh_accuracy_and_acceptance(self):
        problem = make_tanh_problem()
        tol = 1e-6
        traj = integrate_adaptive(problem, SchemeSpec("sym", 2), 0.05,
                                  ControllerParams(tol=tol), EXP, COMP)
        assert all(r.err_est <= tol for r in traj.records)
        assert traj.times[-1] == 1.0
        final_err = abs(to_dense(traj.final)[0, 0] - np.tanh(1.0))
        assert final_err <= tol

    def test_single_clamped_step_for_loose_tol(self):
        problem = make_tanh_problem(horizon=0.05)
        traj = integrate_adaptive(problem, SchemeSpec("sym", 2), 1.0,
                                  ControllerParams(tol=10.0), EXP, COMP)
        assert len(traj.records) == 1
        assert traj.records[0].clamped
        assert traj.records[0].t == 0.05

    def test_epus_scaling_recorded(self):
        problem = make_tanh_problem()
        tol = 1e-4
        traj = integrate_adaptive(problem, SchemeSpec("sym", 2), 0.05,
                                  ControllerParams(tol=tol, epus=True), EXP, COMP)
        assert all(r.err_est <= tol for r in traj.records)
        assert traj.times[-1] == 1.0

    def test_step_size_collapse_carries_partial(self):
        problem = make_tanh_problem()
        params = ControllerParams(tol=1e-30, h_min_factor=1e-6)
        with pytest.raises(StepSizeCollapse) as info:
            integrate_adaptive(problem, SchemeSpec("sym", 2), 0.1, params, EXP, COMP)
        assert info.value.trajectory is not None

    def test_rejection_bookkeeping(self):
        # Start with a huge h1 so the first trial must be rejected.
        problem = make_tanh_problem(horizon=0.5)
        traj = integrate_adaptive(problem, SchemeSpec("sym", 2), 0.5,
                                  ControllerParams(tol=1e-10), EXP, COMP)
        assert traj.records[0].rejections >= 1
        assert all(r.err_est <= 1e-10 for r in traj.records)
        assert traj.times[-1] == 0.5

    def test_interpolation_inside_trajectory(self):
        problem = make_tanh_problem()
        traj = integrate_adaptive(problem, SchemeSpec("sym", 2), 0.05,
                                  ControllerParams(tol=1e-8), EXP, COMP)
        t_query = 0.37
        val = to_dense(traj.interpolate_at(t_query))[0, 0]
        assert val == pytest.approx(np.tanh(t_query), abs=1e-4)


class TestDerivativeEstimates:
    def test_stationary_point(self):
        # At the algebraic fixed point p=1 of p' = 1 - p^2 the derivative is 0.
        problem = make_tanh_problem(p0=1.0)
        pdot, _ = estimate_derivatives(problem.p0, problem)
        assert frob_norm(pdot) <= 1e-12

    def test_zero_state(self):
        problem = make_tanh_problem(p0=0.0)
        pdot, _ = estimate_derivatives(problem.p0, problem)
        assert to_dense(pdot)[0, 0] == pytest.approx(1.0)

    def test_tanh_derivatives(self):
        p = np.tanh(0.5)
        problem = make_tanh_problem(p0=p)
        pdot, pddot = estimate_derivatives(problem.p0, problem)
        expected_dot = 1.0 - p**2
        expected_ddot = -2.0 * p * (1.0 - p**2)
        assert to_dense(pdot)[0, 0] == pytest.approx(expected_dot, abs=1e-10)
        assert to_dense(pddot)[0, 0] == pytest.approx(expected_ddot, abs=1e-10)

    def test_matrix_case_against_dense_rhs(self, rng):
        n = 6
        from conftest import make_random_problem
        from dresplit.problems import to_dense_problem

        problem = make_random_problem(rng, n, 3)
        f = problem.p0
        pdot, pddot = estimate_derivatives(f, problem)
        dense = to_dense_problem(problem)
        p = to_dense(f)
        rhs = dense.a.T @ p + p @ dense.a + dense.q - p @ dense.s @ p
        assert np.linalg.norm(to_dense(pdot) - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))
        pd = rhs
        rhs2 = dense.a.T @ pd + pd @ dense.a - pd @ dense.s @ p - p @ dense.s @ pd
        assert np.linalg.norm(to_dense(pddot) - rhs2) <= 1e-9 * max(1.0, np.linalg.norm(rhs2))

    def test_bound_helper(self):
        assert interpolation_error_bound(1e-3, 0.2, 2.0) == pytest.approx(1e-3 + 0.01)
