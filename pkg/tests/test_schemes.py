import numpy as np
import pytest

from dresplit import (
    CoefficientConditioning,
    CompressionOptions,
    ExpActionOptions,
    InvalidInput,
    LDLTFactor,
    NoEmbeddedMethod,
    ProblemData,
    QuadraticTerm,
    SchemeCoefficients,
    SchemeSpec,
    StiffOperator,
    additive_coeffs,
    additive_step,
    combine,
    embedded_coeffs,
    frob_norm,
    integrate_fixed,
    lie_chain,
    multiplicative_step,
    to_dense,
)
from dresplit.schemes import coefficient_residual
from dresplit.study import fit_order
from dresplit.subflows import init_quadrature

from conftest import make_tanh_problem, random_factor

EXP = ExpActionOptions(rel_tol=1e-12)
COMP = CompressionOptions(rel_tol=1e-15)


class TestCoefficients:
    def test_asym_known_values(self):
        assert np.array_equal(additive_coeffs(1, False), [1.0])
        assert np.array_equal(additive_coeffs(2, False), [-1.0, 2.0])
        assert np.allclose(additive_coeffs(3, False), [0.5, -4.0, 4.5], atol=1e-14)

    def test_sym_known_values(self):
        assert np.array_equal(additive_coeffs(1, True), [0.5])
        assert np.allclose(additive_coeffs(2, True), [-1.0 / 6.0, 2.0 / 3.0], atol=1e-15)

    @pytest.mark.parametrize("s", range(1, 9))
    def test_order_conditions(self, s):
        for symmetric in (False, True):
            gamma = additive_coeffs(s, symmetric)
            assert coefficient_residual(gamma, s, symmetric) <= 1e-12

    @pytest.mark.parametrize("s", range(1, 9))
    def test_asym_closed_form(self, s):
        import math

        gamma = additive_coeffs(s, False)
        closed = [
            (-1.0) ** (s - k) * k**s / (math.factorial(k) * math.factorial(s - k))
            for k in range(1, s + 1)
        ]
        assert np.allclose(gamma, closed, rtol=1e-13, atol=0)

    def test_consistency_sums(self):
        for s in range(1, 9):
            assert abs(additive_coeffs(s, False).sum() - 1.0) <= 1e-13
            assert abs(2.0 * additive_coeffs(s, True).sum() - 1.0) <= 1e-13

    def test_embedded_values(self):
        assert np.array_equal(embedded_coeffs(2, False), [1.0, 0.0])
        assert np.array_equal(embedded_coeffs(2, True), [0.5, 0.0])
        assert np.array_equal(embedded_coeffs(3, False), [-1.0, 2.0, 0.0])

    def test_embedded_single_stage_rejected(self):
        with pytest.raises(NoEmbeddedMethod):
            embedded_coeffs(1, False)

    def test_conditioning_warning(self):
        with pytest.warns(CoefficientConditioning):
            additive_coeffs(13, False)

    def test_for_spec_alpha(self):
        coeffs = SchemeCoefficients.for_spec(SchemeSpec("sym", 2))
        assert np.allclose(coeffs.alpha, coeffs.gamma - coeffs.beta)
        assert coeffs.beta[-1] == 0.0
        single = SchemeCoefficients.for_spec(SchemeSpec("sym", 1))
        assert single.beta is None and single.alpha is None


class TestSpec:
    def test_orders(self):
        assert SchemeSpec("lie").order == 1
        assert SchemeSpec("strang").order == 2
        assert SchemeSpec("asym", 3).order == 3
        assert SchemeSpec("sym", 3).order == 6

    def test_embedded_orders(self):
        assert SchemeSpec("asym", 3).embedded_order == 2
        assert SchemeSpec("sym", 3).embedded_order == 4
        assert SchemeSpec("sym", 1).embedded_order is None

    def test_divisors(self):
        assert SchemeSpec("lie").substep_divisors() == (1,)
        assert SchemeSpec("strang").substep_divisors() == (1,)
        assert SchemeSpec("sym", 3).substep_divisors() == (1, 2, 3)

    def test_bad_kind(self):
        with pytest.raises(InvalidInput):
            SchemeSpec("leapfrog")


def _states_for(problem, h, divisors, degree=6):
    return {k: init_quadrature(problem, h / k, degree, EXP, COMP) for k in divisors}


class TestChainsAndSteps:
    def test_chain_k1_is_lie(self, rng):
        problem = make_tanh_problem(p0=0.3)
        h = 0.1
        states = _states_for(problem, h, (1,))
        chain = lie_chain(problem.p0, h, 1, "quadratic_first", problem, states[1], EXP, COMP)
        lie = multiplicative_step(problem.p0, h, "lie", problem, states, EXP, COMP)
        assert np.allclose(to_dense(chain), to_dense(lie), atol=1e-15)

    def test_chain_collapses_without_source_and_quadratic(self, rng):
        n = 5
        a = rng.standard_normal((n, n)) / np.sqrt(n)
        p = random_factor(rng, n, 2, definite=True)
        problem = ProblemData(
            a=StiffOperator(a),
            q=LDLTFactor.zero(n),
            s=QuadraticTerm.from_dense(np.zeros((n, n))),
            p0=p,
            horizon=1.0,
        )
        h = 0.4
        from scipy.linalg import expm

        for k in (1, 3):
            states = _states_for(problem, h, (k,))
            out = to_dense(lie_chain(p, h, k, "quadratic_first", problem, states[k], EXP, COMP))
            phi = expm(h * a)
            ref = phi.T @ to_dense(p) @ phi
            assert np.linalg.norm(out - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_chain_scalar_matches_dense_composition(self):
        problem = make_tanh_problem(p0=0.2)
        h, k = 0.3, 3
        states = _states_for(problem, h, (k,), degree=8)
        got = to_dense(lie_chain(problem.p0, h, k, "quadratic_first", problem,
                                 states[k], EXP, COMP))[0, 0]
        # dense composition of the exact scalar subflows
        p = 0.2
        sub = h / k
        for _ in range(k):
            p = p / (1.0 + sub * p)          # quadratic flow
            p = p + sub                       # affine flow: a=0, q=1
        assert got == pytest.approx(p, rel=1e-8)

    def test_strang_with_zero_quadratic_equals_affine(self, rng):
        n = 4
        a = rng.standard_normal((n, n)) / np.sqrt(n)
        q_l = rng.standard_normal((n, 2))
        p = random_factor(rng, n, 2, definite=True)
        problem = ProblemData(
            a=StiffOperator(a),
            q=LDLTFactor(q_l, np.eye(2)),
            s=QuadraticTerm.from_dense(np.zeros((n, n))),
            p0=p,
            horizon=1.0,
        )
        h = 0.2
        states = _states_for(problem, h, (1,))
        from dresplit import affine_flow

        strang = multiplicative_step(p, h, "strang", problem, states, EXP, COMP)
        affine = affine_flow(p, h, problem, states[1], EXP, COMP)
        assert np.allclose(to_dense(strang), to_dense(affine), atol=1e-13)

    def test_tanh_orders_lie_strang(self):
        problem = make_tanh_problem()
        exact = np.tanh(1.0)
        for kind, expected in (("lie", 1.0), ("strang", 2.0)):
            hs, errs = [], []
            for n in (10, 20, 40, 80):
                traj = integrate_fixed(problem, SchemeSpec(kind), n, EXP, COMP)
                err = abs(to_dense(traj.final)[0, 0] - exact)
                hs.append(1.0 / n)
                errs.append(err)
            slope, _ = fit_order(hs, errs, (1e-16, 1.0))
            assert expected - 0.2 <= slope <= expected + 0.2

    def test_additive_single_stage_symmetric(self, rng):
        problem = make_tanh_problem(p0=0.4)
        h = 0.2
        spec = SchemeSpec("sym", 1)
        coeffs = SchemeCoefficients.for_spec(spec)
        states = _states_for(problem, h, (1,))
        nxt, est = additive_step(problem.p0, h, spec, coeffs, problem, states, EXP, COMP)
        assert est is None
        fg = lie_chain(problem.p0, h, 1, "quadratic_first", problem, states[1], EXP, COMP)
        gf = lie_chain(problem.p0, h, 1, "affine_first", problem, states[1], EXP, COMP)
        ref = 0.5 * (to_dense(fg) + to_dense(gf))
        assert np.allclose(to_dense(nxt), ref, atol=1e-13)

    def test_asym2_tanh_orders(self):
        problem = make_tanh_problem()
        exact = np.tanh(1.0)
        spec = SchemeSpec("asym", 2)
        hs, errs, ests = [], [], []
        for n in (10, 20, 40, 80):
            traj = integrate_fixed(problem, spec, n, EXP, COMP)
            errs.append(abs(to_dense(traj.final)[0, 0] - exact))
            # error-per-unit-step scaling of the final-step estimate
            ests.append(traj.records[-1].err_est / traj.records[-1].h)
            hs.append(1.0 / n)
        slope, _ = fit_order(hs, errs, (1e-16, 1.0))
        assert 1.8 <= slope <= 2.2
        est_slope, _ = fit_order(hs, ests, (1e-16, 1.0))
        assert 0.8 <= est_slope <= 1.2

    def test_embedded_difference_identity(self, rng):
        problem = make_tanh_problem(p0=0.3)
        h = 0.25
        spec = SchemeSpec("sym", 2)
        coeffs = SchemeCoefficients.for_spec(spec)
        states = _states_for(problem, h, (1, 2))
        zero_tol = CompressionOptions(rel_tol=0.0)
        chains = []
        for k in (1, 2):
            for order in ("quadratic_first", "affine_first"):
                chains.append(
                    (k, lie_chain(problem.p0, h, k, order, problem, states[k], EXP, zero_tol))
                )
        full = combine([(coeffs.gamma[k - 1], c) for k, c in chains], zero_tol)
        embedded = combine([(coeffs.beta[k - 1], c) for k, c in chains], zero_tol)
        alpha_comb = combine([(coeffs.alpha[k - 1], c) for k, c in chains], zero_tol)
        diff = to_dense(full) - to_dense(embedded)
        assert np.linalg.norm(diff - to_dense(alpha_comb)) <= 1e-12

    def test_symmetric_step_symmetry(self, rng):
        problem = make_tanh_problem(p0=0.5)
        h = 0.2
        spec = SchemeSpec("sym", 2)
        coeffs = SchemeCoefficients.for_spec(spec)
        states = _states_for(problem, h, (1, 2))
        nxt, est = additive_step(problem.p0, h, spec, coeffs, problem, states, EXP, COMP)
        x = to_dense(nxt)
        assert np.array_equal(x, x.T)
        assert est is not None and est >= 0.0

    def test_threaded_step_bitwise_equal(self, rng):
        from concurrent.futures import ThreadPoolExecutor

        problem = make_tanh_problem(p0=0.3)
        h = 0.2
        spec = SchemeSpec("sym", 3)
        coeffs = SchemeCoefficients.for_spec(spec)
        states = _states_for(problem, h, (1, 2, 3))
        serial, est_s = additive_step(problem.p0, h, spec, coeffs, problem, states, EXP, COMP)
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded, est_t = additive_step(
                problem.p0, h, spec, coeffs, problem, states, EXP, COMP, executor=pool
            )
        assert np.array_equal(serial.L, threaded.L)
        assert np.array_equal(serial.D, threaded.D)
        assert est_s == est_t
