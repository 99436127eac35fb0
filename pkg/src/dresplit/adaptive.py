"""Fixed-step and adaptive integration drivers.

The adaptive driver follows the embedded-estimate protocol: evaluate the
chains once, form the full-order combination and the estimate combination,
compare the estimate against the tolerance (optionally per unit step), and
steer the step size with a PI controller.  A first rejection triggers a full
recomputation of the quadrature caches at the same step size; further
rejections shrink the step.  The final step is clamped so the trajectory
lands exactly on the horizon.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, StepSizeCollapse
from .expaction import ExpActionOptions
from .lowrank import CompressionOptions, LDLTFactor, compress, interpolate
from .schemes import SchemeCoefficients, SchemeSpec, additive_step, multiplicative_step
from .subflows import ProblemData, init_quadrature, update_quadrature

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerParams:
    """PI step-size controller settings.

    k_i / k_p default to 0.2 / p where p is the order of the error estimate.
    epus divides estimates by the step size before comparing against tol.
    The estimate floor and growth cap keep the controller defined when an
    estimate (nearly) vanishes.
    """

    tol: float
    safety: float = 0.9
    k_i: float | None = None
    k_p: float | None = None
    epus: bool = False
    est_floor_factor: float = 1e-4
    growth_cap: float = 5.0
    h_min_factor: float = 1e-12

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidInput(f"tol must be positive, got {self.tol}")
        if not 0.0 < self.safety < 1.0:
            raise InvalidInput(f"safety must lie in (0, 1), got {self.safety}")

    def gains(self, p_est: int) -> tuple:
        k_i = self.k_i if self.k_i is not None else 0.2 / p_est
        k_p = self.k_p if self.k_p is not None else 0.2 / p_est
        return k_i, k_p


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one accepted step (plus how hard it was to get there)."""

    t: float
    h: float
    err_est: float | None
    accepted: bool
    rejections: int
    rank: int
    fresh_quad_blocks: int
    clamped: bool = False


@dataclass
class Trajectory:
    """Accepted step records plus the stored factors.

    factors[0] is the initial factor and factors[i] the result of step i;
    when factor storage is disabled only the initial and final factors are
    kept.
    """

    records: list = field(default_factory=list)
    factors: list = field(default_factory=list)
    store_factors: bool = True

    @property
    def final(self) -> LDLTFactor:
        return self.factors[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def append(self, record: StepRecord, factor: LDLTFactor) -> None:
        self.records.append(record)
        if self.store_factors or len(self.factors) <= 1:
            self.factors.append(factor)
        else:
            self.factors[-1] = factor

    def interpolate_at(self, t: float,
                       opts: CompressionOptions = CompressionOptions()) -> LDLTFactor:
        """Piecewise-linear factor interpolant at time t (needs stored factors)."""
        if not self.store_factors:
            raise InvalidInput("trajectory was run without factor storage")
        times = np.concatenate([[self.records[0].t - self.records[0].h], self.times])
        if not times[0] <= t <= times[-1]:
            raise InvalidInput(f"t={t:g} outside the computed range")
        idx = int(np.searchsorted(times, t, side="right"))
        idx = min(max(idx, 1), times.size - 1)
        t0, t1 = times[idx - 1], times[idx]
        alpha = 1.0 if t1 == t0 else float((t1 - t) / (t1 - t0))
        return interpolate(self.factors[idx - 1], self.factors[idx], alpha, opts)


def pi_update(e_prev: float, e_new: float, h: float, params: ControllerParams,
              p_est: int) -> float:
    """PI-controlled next step size from the last two (scaled) estimates.

    Estimates are clamped from below so a vanishing estimate cannot blow the
    step up; growth is capped.  Scale-invariant: scaling both estimates and
    the tolerance by a common factor leaves the result unchanged.
    """
    k_i, k_p = params.gains(p_est)
    floor = params.est_floor_factor * params.safety * params.tol
    e_new = max(e_new, floor)
    e_prev = max(e_prev, floor)
    factor = (params.safety * params.tol / e_new) ** k_i * (e_prev / e_new) ** k_p
    return h * min(factor, params.growth_cap)


def reject_resize(e_new: float, h: float, params: ControllerParams,
                  est_order: int) -> float:
    """Step size to retry with after a (repeated) rejection."""
    if e_new <= 0:
        raise InvalidInput("rejection requires a positive estimate")
    return h * (params.safety * params.tol / e_new) ** (1.0 / est_order)


def default_quad_degree(spec: SchemeSpec, variant: str = "scheme_order") -> int:
    """Quadrature exactness degree: scheme order + 1 by default, or the
    stage-count variant (stages + 1) used by the full driver's cheaper rule."""
    if variant == "scheme_order":
        return spec.order + 1
    if variant == "stage_order":
        return spec.stages + 1
    raise InvalidInput(f"unknown quadrature degree variant {variant!r}")


class QuadraturePool:
    """One quadrature state per substep divisor, evolved incrementally.

    The pool owns the states; prepare() moves every divisor's state to the
    new step size via the incremental update, reset() forces a full
    recomputation (the first-rejection rule).  Both return the number of
    freshly computed blocks.
    """

    def __init__(self, problem: ProblemData, degree: int,
                 exp_opts: ExpActionOptions, comp_opts: CompressionOptions):
        self.problem = problem
        self.degree = degree
        self.exp_opts = exp_opts
        self.comp_opts = comp_opts
        self.states: dict = {}

    def prepare(self, h: float, divisors) -> int:
        fresh = 0
        for k in divisors:
            sub = h / k
            if k in self.states:
                self.states[k] = update_quadrature(
                    self.states[k], sub, self.problem, self.exp_opts, self.comp_opts
                )
            else:
                self.states[k] = init_quadrature(
                    self.problem, sub, self.degree, self.exp_opts, self.comp_opts
                )
            fresh += self.states[k].fresh_blocks
        return fresh

    def reset(self, h: float, divisors) -> int:
        fresh = 0
        for k in divisors:
            self.states[k] = init_quadrature(
                self.problem, h / k, self.degree, self.exp_opts, self.comp_opts
            )
            fresh += self.states[k].fresh_blocks
        return fresh


def _log_core_floor(factor: LDLTFactor, t: float) -> None:
    # Positivity is not guaranteed by the format; observe it instead.
    if factor.rank and logger.isEnabledFor(logging.DEBUG):
        logger.debug("t=%.6g min core eigenvalue %.3e", t, float(np.diag(factor.D).min()))


def _make_executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None


def integrate_fixed(
    problem: ProblemData,
    spec: SchemeSpec,
    n_steps: int,
    exp_opts: ExpActionOptions = ExpActionOptions(),
    comp_opts: CompressionOptions = CompressionOptions(),
    quad_degree: int | None = None,
    threads: int = 1,
    store_factors: bool = True,
) -> Trajectory:
    """Integrate with n_steps equal steps of the chosen scheme.

    Quadrature states are built once per substep size and reused for every
    step; their initial cost is attributed to the first record.
    """
    if n_steps < 1:
        raise InvalidInput(f"n_steps must be >= 1, got {n_steps}")
    h = problem.horizon / n_steps
    degree = quad_degree if quad_degree is not None else default_quad_degree(spec)
    pool = QuadraturePool(problem, degree, exp_opts, comp_opts)
    divisors = spec.substep_divisors()
    init_fresh = pool.prepare(h, divisors)
    coeffs = SchemeCoefficients.for_spec(spec) if spec.is_additive else None
    executor = _make_executor(threads)

    trajectory = Trajectory(store_factors=store_factors)
    current = compress(problem.p0, comp_opts)
    trajectory.factors.append(current)
    try:
        for i in range(1, n_steps + 1):
            if spec.is_additive:
                current, estimate = additive_step(
                    current, h, spec, coeffs, problem, pool.states,
                    exp_opts, comp_opts, executor,
                )
            else:
                current = multiplicative_step(
                    current, h, spec.kind, problem, pool.states,
                    exp_opts, comp_opts, spec.operator_order,
                )
                estimate = None
            t = problem.horizon if i == n_steps else i * h
            _log_core_floor(current, t)
            trajectory.append(
                StepRecord(t, h, estimate, True, 0, current.rank,
                           init_fresh if i == 1 else 0),
                current,
            )
    finally:
        if executor is not None:
            executor.shutdown()
    return trajectory


def integrate_adaptive(
    problem: ProblemData,
    spec: SchemeSpec,
    h1: float,
    params: ControllerParams,
    exp_opts: ExpActionOptions = ExpActionOptions(),
    comp_opts: CompressionOptions = CompressionOptions(),
    quad_degree: int | None = None,
    threads: int = 1,
    store_factors: bool = True,
) -> Trajectory:
    """Adaptive integration with the embedded estimate and a PI controller.

    Requires an additive scheme with at least two stages.  Raises
    StepSizeCollapse (carrying the partial trajectory) if the controller
    drives the step below h_min_factor * horizon.
    """
    if not spec.is_additive or spec.stages < 2:
        raise InvalidInput("adaptive integration needs an additive scheme with >= 2 stages")
    if h1 <= 0:
        raise InvalidInput(f"h1 must be positive, got {h1}")
    p_est = spec.embedded_order
    coeffs = SchemeCoefficients.for_spec(spec)
    degree = quad_degree if quad_degree is not None else default_quad_degree(spec)
    pool = QuadraturePool(problem, degree, exp_opts, comp_opts)
    divisors = spec.substep_divisors()
    executor = _make_executor(threads)
    h_min = params.h_min_factor * problem.horizon

    trajectory = Trajectory(store_factors=store_factors)
    current = compress(problem.p0, comp_opts)
    trajectory.factors.append(current)
    t = 0.0
    h = h1
    clamped = False
    if t + h > problem.horizon:
        h = problem.horizon - t
        clamped = True
    e_prev = params.safety * params.tol

    try:
        while True:
            rejections = 0
            fresh = 0
            while True:
                fresh += pool.prepare(h, divisors)
                candidate, estimate = additive_step(
                    current, h, spec, coeffs, problem, pool.states,
                    exp_opts, comp_opts, executor,
                )
                e_cmp = estimate / h if params.epus else estimate
                if e_cmp <= params.tol:
                    break
                rejections += 1
                if rejections == 1:
                    fresh += pool.reset(h, divisors)
                    continue
                h = reject_resize(e_cmp, h, params, p_est)
                clamped = False
                if h < h_min:
                    raise StepSizeCollapse(
                        f"step size {h:.3e} fell below the floor {h_min:.3e} at t={t:g}",
                        trajectory=trajectory,
                    )
            current = candidate
            t = problem.horizon if clamped else t + h
            _log_core_floor(current, t)
            trajectory.append(
                StepRecord(t, h, e_cmp, True, rejections, current.rank, fresh, clamped),
                current,
            )
            if t >= problem.horizon:
                break
            h_next = pi_update(e_prev, e_cmp, h, params, p_est)
            e_prev = e_cmp
            h = h_next
            clamped = False
            if t + h > problem.horizon:
                h = problem.horizon - t
                clamped = True
    finally:
        if executor is not None:
            executor.shutdown()
    return trajectory


def estimate_derivatives(
    factor: LDLTFactor,
    problem: ProblemData,
    comp_opts: CompressionOptions = CompressionOptions(),
):
    """Factored estimates of the first and second time derivatives at the
    given state, for interpolation-error bounds.

    Both derivatives follow from the right-hand side and its differentiated
    form; each costs one application of A^T to a block plus one compression.
    """
    l0, d0 = factor.L, factor.D
    r = factor.rank
    rq = problem.q.rank

    al = problem.a.apply_transpose(l0) if r else np.zeros((problem.n, 0))
    lt = np.hstack([al, l0, problem.q.L])
    dt = np.zeros((2 * r + rq, 2 * r + rq))
    if r:
        cross = l0.T @ problem.s.apply(l0)
        dt[0:r, r:2 * r] = d0
        dt[r:2 * r, 0:r] = d0
        dt[r:2 * r, r:2 * r] = -d0 @ cross @ d0
    if rq:
        dt[2 * r:, 2 * r:] = problem.q.D
    pdot = compress(LDLTFactor(lt, dt), comp_opts)

    lt_c, dt_c = pdot.L, pdot.D
    rt = pdot.rank
    alt = problem.a.apply_transpose(lt_c) if rt else np.zeros((problem.n, 0))
    lh = np.hstack([alt, lt_c, l0])
    dh = np.zeros((2 * rt + r, 2 * rt + r))
    if rt:
        dh[0:rt, rt:2 * rt] = dt_c
        dh[rt:2 * rt, 0:rt] = dt_c
        if r:
            cross_t = lt_c.T @ problem.s.apply(l0)
            coupling = dt_c @ cross_t @ d0
            dh[rt:2 * rt, 2 * rt:] = -coupling
            dh[2 * rt:, rt:2 * rt] = -coupling.T
    pddot = compress(LDLTFactor(lh, dh), comp_opts)
    return pdot, pddot


def interpolation_error_bound(tol: float, h: float, pddot_norm: float) -> float:
    """Bound on the piecewise-linear interpolation error over one step."""
    return tol + h * h * pddot_norm / 8.0
