"""Time-stepping operators built from the two subflows.

Besides the classical Lie and Strang compositions, the module provides
additive schemes of arbitrary order: weighted sums of repeated Lie-type
chains at fractional substeps h/k, where the weights cancel the low-order
error terms (an extrapolation structure).  Dropping the last chain and
re-weighting yields an embedded lower-order method whose difference from the
full combination is a cheap local error estimate.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CoefficientConditioning, InvalidInput, NoEmbeddedMethod
from .expaction import ExpActionOptions
from .lowrank import CompressionOptions, LDLTFactor, combine, frob_norm
from .subflows import ProblemData, QuadratureState, affine_flow, quadratic_flow

MULTIPLICATIVE_KINDS = ("lie", "strang")
ADDITIVE_KINDS = ("asym", "sym")
EXACT_STAGE_LIMIT = 12

QUADRATIC_FIRST = "quadratic_first"
AFFINE_FIRST = "affine_first"


@dataclass(frozen=True)
class SchemeSpec:
    """Which splitting scheme to run.

    kind is one of lie, strang, asym, sym; stages matters for the additive
    kinds only.  operator_order picks which subflow acts first inside each
    Lie-type substep (the roles are interchangeable).
    """

    kind: str
    stages: int = 1
    operator_order: str = QUADRATIC_FIRST

    def __post_init__(self):
        if self.kind not in MULTIPLICATIVE_KINDS + ADDITIVE_KINDS:
            raise InvalidInput(f"unknown scheme kind {self.kind!r}")
        if self.stages < 1:
            raise InvalidInput(f"stages must be >= 1, got {self.stages}")
        if self.operator_order not in (QUADRATIC_FIRST, AFFINE_FIRST):
            raise InvalidInput(f"unknown operator order {self.operator_order!r}")

    @property
    def order(self) -> int:
        if self.kind == "lie":
            return 1
        if self.kind == "strang":
            return 2
        if self.kind == "asym":
            return self.stages
        return 2 * self.stages

    @property
    def is_additive(self) -> bool:
        return self.kind in ADDITIVE_KINDS

    @property
    def embedded_order(self) -> int | None:
        if not self.is_additive or self.stages < 2:
            return None
        return self.stages - 1 if self.kind == "asym" else 2 * self.stages - 2

    def substep_divisors(self) -> tuple:
        """Divisors k such that the scheme needs a quadrature state at h/k."""
        if self.kind == "lie":
            return (1,)
        if self.kind == "strang":
            return (1,) if self.operator_order == QUADRATIC_FIRST else (2,)
        return tuple(range(1, self.stages + 1))


def _solve_fractions(matrix, rhs):
    """Exact Gaussian elimination with partial pivoting over Fractions."""
    n = len(rhs)
    aug = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(aug[r][col]))
        if aug[pivot][col] == 0:
            raise InvalidInput("coefficient system is singular")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        for r in range(col + 1, n):
            factor = aug[r][col] / aug[col][col]
            if factor:
                aug[r] = [x - factor * y for x, y in zip(aug[r], aug[col])]
    sol = [Fraction(0)] * n
    for row in range(n - 1, -1, -1):
        acc = aug[row][n] - sum(aug[row][c] * sol[c] for c in range(row + 1, n))
        sol[row] = acc / aug[row][row]
    return sol


def _condition_rows(s: int, symmetric: bool):
    """Rows/rhs of the order-condition system, exactly in rationals."""
    rows = []
    rhs = []
    if symmetric:
        rows.append([Fraction(2)] * s)
        rhs.append(Fraction(1))
        for j in range(1, s):
            rows.append([Fraction(1, k ** (2 * j)) for k in range(1, s + 1)])
            rhs.append(Fraction(0))
    else:
        rows.append([Fraction(1)] * s)
        rhs.append(Fraction(1))
        for j in range(1, s):
            rows.append([Fraction(1, k**j) for k in range(1, s + 1)])
            rhs.append(Fraction(0))
    return rows, rhs


def coefficient_residual(gamma, s: int, symmetric: bool) -> float:
    """Largest order-condition residual of the given weights, in floats."""
    rows, rhs = _condition_rows(s, symmetric)
    worst = 0.0
    for row, target in zip(rows, rhs):
        val = float(np.dot([float(x) for x in row], gamma)) - float(target)
        worst = max(worst, abs(val))
    return worst


def additive_coeffs(s: int, symmetric: bool) -> np.ndarray:
    """Chain weights of the s-stage additive scheme (order s, or 2s when
    symmetric).

    The ill-conditioned small system is solved exactly in rationals and
    converted to floats once; stage counts beyond 12 get a conditioning
    warning attached because the conversion itself starts to dominate.
    """
    if s < 1:
        raise InvalidInput(f"stage count must be >= 1, got {s}")
    rows, rhs = _condition_rows(s, symmetric)
    exact = _solve_fractions(rows, rhs)
    gamma = np.array([float(x) for x in exact])
    if s > EXACT_STAGE_LIMIT:
        warnings.warn(
            f"stage count {s} exceeds {EXACT_STAGE_LIMIT}; float conversion of the "
            "weights loses accuracy",
            CoefficientConditioning,
            stacklevel=2,
        )
    residual = coefficient_residual(gamma, s, symmetric)
    budget = 1e-12 * max(1.0, float(np.abs(gamma).sum()))
    if residual > budget:
        raise InvalidInput(
            f"order conditions violated after float conversion (residual {residual:.3e})"
        )
    return gamma


def embedded_coeffs(s: int, symmetric: bool) -> np.ndarray:
    """Weights of the embedded companion: the (s-1)-stage scheme padded with
    a zero, so it reuses the already-computed chains."""
    if s < 2:
        raise NoEmbeddedMethod("a single-stage additive scheme has no embedded companion")
    return np.append(additive_coeffs(s - 1, symmetric), 0.0)


@dataclass(frozen=True)
class SchemeCoefficients:
    """Full-order weights gamma, embedded weights beta (last entry zero) and
    the estimate weights alpha = gamma - beta."""

    gamma: np.ndarray
    beta: np.ndarray | None
    alpha: np.ndarray | None = field(default=None)

    @classmethod
    def for_spec(cls, spec: SchemeSpec) -> "SchemeCoefficients":
        if not spec.is_additive:
            raise InvalidInput("coefficients are defined for additive schemes only")
        symmetric = spec.kind == "sym"
        gamma = additive_coeffs(spec.stages, symmetric)
        if spec.stages < 2:
            return cls(gamma, None, None)
        beta = embedded_coeffs(spec.stages, symmetric)
        return cls(gamma, beta, gamma - beta)


def lie_chain(
    factor: LDLTFactor,
    h: float,
    k: int,
    order: str,
    problem: ProblemData,
    state: QuadratureState,
    exp_opts: ExpActionOptions = ExpActionOptions(),
    comp_opts: CompressionOptions = CompressionOptions(),
) -> LDLTFactor:
    """k repetitions of the Lie-type substep of size h/k.

    order QUADRATIC_FIRST applies the quadratic flow then the affine flow in
    each repetition; AFFINE_FIRST is the reverse.
    """
    if k < 1:
        raise InvalidInput(f"repetition count must be >= 1, got {k}")
    sub = h / k
    if not np.isclose(state.h, sub, rtol=1e-12, atol=0.0):
        raise InvalidInput(f"quadrature state is for h={state.h:g}, substep is {sub:g}")
    current = factor
    for _ in range(k):
        if order == QUADRATIC_FIRST:
            current = quadratic_flow(current, sub, problem.s)
            current = affine_flow(current, sub, problem, state, exp_opts, comp_opts)
        else:
            current = affine_flow(current, sub, problem, state, exp_opts, comp_opts)
            current = quadratic_flow(current, sub, problem.s)
    return current


def multiplicative_step(
    factor: LDLTFactor,
    h: float,
    kind: str,
    problem: ProblemData,
    states: dict,
    exp_opts: ExpActionOptions = ExpActionOptions(),
    comp_opts: CompressionOptions = CompressionOptions(),
    operator_order: str = QUADRATIC_FIRST,
) -> LDLTFactor:
    """One Lie or Strang step in factored form.

    states maps substep divisors to prepared quadrature states (divisor 1
    for Lie and default Strang, divisor 2 for the interchanged Strang).
    """
    if kind == "lie":
        return lie_chain(factor, h, 1, operator_order, problem, states[1],
                         exp_opts, comp_opts)
    if kind != "strang":
        raise InvalidInput(f"unknown multiplicative kind {kind!r}")
    if operator_order == QUADRATIC_FIRST:
        mid = quadratic_flow(factor, h / 2, problem.s)
        mid = affine_flow(mid, h, problem, states[1], exp_opts, comp_opts)
        return quadratic_flow(mid, h / 2, problem.s)
    mid = affine_flow(factor, h / 2, problem, states[2], exp_opts, comp_opts)
    mid = quadratic_flow(mid, h, problem.s)
    return affine_flow(mid, h / 2, problem, states[2], exp_opts, comp_opts)


def additive_step(
    factor: LDLTFactor,
    h: float,
    spec: SchemeSpec,
    coeffs: SchemeCoefficients,
    problem: ProblemData,
    states: dict,
    exp_opts: ExpActionOptions = ExpActionOptions(),
    comp_opts: CompressionOptions = CompressionOptions(),
    executor: ThreadPoolExecutor | None = None,
):
    """One additive step: (next factor, error estimate or None).

    The chains are data-independent and may be evaluated on the given
    executor; the weighted combinations are always formed in fixed
    (k, direction) order, so results do not depend on scheduling.  The
    estimate is the Frobenius norm of the alpha-weighted combination; it is
    None for single-stage schemes, which have no embedded companion.
    """
    if not spec.is_additive:
        raise InvalidInput("additive_step requires an additive scheme spec")
    s = spec.stages
    if spec.kind == "sym":
        directions = (QUADRATIC_FIRST, AFFINE_FIRST)
    else:
        directions = (spec.operator_order,)
    jobs = [(k, d) for k in range(1, s + 1) for d in directions]

    def run(job):
        k, d = job
        return lie_chain(factor, h, k, d, problem, states[k], exp_opts, comp_opts)

    if executor is None:
        chains = [run(job) for job in jobs]
    else:
        chains = list(executor.map(run, jobs))

    gamma_terms = [
        (coeffs.gamma[k - 1], chain) for (k, _), chain in zip(jobs, chains)
    ]
    next_factor = combine(gamma_terms, comp_opts)
    if coeffs.alpha is None:
        return next_factor, None
    alpha_terms = [
        (coeffs.alpha[k - 1], chain) for (k, _), chain in zip(jobs, chains)
    ]
    estimate = frob_norm(combine(alpha_terms, comp_opts))
    return next_factor, estimate
