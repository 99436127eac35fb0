import numpy as np
import pytest

from dresplit import (
    InvalidInput,
    RunConfig,
    SchemeSpec,
    StudySpec,
    generate_problem,
    run_study,
    run_validation,
)
from dresplit.study import fit_order, run_fixed_ladder, scheme_label


class TestConfig:
    def test_exactly_one_mode(self):
        with pytest.raises(InvalidInput):
            RunConfig(n_steps=10, tol=1e-3, h1=0.1)
        with pytest.raises(InvalidInput):
            RunConfig()

    def test_adaptive_needs_h1(self):
        with pytest.raises(InvalidInput):
            RunConfig(tol=1e-3)

    def test_json_roundtrip(self):
        config = RunConfig(scheme="asym", stages=3, n_steps=16, exp_tol=1e-9,
                           comp_tol=1e-12, threads=2, seed=42)
        back = RunConfig.from_json(config.to_json())
        assert back == config

    def test_positive_tolerances(self):
        with pytest.raises(InvalidInput):
            RunConfig(n_steps=4, exp_tol=-1.0)


class TestStudySpec:
    def test_short_ladder_rejected(self):
        with pytest.raises(InvalidInput):
            StudySpec(ladder=(4, 8))

    def test_unknown_reference(self):
        with pytest.raises(InvalidInput):
            StudySpec(reference="exact")

    def test_labels(self):
        assert scheme_label(SchemeSpec("lie")) == "lie"
        assert scheme_label(SchemeSpec("sym", 3)) == "sym3"


class TestFitOrder:
    def test_exact_power(self):
        hs = np.array([0.1, 0.05, 0.025, 0.0125])
        errs = 3.0 * hs**2
        slope, npts = fit_order(hs, errs, (1e-16, 1.0))
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert npts == 4

    def test_window_filtering(self):
        hs = np.array([0.1, 0.05, 0.025])
        errs = np.array([0.5, 1e-5, 1e-6])
        slope, npts = fit_order(hs, errs, (1e-8, 1e-3))
        assert npts == 2

    def test_insufficient_points(self):
        slope, npts = fit_order([0.1, 0.05], [1.0, 1.0], (1e-8, 1e-3))
        assert np.isnan(slope) and npts == 0


class TestLadder:
    def test_finest_reference_policy(self):
        problem = generate_problem("random_lowrank", 6, 2, seed=4, horizon=0.4)
        study = StudySpec(
            schemes=(SchemeSpec("strang"), SchemeSpec("sym", 2)),
            ladder=(4, 8, 16),
            reference="finest",
        )
        config = RunConfig(n_steps=4, exp_tol=1e-11, comp_tol=1e-14)
        rows, slopes, failures = run_fixed_ladder(problem, study, config)
        assert not failures
        assert len(rows) == 6
        errs = {(r[0], r[2]): r[4] for r in rows}
        # Errors shrink with the ladder for both schemes.
        assert errs[("strang", 16)] < errs[("strang", 4)]
        assert errs[("sym2", 16)] < errs[("sym2", 4)]

    def test_failures_logged_not_raised(self, tmp_path):
        problem = generate_problem("random_lowrank", 6, 2, seed=4, horizon=0.4)
        study = StudySpec(
            schemes=(SchemeSpec("strang"),),
            ladder=(4, 8, 16),
        )
        # An unreachable exponential tolerance fails each run but the study
        # must complete and record the failures.
        config = RunConfig(
            scheme="strang", stages=1, n_steps=4,
            exp_tol=5e-16, comp_tol=1e-14,
        )
        report = run_study(problem, study, config, "order", tmp_path)
        assert report.failures
        assert (tmp_path / "summary.txt").read_text().count("FAILED run") >= 1


class TestValidation:
    def test_all_checks_pass(self):
        results = run_validation(seed=1, n_instances=8)
        assert len(results) == 4
        for name, ok, detail in results:
            assert ok, f"{name}: {detail}"
