import numpy as np
import pytest

from heisenberg import asympt, config
from heisenberg.asympt import (
    CSV_COLUMNS, PowerFit, SweepRow, SweepTable, bounded_verdict, fit_power, lemma_report,
    richardson_plateau, strict_drop_check, sweep, validate_grid, verdict,
)
from heisenberg.bubble import exact_lp_power
from heisenberg.errors import InsufficientSignalError, InvalidArgumentError
from heisenberg.quad import QuadratureSpec
from heisenberg.varsolve import assemble_form, build_domain, smallest_eigenpair

GRID = [0.5, 0.35, 0.25, 0.18, 0.125]
SMALL_GRID = [0.25, 0.18, 0.125, 0.09]


def table_of(spec, values, stderrs=None, kind="sup", quantity="synthetic", grid=GRID):
    stderrs = [0.0] * len(values) if stderrs is None else stderrs
    rows = [SweepRow(e, v, se, kind) for e, v, se in zip(grid, values, stderrs)]
    return SweepTable(quantity, rows, spec)


class TestGrid:
    def test_default_grid_is_valid(self):
        assert validate_grid(config.DEFAULT_EPS_GRID) == config.DEFAULT_EPS_GRID

    @pytest.mark.parametrize("grid", [
        [0.5, 0.35, 0.25],                   # too short
        [0.5, 0.35, 0.35, 0.25],             # not strictly decreasing
        [0.5, 0.45, 0.3, 0.2],               # too dense
        [0.5, 0.35, 0.25, -0.1],             # negative
    ])
    def test_rejects_bad_grids(self, grid):
        with pytest.raises(InvalidArgumentError):
            validate_grid(grid)


class TestPowerFit:
    def test_recovers_exact_exponent(self, spec):
        eps = np.array(GRID)
        fit = fit_power(table_of(spec, 3.0 * eps ** 2))
        assert fit.exponent == pytest.approx(2.0, abs=1e-10)
        assert np.exp(fit.intercept) == pytest.approx(3.0, rel=1e-9)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
        assert fit.rows_used == len(GRID)

    def test_baseline_is_subtracted(self, spec):
        eps = np.array(GRID)
        fit = fit_power(table_of(spec, 5.0 + 3.0 * eps ** 2), baseline=5.0)
        assert fit.exponent == pytest.approx(2.0, abs=1e-9)
        np.testing.assert_allclose(fit.predict(eps), 5.0 + 3.0 * eps ** 2, rtol=1e-9)

    def test_negative_excess(self, spec):
        eps = np.array(GRID)
        fit = fit_power(table_of(spec, -2.0 * eps ** 4))
        assert fit.sign == -1
        assert fit.exponent == pytest.approx(4.0, abs=1e-9)

    def test_weighted_fit(self, spec):
        eps = np.array(GRID)
        values = 3.0 * eps ** 2
        fit = fit_power(table_of(spec, values, 0.01 * values, kind="mc"))
        assert fit.exponent == pytest.approx(2.0, abs=1e-9)

    def test_signal_below_noise(self, spec):
        with pytest.raises(InsufficientSignalError):
            fit_power(table_of(spec, [1e-3] * 5, [1.0] * 5, kind="mc"))

    def test_zero_excess(self, spec):
        with pytest.raises(InsufficientSignalError):
            fit_power(table_of(spec, [1.0] * 5), baseline=1.0)

    def test_sign_change(self, spec):
        with pytest.raises(InvalidArgumentError):
            fit_power(table_of(spec, [1.0, -1.0, 1.0, -1.0, 1.0]))

    def test_failed_rows_are_skipped(self, spec):
        eps = np.array(GRID)
        rows = [SweepRow(e, 3.0 * e ** 2, 0.0, "sup") for e in eps[:4]]
        rows.append(SweepRow(eps[4], float("nan"), float("nan"), "mc", "EstimationError: nan"))
        fit = fit_power(SweepTable("synthetic", rows, spec))
        assert fit.rows_used == 4

    def test_too_few_usable_rows(self, spec):
        rows = [SweepRow(0.5, 1.0, 0.0)] + [SweepRow(e, float("nan"), float("nan"), note="x") for e in GRID[1:]]
        with pytest.raises(InsufficientSignalError):
            fit_power(SweepTable("synthetic", rows, spec))


class TestVerdict:
    def fit(self, exponent, r2=0.99):
        return PowerFit(exponent=exponent, intercept=0.0, r_squared=r2, rows_used=5)

    def test_close_exponent_passes(self):
        result = verdict(self.fit(1.95), 2.0, lemma="L6")
        assert result.passed
        assert result.to_dict()["pass"] is True
        assert result.to_dict()["lemma"] == "L6"

    def test_wrong_exponent_fails(self):
        assert verdict(self.fit(1.0), 2.0).status == "fail"

    def test_poor_fit_fails(self):
        assert verdict(self.fit(2.0, r2=0.5), 2.0).status == "fail"

    @pytest.mark.parametrize("tol", [0.0, 1.0, -0.1])
    def test_tolerance_range(self, tol):
        with pytest.raises(InvalidArgumentError):
            verdict(self.fit(2.0), 2.0, tol_rel=tol)

    def test_lower_bound(self):
        assert verdict(self.fit(6.0), 4.0, lower_bound=True).passed
        assert not verdict(self.fit(3.0), 4.0, lower_bound=True).passed
        assert not verdict(self.fit(6.0), 4.0).passed


class TestBounded:
    def test_bounded_constants_pass(self, spec):
        result = bounded_verdict(table_of(spec, [1.0, 1.5, 1.2, 1.9, 1.4]), "L3")
        assert result.passed
        assert result.details["growth"] == pytest.approx(1.9)

    def test_growing_constants_fail(self, spec):
        assert bounded_verdict(table_of(spec, [1.0, 1.5, 2.0, 2.5, 3.0])).status == "fail"

    def test_inconclusive_without_rows(self, spec):
        rows = [SweepRow(e, float("nan"), float("nan"), note="x") for e in GRID]
        assert bounded_verdict(SweepTable("synthetic", rows, spec)).status == "inconclusive"


class TestRichardson:
    def test_exact_plateau(self, spec):
        eps = np.array(GRID)
        plateau, stderr = richardson_plateau(table_of(spec, 2.0 + 3.0 * eps ** 2), 2.0)
        assert plateau == pytest.approx(2.0, rel=1e-12)
        assert stderr == 0.0


class TestSweep:
    def test_unknown_quantity(self, spec, qs):
        with pytest.raises(InvalidArgumentError):
            sweep("entropy", GRID, spec, qs)

    def test_rows_follow_grid_and_repeat(self, spec, qs):
        a = sweep("sup-bound", SMALL_GRID, spec, qs)
        b = sweep("sup-bound", SMALL_GRID, spec, qs)
        np.testing.assert_array_equal(a.eps, SMALL_GRID)
        assert a.rows == b.rows
        assert all(row.kind == "sup" and row.ok for row in a.rows)

    def test_failures_become_annotated_rows(self, spec, qs):
        table = sweep("s-lambda", SMALL_GRID, spec, qs, lam=-1.0)
        assert len(table.rows) == len(SMALL_GRID)
        assert len(table.failures()) == len(SMALL_GRID)
        assert all(row.note.startswith("InvalidArgumentError") for row in table.rows)
        assert np.all(np.isnan(table.values))

    def test_frame_columns(self, spec, qs):
        frame = sweep("sup-bound", SMALL_GRID, spec, qs).to_frame("abc", 7, "0.3.0")
        assert list(frame.columns) == CSV_COLUMNS
        assert len(frame) == len(SMALL_GRID)
        assert set(frame["config_hash"]) == {"abc"}
        assert set(frame["label"]) == {"sup-bound"}


class TestDropCheck:
    def test_zero_lambda_is_skipped(self, spec, qs):
        result = strict_drop_check(0.0, GRID, spec, qs)
        assert result.status == "skipped"

    def test_negative_lambda(self, spec, qs):
        with pytest.raises(InvalidArgumentError):
            strict_drop_check(-1.0, GRID, spec, qs)


class TestLemmaReport:
    def test_unknown_label(self, spec, qs):
        with pytest.raises(InvalidArgumentError):
            lemma_report(spec, qs, GRID, only=["L9"])

    def test_single_bounded_check(self, spec, qs):
        verdicts, tables = lemma_report(spec, qs, SMALL_GRID, only=["L3"])
        assert [v.lemma for v in verdicts] == ["L3"]
        assert verdicts[0].status in ("pass", "fail")
        assert list(tables) == ["sup-bound"]

    def test_insufficient_signal_is_inconclusive(self, spec, monkeypatch):
        def flat(quantity, spec, qs, lam):
            return SweepRow(spec.eps, 1e-6, 1.0, "mc")

        monkeypatch.setattr(asympt, "_evaluate", flat)
        verdicts, _ = lemma_report(spec, QuadratureSpec(samples=1000), GRID, only=["L6"])
        assert verdicts[0].status == "inconclusive"

    def test_bounded_checks_pass_on_default_grid(self, sweep_spec):
        verdicts, tables = lemma_report(sweep_spec, QuadratureSpec(seed=0), only=["L3", "L4", "L5"])
        assert [v.status for v in verdicts] == ["pass", "pass", "pass"]
        for v in verdicts:
            assert v.details["growth"] <= config.MAX_CONSTANT_GROWTH
        np.testing.assert_array_equal(tables["increment"].eps, config.DEFAULT_EPS_GRID)

    def test_drop_runs_at_fixed_sigma(self, sweep_spec, monkeypatch):
        seen = []

        def record(lam, grid, spec, qs):
            seen.append(spec.sigma)
            return asympt.Verdict("drop", "skipped")

        monkeypatch.setattr(asympt, "strict_drop_check", record)
        lemma_report(sweep_spec, QuadratureSpec(samples=1000), only=["drop"], lam=1.0)
        assert seen == [config.DROP_SIGMA]


class TestCriticalNorm:
    def test_plateau_at_sweep_sigma(self, sweep_spec):
        gp = sweep_spec.params
        expected = sweep_spec.sigma ** gp.Q * exact_lp_power(sweep_spec, gp.Qstar) / sweep_spec.kappa ** gp.Qstar
        table = sweep("critical-norm", GRID, sweep_spec, QuadratureSpec(samples=50_000, seed=5))
        assert all(row.ok for row in table.rows)
        for row in table.rows:
            assert abs(row.value - expected) <= 4.0 * row.stderr
        plateau, stderr = richardson_plateau(table, float(gp.Q))
        assert abs(plateau - expected) <= 4.0 * stderr
        for row in table.rows:
            assert abs(row.value - plateau) <= 4.0 * np.hypot(row.stderr, stderr)


@pytest.mark.slow
class TestAcceptance:
    def test_excess_exponents(self, sweep_spec):
        verdicts, tables = lemma_report(sweep_spec, QuadratureSpec(samples=1_000_000, seed=0),
                                        only=["L6", "L7a", "L7b"])
        assert [v.lemma for v in verdicts] == ["L6", "L7a", "L7b"]
        assert all(v.status == "pass" for v in verdicts), [v.to_dict() for v in verdicts]
        l6 = verdicts[0]
        predicted = sweep_spec.params.bubble_exponent
        assert abs(l6.fitted - predicted) <= config.EXPONENT_TOL * predicted
        assert set(tables) == {"seminorm-excess", "l2-norm", "critical-excess"}

    def test_strict_drop_below_first_eigenvalue(self, sweep_spec):
        gp = sweep_spec.params
        dom = build_domain(config.DOMAIN_RADIUS, 2000, gp, seed=0)
        lambda1 = smallest_eigenpair(assemble_form(dom, gp), dom).eigenvalue
        lam = config.LAMBDA_FRACTION * lambda1
        verdicts, _ = lemma_report(sweep_spec, QuadratureSpec(samples=200_000, seed=0), lam=lam, only=["drop"])
        result = verdicts[0]
        assert result.status == "pass", result.details
        assert result.details["sigma"] == config.DROP_SIGMA
        assert result.details["s_lambda"] < result.details["sobolev"]
        assert result.details["margin_sigmas"] >= config.DROP_SIGMAS
