import numpy as np
import pytest

from heisenberg import config
from heisenberg.bubble import (
    BubbleSpec, U_eps_values, U_field, U_values, cutoff_values, eval_cutoff, eval_U, eval_U_eps,
    eval_u_eps, exact_kappa, exact_lp_power, grad_U_eps_values, gradient_sup_ratio,
    horizontal_gradient_U_eps, increment_bound_check, increment_constant, make_spec, mode_sigma,
    smooth_step, sup_ratio, u_eps_values, ubar_field, ustar_field,
)
from heisenberg.errors import InvalidArgumentError
from heisenberg.hgroup import GroupPoint, compose_arr, dilate_arr, hnorm, hnorm_arr


class TestProfile:
    def test_value_example(self):
        spec = make_spec(1, 0.5)
        assert eval_U(spec, GroupPoint([0.0], [0.0], np.sqrt(3.0))) == pytest.approx(4 ** -0.75)

    def test_maximum_at_origin(self, spec, rng):
        pts = rng.standard_normal((1000, 3))
        assert np.all(U_values(spec, pts) <= U_values(spec, np.zeros(3)))

    def test_decay_bound(self, spec, rng):
        pts = 5.0 * rng.standard_normal((5000, 3))
        bound = spec.C * hnorm_arr(pts) ** (-spec.params.bubble_exponent)
        assert np.all(U_values(spec, pts) <= bound)

    def test_U_eps_is_critical_rescale(self, spec, rng):
        pts = rng.standard_normal((100, 3))
        field = U_field(spec).critical_rescale(1.0 / 0.5, spec.params)
        np.testing.assert_allclose(U_eps_values(spec.with_eps(0.5), pts), field(pts), rtol=1e-12)

    def test_spec_rejects_nonpositive(self, gp):
        with pytest.raises(InvalidArgumentError):
            BubbleSpec(params=gp, eps=0.0)
        with pytest.raises(InvalidArgumentError):
            BubbleSpec(params=gp, kappa=-1.0)


class TestCutoff:
    def test_smooth_step_values(self):
        assert float(smooth_step(0.5)) == pytest.approx(0.5)
        np.testing.assert_array_equal(smooth_step([-1.0, 0.0, 1.0, 2.0]), [1.0, 1.0, 0.0, 0.0])

    def test_smooth_step_monotone(self):
        x = np.linspace(-0.5, 1.5, 2001)
        assert np.all(np.diff(smooth_step(x)) <= 1e-15)

    def test_cutoff_regions(self, rng):
        pts = 3.0 * rng.standard_normal((5000, 3))
        rho = hnorm_arr(pts)
        phi = cutoff_values(1.0, pts)
        assert np.all(phi[rho <= 1.0] == 1.0)
        assert np.all(phi[rho >= 2.0] == 0.0)
        assert np.all((phi >= 0.0) & (phi <= 1.0))

    def test_truncated_family_support(self, spec, rng):
        pts = 3.0 * rng.standard_normal((5000, 3))
        rho = hnorm_arr(pts)
        u = u_eps_values(spec, pts)
        big = U_eps_values(spec, pts)
        np.testing.assert_allclose(u[rho <= spec.r], big[rho <= spec.r])
        assert np.all(u[rho >= 2.0 * spec.r] == 0.0)


class TestPointForms:
    def test_truncated_equals_bubble_inside(self, spec):
        p = GroupPoint([0.3], [-0.2], 0.4)
        assert hnorm(p) < spec.r
        assert eval_u_eps(spec, p) == pytest.approx(eval_U_eps(spec, p), rel=1e-14)

    def test_truncated_vanishes_outside(self, spec):
        assert eval_u_eps(spec, GroupPoint([2.5], [0.0], 0.0)) == 0.0
        assert eval_u_eps(spec, GroupPoint([0.0], [0.0], 9.0)) == 0.0

    def test_cutoff_midpoint(self):
        p = GroupPoint([1.5], [0.0], 0.0)
        assert eval_cutoff(1.0, p) == pytest.approx(0.5, abs=1e-12)
        with pytest.raises(InvalidArgumentError):
            eval_cutoff(0.0, p)

    def test_gradient_point_form(self, spec):
        p = GroupPoint([0.3], [0.7], -0.2)
        np.testing.assert_allclose(horizontal_gradient_U_eps(spec, p),
                                   grad_U_eps_values(spec, p.as_array()[None, :])[0], rtol=1e-14)

    def test_field_at_point(self, spec):
        p = GroupPoint([0.1], [0.2], 0.3)
        assert U_field(spec).at(p) == pytest.approx(eval_U(spec, p), rel=1e-14)

    def test_joint_rotation_symmetry(self, rng):
        spec = make_spec(2, 0.5)
        rot, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        pts = rng.standard_normal((500, 5))
        turned = pts.copy()
        turned[:, :4] = pts[:, :4] @ rot.T
        np.testing.assert_allclose(U_values(spec, turned), U_values(spec, pts), rtol=1e-12)

    def test_scaling_chain(self, rng):
        spec = make_spec(1, 0.25, kappa=2.0, sigma=3.0)
        pts = rng.standard_normal((200, 3))
        ustar = ustar_field(spec)
        np.testing.assert_allclose(ustar(pts), ubar_field(spec)(dilate_arr(1.0 / 3.0, pts)), rtol=1e-12)
        np.testing.assert_allclose(U_eps_values(spec.with_eps(1.0), pts), ustar(pts), rtol=1e-12)


class TestGradient:
    @pytest.mark.parametrize("N", [1, 2])
    def test_matches_finite_differences(self, rng, N):
        spec = make_spec(N, 0.25, eps=0.5)
        dim = 2 * N + 1
        pts = 0.7 * rng.standard_normal((1000, dim))
        grad = grad_U_eps_values(spec, pts)
        h = 1e-5
        fd = np.empty_like(grad)
        for j in range(2 * N):
            step = np.zeros(dim)
            step[j] = h
            # left-invariant field: derivative along p o (h e_j)
            fd[:, j] = (U_eps_values(spec, compose_arr(pts, step)) -
                        U_eps_values(spec, compose_arr(pts, -step))) / (2.0 * h)
        scale = np.linalg.norm(grad, axis=1, keepdims=True)
        assert np.all(np.abs(fd - grad) <= 1e-6 * scale + 1e-9)


class TestClosedForms:
    @pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.9])
    def test_critical_integral_is_s_independent(self, s):
        spec = make_spec(1, s)
        assert exact_lp_power(spec, spec.params.Qstar) == pytest.approx(np.pi ** 2 / 4.0, rel=1e-12)

    def test_kappa_is_root(self, spec):
        p = spec.params.Qstar
        assert exact_kappa(spec) ** p == pytest.approx(exact_lp_power(spec, p))

    def test_non_integrable_power(self):
        spec = make_spec(1, 0.25)
        with pytest.raises(InvalidArgumentError):
            exact_lp_power(spec, 1.0)


class TestSerialization:
    def test_spec_round_trip(self, tmp_path):
        spec = make_spec(1, 0.5, kappa=1.2345678901234567, sigma=3.5)
        path = tmp_path / "spec.json"
        spec.save(path)
        assert BubbleSpec.load(path) == spec

    def test_missing_field(self):
        with pytest.raises(InvalidArgumentError):
            BubbleSpec.from_dict({"N": 1})


class TestLemmaConstants:
    def test_sup_ratio_bounded_in_eps(self, spec):
        values = [sup_ratio(spec.with_eps(e), samples=2000) for e in (0.25, 0.18, 0.125)]
        assert max(values) / min(values) <= 2.0

    def test_increment_far_pairs_vanish(self, spec):
        row = increment_constant(spec.with_eps(0.25), samples=5000)
        assert row["far_pairs_zero"]
        assert row["pairs"] > 0
        assert np.isfinite(row["constant"]) and row["constant"] > 0

    def test_increment_report(self, spec):
        report = increment_bound_check(spec, samples=2000, eps_grid=(0.25, 0.125))
        assert [row["eps"] for row in report["rows"]] == [0.25, 0.125]
        assert report["growth"] >= 1.0
        assert report["pass"] == (report["growth"] <= 2.0)

    def test_constants_deterministic(self, spec):
        a = increment_constant(spec, samples=2000, seed=4)
        b = increment_constant(spec, samples=2000, seed=4)
        assert a == b

    @pytest.mark.parametrize("ratio", [sup_ratio, gradient_sup_ratio])
    def test_sup_ratios_bounded_on_default_grid(self, sweep_spec, ratio):
        values = [ratio(sweep_spec.with_eps(e), samples=5000) for e in config.DEFAULT_EPS_GRID]
        assert max(values) / min(values) <= config.MAX_CONSTANT_GROWTH

    def test_increment_bound_at_sweep_sigma(self, sweep_spec):
        report = increment_bound_check(sweep_spec, samples=20_000)
        assert [row["eps"] for row in report["rows"]] == [0.5, 0.25, 0.125]
        assert all(row["far_pairs_zero"] for row in report["rows"])
        assert report["pass"], report["growth"]


class TestSigmaModes:
    def test_mode_values(self):
        assert mode_sigma("sweep", 7.0) == config.SWEEP_SIGMA
        assert mode_sigma("unit", 7.0) == 1.0
        assert mode_sigma("sobolev", 7.0) == 7.0

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgumentError):
            mode_sigma("wide", 7.0)

    def test_sweep_scale_is_far_inside_cutoff(self):
        assert config.SWEEP_SIGMA * max(config.DEFAULT_EPS_GRID) <= 0.1 * config.CUTOFF_RADIUS
