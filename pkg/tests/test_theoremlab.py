import numpy as np
import pytest

from blflab.activations import BoundedFn, blf_critical_points, softmax
from blflab.losses import LossSpec, loss_gradient, one_hot
from blflab.theoremlab import (
    FreeLogitRun,
    check_label_smoothing_optimum,
    check_logit_squeezing_optimum,
    divergence_report,
    lipschitz_evidence,
    optimize_free_logits,
)

Z_MAX = blf_critical_points().z_max


def run_to_convergence(spec, activation=None, m=10, steps=200_000, lr=None):
    run = FreeLogitRun(spec=spec, activation=activation, m=m, steps=steps, lr=lr, record_every=1000)
    return optimize_free_logits(run)


class TestDescentMechanics:
    def test_input_validation(self):
        with pytest.raises(ValueError):
            optimize_free_logits(FreeLogitRun(spec=LossSpec("ce"), m=1))
        with pytest.raises(ValueError):
            optimize_free_logits(FreeLogitRun(spec=LossSpec("ce"), steps=0))
        with pytest.raises(ValueError):
            optimize_free_logits(FreeLogitRun(spec=LossSpec("ce"), lr=-0.1))

    def test_loss_monotone_at_small_lr(self):
        # Guaranteed only for small steps; 0.05 is within the smooth regime.
        for activation in (None, BoundedFn("blf"), BoundedFn("tanh")):
            run = FreeLogitRun(
                spec=LossSpec("ce"), activation=activation, m=4, steps=3000, lr=0.05
            )
            traj = optimize_free_logits(run).trajectory
            assert np.all(np.diff(traj.loss) <= 1e-9)

    def test_gradient_matches_loss_module_along_trajectory(self):
        run = optimize_free_logits(FreeLogitRun(spec=LossSpec("ce"), m=5, steps=200, lr=0.1))
        p = one_hot(5, 0)
        for idx in (0, 50, 199):
            z = run.trajectory.logits[idx]
            np.testing.assert_allclose(
                loss_gradient(LossSpec("ce"), z, p), softmax(z) - p.probs, atol=1e-15
            )

    def test_symmetric_smoothing_converges_immediately(self):
        # alpha = 1/2 with two classes targets the uniform distribution; the
        # zero start is already optimal.
        run = run_to_convergence(LossSpec("label_smoothing", alpha=0.5), m=2)
        assert run.converged
        np.testing.assert_allclose(softmax(run.trajectory.final_logits()), [0.5, 0.5])


class TestCrossEntropyDivergence:
    def test_binary_norm_growth(self):
        # Oracle values for lr=0.1 descents from zero init: the L-inf norm
        # climbs 2.6395 -> 3.7990 between steps 1000 and 10000 and keeps rising.
        run = optimize_free_logits(
            FreeLogitRun(spec=LossSpec("ce"), m=2, steps=10_000, lr=0.1, grad_tol=0.0)
        )
        report = divergence_report(run, of="logits")
        assert report.monotone_tail
        assert report.norms_at[1000] == pytest.approx(2.6395217704, abs=1e-6)
        assert report.norms_at[10_000] == pytest.approx(3.7989727224, abs=1e-6)
        assert report.norms_at[10_000] > report.norms_at[1000]

    def test_ten_class_norm_exceeds_threshold(self):
        run = optimize_free_logits(
            FreeLogitRun(spec=LossSpec("ce"), m=10, steps=10_000, lr=0.1, grad_tol=0.0)
        )
        report = divergence_report(run, of="logits")
        assert report.diverged
        assert report.final_linf == pytest.approx(8.2822255767, abs=1e-6)


class TestMonotoneHookDivergence:
    def test_tanh_logits_bounded_while_pre_logits_grow(self):
        gamma = 1.0
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("tanh", gamma=gamma),
                m=2,
                steps=10_000,
                lr=3.0,
                grad_tol=0.0,
            )
        )
        traj = run.trajectory
        assert np.all(np.abs(traj.logits) < gamma)
        report = divergence_report(run, of="pre_logits")
        assert report.diverged
        assert report.final_linf > 5.0

    def test_sigmoid_logits_stay_in_open_interval(self):
        gamma = 2.0
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("sigmoid", gamma=gamma),
                m=3,
                steps=5000,
                lr=1.0,
                grad_tol=0.0,
            )
        )
        logits = run.trajectory.logits
        assert np.all(logits > 0.0)
        assert np.all(logits < gamma)


class TestBlfFixedPoints:
    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
    def test_pre_logits_pin_to_peak_location(self, gamma):
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("blf", gamma=gamma),
                m=10,
                steps=60_000,
                record_every=1000,
            )
        )
        pre = run.trajectory.final_pre_logits()
        assert abs(pre[0] - Z_MAX) < 1e-3
        np.testing.assert_allclose(pre[1:], -Z_MAX, atol=1e-3)

    @pytest.mark.parametrize("gamma", [0.5, 1.0])
    def test_logits_strictly_between_gamma_and_golden_bound(self, gamma):
        run = optimize_free_logits(
            FreeLogitRun(
                spec=LossSpec("ce"),
                activation=BoundedFn("blf", gamma=gamma),
                m=4,
                steps=60_000,
                record_every=1000,
            )
        )
        logits = run.trajectory.final_logits()
        bound = gamma * (np.sqrt(5) + 1) / 2
        assert np.all(np.abs(logits) > gamma)
        assert np.all(np.abs(logits) < bound)


class TestLabelSmoothingOptimum:
    def test_target_probability(self):
        run = run_to_convergence(LossSpec("label_smoothing", alpha=0.1), m=10)
        report = check_label_smoothing_optimum(0.1, 10, run)
        assert report.converged
        assert report.residuals["target_prob"] < 1e-4
        assert report.residuals["log_fixed_point_t"] < 1e-6
        assert report.residuals["log_fixed_point_off"] < 1e-6

    def test_off_target_probability(self):
        run = run_to_convergence(LossSpec("label_smoothing", alpha=0.3), m=5)
        sm = softmax(run.trajectory.final_logits())
        np.testing.assert_allclose(sm[1:], 0.075, atol=1e-4)


class TestLogitSqueezingOptimum:
    @pytest.mark.parametrize("lam", [0.5, 1.0, 100.0])
    def test_fixed_point_residual_and_bounds(self, lam):
        run = run_to_convergence(LossSpec("logit_squeezing", lam=lam), m=10)
        report = check_logit_squeezing_optimum(lam, run)
        assert report.converged
        assert report.max_residual() < 1e-6
        assert report.bounds_ok

    def test_large_lam_crushes_norm(self):
        run = run_to_convergence(LossSpec("logit_squeezing", lam=100.0), m=10)
        assert np.abs(run.trajectory.final_logits()).max() <= 0.01

    def test_binary_case(self):
        run = run_to_convergence(LossSpec("logit_squeezing", lam=1.0), m=2)
        report = check_logit_squeezing_optimum(1.0, run)
        assert report.max_residual() < 1e-6


class TestLipschitzEvidence:
    def test_gap_grows_binary(self):
        report = lipschitz_evidence(2, 0, 1, checkpoints=(100, 1000, 10_000))
        assert report.strictly_increasing
        # Twice the single-run norm by symmetry of the two descents.
        assert report.gaps[-1] == pytest.approx(7.5979454447, abs=1e-6)

    def test_identical_targets_have_zero_gap(self):
        report = lipschitz_evidence(4, 2, 2, checkpoints=(100, 1000))
        assert report.gaps == [0.0, 0.0]
        assert not report.strictly_increasing

    def test_ten_class_gap_ratio(self):
        report = lipschitz_evidence(10, 0, 1, checkpoints=(100, 10_000))
        assert report.gaps[1] > 2 * report.gaps[0]
