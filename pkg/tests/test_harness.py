"""Monte Carlo engine: draw accounting, determinism, aggregate integrity."""

import math

import numpy as np
import pytest

from macfusion import estimation as est
from macfusion import detection as det
from macfusion import harness, noise, transmit as tx
from macfusion.numerics import RngStream, split_stream


class HalfStream:
    """Stub stream whose uniforms are all 0.5, i.e. zero-median draws."""

    def __init__(self):
        self.counter = 0

    def uniforms(self, count):
        self.counter += count
        return np.full(count, 0.5)


def _est_setup(**kwargs):
    base = dict(
        theta=1.0,
        L=50,
        sigmas=est.constant_sigmas(1.0),
        noise=noise.gaussian(1.0),
        transmit=tx.tanh_fn(0.75),
        total_power=10.0,
        channel_noise_var=1.0,
    )
    base.update(kwargs)
    return est.EstimationSetup(**base)


def _det_setup(**kwargs):
    base = dict(
        theta=math.sqrt(10.0),
        L=20,
        sigmas=est.constant_sigmas(1.0),
        noise=noise.gaussian(1.0),
        transmit=tx.tanh_fn(1.0),
        total_power=10**0.3,
        channel_noise_var=1.0,
        priors=(0.5, 0.5),
    )
    base.update(kwargs)
    return det.DetectionSetup(**base)


class TestSimulateChannel:
    def test_zero_noise_odd_transmit_gives_zero(self):
        setup = _est_setup(theta=0.0)
        out = harness.simulate_channel(setup, HalfStream())
        assert out.y_L == 0.0 and out.z_L == 0.0

    def test_zero_noise_linear_arithmetic(self):
        """linear alpha=1, theta=1, P_T=L: y_L = sqrt(P_T/L) * L = L."""
        setup = _est_setup(transmit=tx.linear_fn(1.0), L=16, total_power=16.0)
        out = harness.simulate_channel(setup, HalfStream())
        assert out.y_L == pytest.approx(16.0, rel=1e-12)

    def test_normalization_identity_exact(self):
        setup = _est_setup(L=7)
        out = harness.simulate_channel(setup, RngStream(5, 0))
        assert out.z_L * math.sqrt(7) == out.y_L  # exact, by construction

    def test_draw_order_contract(self):
        """Sensor i consumes one draw, the channel one more, per trial."""
        setup = _est_setup(L=33)
        stream = RngStream(6, 0)
        harness.simulate_channel(setup, stream)
        assert stream.counter == 33 + 1
        harness.simulate_channel(setup, stream)
        assert stream.counter == 2 * (33 + 1)

    def test_trial_stream_determinism(self):
        setup = _est_setup()
        a = harness.simulate_channel(setup, split_stream(RngStream(9, 0), 3))
        b = harness.simulate_channel(setup, split_stream(RngStream(9, 0), 3))
        assert a == b

    def test_instantaneous_power_within_cap(self):
        """rho * f(x)^2 <= rho * c^2 over 1e6 heavy-tailed draws."""
        setup = _est_setup(noise=noise.cauchy(1.0))
        c = tx.bound(setup.transmit)
        draws = noise.sample(setup.noise, RngStream(10, 0), 10**6)
        fx = tx.eval_fn(setup.transmit, setup.theta + draws)
        assert np.all(setup.rho * fx**2 <= setup.rho * c**2 * (1 + 1e-15))


class TestEstimationExperiment:
    def test_reproducible_bitwise(self):
        setup = _est_setup()
        a = harness.run_estimation_experiment(setup, 500, 42)
        b = harness.run_estimation_experiment(setup, 500, 42)
        assert np.array_equal(a.estimates, b.estimates)
        assert a.aggregates == b.aggregates

    def test_seed_changes_results(self):
        setup = _est_setup()
        a = harness.run_estimation_experiment(setup, 200, 1)
        b = harness.run_estimation_experiment(setup, 200, 2)
        assert not np.array_equal(a.estimates, b.estimates)

    def test_aggregates_recomputable_exactly(self):
        summary = harness.run_estimation_experiment(_est_setup(), 300, 7)
        assert harness.recompute_aggregates(summary) == summary.aggregates

    def test_block_size_does_not_change_draws(self):
        setup = _est_setup()
        a = harness.run_estimation_experiment(setup, 500, 42, block_size=64)
        b = harness.run_estimation_experiment(setup, 500, 42, block_size=4096)
        assert np.array_equal(a.estimates, b.estimates)

    def test_af_and_bounded_share_draws(self):
        """Paired comparison: identical streams feed both estimators."""
        setup = _est_setup()
        stats = harness.run_signal_statistics(setup, 50, 42)
        af = harness.run_estimation_experiment(setup, 50, 42, estimator="af")
        assert np.array_equal(af.estimates, stats["af_estimates"])

    def test_clamp_count_surfaces(self):
        """A tiny network with huge channel noise must clamp sometimes."""
        setup = _est_setup(L=2, channel_noise_var=400.0)
        summary = harness.run_estimation_experiment(setup, 200, 3)
        assert summary.clamp_count > 0
        assert np.all(np.isfinite(summary.estimates))


class TestDetectionExperiment:
    def test_reproducible(self):
        setup = _det_setup()
        a = harness.run_detection_experiment(setup, 1000, 11)
        b = harness.run_detection_experiment(setup, 1000, 11)
        assert np.array_equal(a.errors, b.errors)
        assert a.aggregates == b.aggregates

    def test_aggregates_recomputable(self):
        summary = harness.run_detection_experiment(_det_setup(), 2000, 12)
        assert harness.recompute_aggregates(summary) == summary.aggregates

    def test_zero_theta_coin_flip(self):
        summary = harness.run_detection_experiment(_det_setup(theta=0.0), 4000, 13)
        pe = summary.aggregates["pe"]
        assert abs(pe - 0.5) < 3.0 * summary.aggregates["stderr"] + 0.01


class TestSweep:
    def test_single_point_equals_direct_run(self):
        setup = _est_setup()
        [(value, summary)] = harness.sweep("L", [50], setup, 100, 21)
        direct = harness.run_estimation_experiment(setup, 100, 21, stream_id_base=0, experiment_id="L=50")
        assert value == 50
        assert np.array_equal(summary.estimates, direct.estimates)

    def test_worker_count_invariance(self):
        setup = _est_setup()
        serial = harness.sweep("omega", [0.5, 0.75, 1.0, 1.5], setup, 200, 33, workers=1)
        threaded = harness.sweep("omega", [0.5, 0.75, 1.0, 1.5], setup, 200, 33, workers=4)
        for (va, sa), (vb, sb) in zip(serial, threaded):
            assert va == vb
            assert np.array_equal(sa.estimates, sb.estimates)

    def test_points_are_independently_seeded(self):
        setup = _est_setup()
        rows = harness.sweep("theta", [1.0, 1.0], setup, 100, 44)
        assert not np.array_equal(rows[0][1].estimates, rows[1][1].estimates)

    def test_detection_sweep_dispatch(self):
        rows = harness.sweep("omega", [0.5, 1.0], _det_setup(), 500, 55)
        assert all("pe" in s.aggregates for _, s in rows)

    def test_sigma_growth_parameter(self):
        setup = _est_setup()
        swept = harness.apply_sweep_parameter(setup, "sigma_growth", 2.0)
        assert swept.sigmas.kind == est.SQRT_GROWTH
        assert swept.sigmas.sigma == 2.0

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ValueError):
            harness.apply_sweep_parameter(_est_setup(), "power", 1.0)

    def test_empty_values_rejected(self):
        with pytest.raises(ValueError):
            harness.sweep("L", [], _est_setup(), 10, 1)
