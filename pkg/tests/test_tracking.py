import math
import unittest
from dataclasses import replace

import numpy as np

from qtlink.channel import ChannelGeometry, pointing_loss
from qtlink.errors import InstabilityError, ParameterError
from qtlink.tracking import (
    AcquisitionPhase,
    DisturbanceSpec,
    LinkAcquisition,
    LoopStage,
    PidController,
    TrackingResult,
    bandwidth_of,
    integral_rejection,
    pointing_loss_feed,
    rejection_curve,
    run_cascade,
    simulate_loop,
    stage_bandwidths,
    synthesize_disturbance,
    tune_gains,
)

COARSE = LoopStage(name="coarse", sensor_rate=100.0, target_closed_loop_bandwidth=10.0,
                   sensor_noise_rms=1.0)
FINE = LoopStage(name="fine", sensor_rate=20_000.0, target_closed_loop_bandwidth=190.0,
                 sensor_noise_rms=0.5, actuator_range=1000.0)
TURBULENCE = DisturbanceSpec(drift_amplitude=5.0, turbulence_rms=15.0, turbulence_knee=10.0)
FINE_DT = 2.5e-5


class TestGains(unittest.TestCase):
    def test_tuned_gain_hits_half_rejection(self):
        kp, ki, kd = tune_gains(20_000.0, 190.0)
        self.assertEqual((kp, kd), (0.0, 0.0))
        theta = 2 * math.pi * 190.0 / 20_000.0
        self.assertAlmostEqual(integral_rejection(ki / 20_000.0, theta), 0.5, places=6)

    def test_out_of_reach_bandwidth(self):
        with self.assertRaises(ValueError):
            tune_gains(100.0, 60.0)
        with self.assertRaises(ParameterError):
            LoopStage(name="slow", sensor_rate=10.0, target_closed_loop_bandwidth=10.0)
        with self.assertRaises(ParameterError):
            LoopStage(name="bad", sensor_rate=100.0, target_closed_loop_bandwidth=10.0,
                      pid_gains=(0.0, math.inf, 0.0))

    def test_pid_clamps_and_freezes_integrator(self):
        pid = PidController(0.0, 10.0, 0.0, sample_time=0.1, limit=1.0)
        self.assertEqual(pid.update(5.0), 1.0)
        self.assertEqual(pid.integral, 0.0)
        self.assertAlmostEqual(pid.update(-0.5), -0.5)
        pid.reset()
        self.assertEqual(pid.integral, 0.0)


class TestTracking(unittest.TestCase):
    def test_loop_off_passes_disturbance(self):
        series = synthesize_disturbance(TURBULENCE, 4000, FINE_DT, rng_seed=1)
        result = run_cascade([replace(FINE, enabled=False)], series, FINE_DT, rng_seed=1)
        self.assertTrue(np.array_equal(result.residual_series, series))
        self.assertEqual(result.per_stage_commands, {})

    def test_zero_disturbance_without_noise(self):
        quiet = [replace(COARSE, sensor_noise_rms=0.0), replace(FINE, sensor_noise_rms=0.0)]
        result = simulate_loop(quiet, DisturbanceSpec(), 0.1, FINE_DT, rng_seed=3)
        self.assertEqual(result.residual_rms, 0.0)

    def test_two_stage_residual(self):
        result = simulate_loop([COARSE, FINE], TURBULENCE, 10.0, FINE_DT, rng_seed=20120809)
        self.assertLessEqual(result.residual_rms, 3.5)
        rms = math.sqrt(np.mean(result.residual_series**2))
        self.assertAlmostEqual(result.residual_rms, rms, delta=1e-9)
        self.assertEqual(set(result.per_stage_commands), {"coarse", "fine"})

    def test_fine_stage_helps(self):
        with_fine = simulate_loop([COARSE, FINE], TURBULENCE, 2.0, FINE_DT, rng_seed=8)
        coarse_only = simulate_loop([COARSE, replace(FINE, enabled=False)], TURBULENCE, 2.0,
                                    FINE_DT, rng_seed=8)
        self.assertGreater(coarse_only.residual_rms, with_fine.residual_rms)

    def test_coarse_stage_offloads_slow_disturbance(self):
        coarse = replace(COARSE, sensor_noise_rms=0.0)
        fine = replace(FINE, sensor_noise_rms=0.0)
        slow = [
            DisturbanceSpec(drift_amplitude=5.0, sinusoid_probe=(1.0, 20.0)),
            DisturbanceSpec(sinusoid_probe=(3.0, 10.0)),
            DisturbanceSpec(drift_amplitude=20.0, sinusoid_probe=(0.2, 50.0)),
        ]
        for disturbance in slow:
            fine_only = simulate_loop([fine], disturbance, 2.0, FINE_DT, rng_seed=7)
            both = simulate_loop([coarse, fine], disturbance, 2.0, FINE_DT, rng_seed=7)
            self.assertLessEqual(both.residual_rms, fine_only.residual_rms, msg=str(disturbance))

    def test_slower_stage_slews_between_samples(self):
        coarse = replace(COARSE, sensor_noise_rms=0.0)
        fine = replace(FINE, sensor_noise_rms=0.0)
        disturbance = DisturbanceSpec(drift_amplitude=50.0)
        result = simulate_loop([coarse, fine], disturbance, 0.2, FINE_DT, rng_seed=0)
        steps = np.abs(np.diff(result.per_stage_commands["coarse"]))
        # 400 fine steps per coarse sample; no single jump carries a whole sample
        self.assertLess(steps.max(), 0.01)

    def test_stage_noise_is_paired_across_cascades(self):
        series = np.zeros(4000)
        alone = run_cascade([FINE], series, FINE_DT, rng_seed=5)
        behind_coarse = run_cascade([replace(COARSE, sensor_noise_rms=0.0), FINE], series, FINE_DT, rng_seed=5)
        self.assertTrue(np.array_equal(alone.residual_series, behind_coarse.residual_series))

    def test_deterministic(self):
        first = simulate_loop([COARSE, FINE], TURBULENCE, 0.5, FINE_DT, rng_seed=4)
        second = simulate_loop([COARSE, FINE], TURBULENCE, 0.5, FINE_DT, rng_seed=4)
        self.assertTrue(np.array_equal(first.residual_series, second.residual_series))

    def test_divergence_is_reported(self):
        wild = LoopStage(name="wild", sensor_rate=100.0, target_closed_loop_bandwidth=10.0,
                         pid_gains=(0.0, 500.0, 0.0), actuator_range=1e9)
        with self.assertRaises(InstabilityError) as caught:
            simulate_loop([wild], DisturbanceSpec(sinusoid_probe=(5.0, 10.0)), 1.0, 0.005, rng_seed=0)
        self.assertIn("wild", str(caught.exception))

    def test_stage_checks(self):
        with self.assertRaises(ValueError):
            simulate_loop([FINE, COARSE], TURBULENCE, 0.1, FINE_DT, rng_seed=0)
        with self.assertRaises(ValueError):
            simulate_loop([COARSE, FINE], TURBULENCE, 0.1, 1e-3, rng_seed=0)


class TestRejection(unittest.TestCase):
    def test_bandwidth_of(self):
        self.assertAlmostEqual(bandwidth_of([(200.0, 0.6), (10.0, 0.1), (100.0, 0.4)]), 150.0)
        with self.assertRaises(ValueError):
            bandwidth_of([(10.0, 0.1), (20.0, 0.2)])

    def test_curve_limits(self):
        stage = replace(FINE, sensor_noise_rms=0.0)
        curve = dict(rejection_curve([stage], [1.0, 5000.0], 10.0, 0.2, 1 / 40_000))
        self.assertLess(curve[1.0], 0.05)
        self.assertAlmostEqual(curve[5000.0], 1.0, delta=0.1)

    def test_rejection_ratio_bounds(self):
        fine = replace(FINE, sensor_noise_rms=0.0)
        coarse = replace(COARSE, sensor_noise_rms=0.0)
        sweeps = [
            rejection_curve([fine], list(np.geomspace(1.0, 5000.0, 8)), 10.0, 0.2, 1 / 40_000),
            rejection_curve([coarse], [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0], 10.0, 2.0, 1e-3),
        ]
        for curve in sweeps:
            for frequency, ratio in curve:
                self.assertGreater(ratio, 0.0, msg=frequency)
                self.assertLessEqual(ratio, 1.5, msg=frequency)

    def test_probe_above_nyquist(self):
        with self.assertRaises(ValueError):
            rejection_curve([FINE], [12_000.0], 10.0, 0.2, 1 / 40_000)

    def test_fine_loop_bandwidth(self):
        stage = replace(FINE, sensor_noise_rms=0.0)
        measured = stage_bandwidths([stage], 10.0, 0.2, 1 / 40_000)["fine"]
        self.assertGreater(measured, 150.0)
        self.assertAlmostEqual(measured / 190.0, 1.0, delta=0.2)

    def test_ultra_fine_stage_bandwidths(self):
        stages = [
            LoopStage(name="fine", sensor_rate=400.0, target_closed_loop_bandwidth=15.0),
            LoopStage(name="ultra-fine", sensor_rate=2000.0, target_closed_loop_bandwidth=75.0),
        ]
        measured = stage_bandwidths(stages, 10.0, 1.0, 1 / 8000)
        self.assertAlmostEqual(measured["fine"] / 15.0, 1.0, delta=0.2)
        self.assertAlmostEqual(measured["ultra-fine"] / 75.0, 1.0, delta=0.2)


class TestLinkSetup(unittest.TestCase):
    def test_pointing_loss_feed(self):
        geom = ChannelGeometry(distance=97e3, divergence=3.6083e-5, receiver_aperture=0.4)

        def tracked(rms):
            return TrackingResult(residual_rms=rms, residual_series=np.zeros(1),
                                  per_stage_commands={}, dt=FINE_DT)

        self.assertEqual(pointing_loss_feed(tracked(0.0), geom), 0.0)
        loss = pointing_loss_feed(tracked(2.6), geom)
        self.assertGreater(loss, 0.0)
        self.assertLess(loss, 0.2)
        self.assertEqual(loss, pointing_loss(replace(geom, pointing_rms=2.6e-6)))

    def test_acquisition_sequence(self):
        acquisition = LinkAcquisition()
        self.assertFalse(acquisition.linked)
        self.assertEqual(len(acquisition.run()), 5)
        self.assertTrue(acquisition.linked)
        fixed = LinkAcquisition(fixed_site=True).run()
        self.assertEqual(fixed[0], AcquisitionPhase.COARSE_TRACKING)
        self.assertEqual(fixed[-1], AcquisitionPhase.LINKED)


if __name__ == "__main__":
    unittest.main()
