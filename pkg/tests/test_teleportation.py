import math
import unittest

import numpy as np

from qtlink.config import from_dict, parse_config
from qtlink.source import SourceParams, bell_diagonal_from_visibilities, local_rates
from qtlink.teleportation import (
    CLASSICAL_LIMIT,
    TeleportationCounts,
    analytic_fidelity,
    contour_loss,
    fidelity_surface,
    intrinsic_fidelity,
    result_from_counts,
    run_teleportation,
    teleport_rates,
)
from qtlink.timing import CoincidenceWindow, accidental_rate

REFERENCE = SourceParams(pair_probability=0.083, detection_efficiency=0.123)
BRIGHT = SourceParams(pair_probability=0.1, detection_efficiency=0.236)
WIDE = CoincidenceWindow(25.0)
PERFECT = bell_diagonal_from_visibilities(1.0, 1.0)


def rates_of(source):
    return local_rates(source, source.twofold_rate)


def scenario(loss_db, noise_rate=0.0, duration=1.0, visibility=1.0, multi_pair_noise=False, seed=5, window=1.0):
    return from_dict({
        "name": "bench",
        "seed": seed,
        "duration": duration,
        "protocol": "teleport",
        "source": {
            "pair_probability": 0.1,
            "detection_efficiency": 0.236,
            "visibility_hv": visibility,
            "visibility_pm": visibility,
        },
        "channels": [{
            "name": "bench",
            "geometry": {"distance": 1000.0, "divergence": 1e-3, "receiver_aperture": 0.1},
            "loss_db": loss_db,
        }],
        "detectors": {"bob": {"dark_rate": noise_rate}},
        "teleport": {
            "interference_visibility": visibility,
            "local_fourfold_rate": 2000.0,
            "multi_pair_noise": multi_pair_noise,
            "window": window,
        },
    })


class TestAnalyticFidelity(unittest.TestCase):
    def test_limits(self):
        rates = rates_of(BRIGHT)
        self.assertAlmostEqual(analytic_fidelity(40.0, 0.0, rates, WIDE, 0.9), 0.9)
        self.assertAlmostEqual(analytic_fidelity(200.0, 1000.0, rates, WIDE, 1.0), 0.5, places=6)
        with self.assertRaises(ValueError):
            analytic_fidelity(-1.0, 10.0, rates, WIDE, 1.0)
        with self.assertRaises(ValueError):
            analytic_fidelity(40.0, 10.0, rates, WIDE, 0.4)

    def test_brighter_source_tolerates_more_loss(self):
        reference = analytic_fidelity(41.02, 1000.0, rates_of(REFERENCE), WIDE, 1.0)
        bright = analytic_fidelity(41.02, 1000.0, rates_of(BRIGHT), WIDE, 1.0)
        self.assertAlmostEqual(reference, 0.640, delta=0.002)
        self.assertAlmostEqual(bright, 0.7137, delta=0.002)

    def test_broadcasts(self):
        values = analytic_fidelity(np.array([30.0, 40.0, 50.0]), 100.0, rates_of(BRIGHT), WIDE, 1.0)
        self.assertEqual(values.shape, (3,))
        self.assertTrue(np.all(np.diff(values) < 0))


class TestSurface(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.reference = fidelity_surface(REFERENCE, (20.0, 70.0), (0.0, 1000.0), 200)
        cls.bright = fidelity_surface(BRIGHT, (20.0, 70.0), (0.0, 1000.0), 200)

    def test_shape_and_dark_free_row(self):
        self.assertEqual(self.bright.fidelity.shape, (200, 200))
        self.assertTrue(np.allclose(self.bright.fidelity[0], 1.0))
        self.assertTrue(math.isnan(self.bright.classical_limit[0]))

    def test_matches_pointwise_formula(self):
        i, j = 57, 123
        expected = analytic_fidelity(
            self.bright.loss_axis[j], self.bright.dark_axis[i], rates_of(BRIGHT), WIDE, 1.0
        )
        self.assertAlmostEqual(self.bright.fidelity[i, j], expected)

    def test_monotonic(self):
        fidelity = self.reference.fidelity[1:]
        self.assertTrue(np.all(np.diff(fidelity, axis=1) <= 0))
        self.assertTrue(np.all(np.diff(fidelity, axis=0) <= 0))

    def test_classical_limit_contours(self):
        # the 2/3 contour sits where 10^(-L/10) = noise * tau / (2 eta)
        expected = -10 * math.log10(1000.0 * 25e-9 / (2 * 0.236))
        self.assertAlmostEqual(self.bright.classical_limit[-1], expected, delta=0.02)
        self.assertAlmostEqual(self.reference.classical_limit[-1], 39.93, delta=0.02)
        shift = self.bright.classical_limit[1:] - self.reference.classical_limit[1:]
        self.assertTrue(np.all(shift > 0))
        np.testing.assert_allclose(shift, 10 * math.log10(0.236 / 0.123), atol=0.05)
        self.assertEqual(len(self.bright.contour_points()), 199)

    def test_contour_off_grid(self):
        loss = np.linspace(0.0, 10.0, 5)
        rows = np.array([[0.9, 0.8, 0.7, 0.68, 0.67], [0.6, 0.55, 0.5, 0.5, 0.5], [0.9, 0.7, 0.6, 0.5, 0.5]])
        contour = contour_loss(loss, rows, CLASSICAL_LIMIT)
        self.assertTrue(math.isnan(contour[0]))
        self.assertTrue(math.isnan(contour[1]))
        self.assertAlmostEqual(contour[2], 2.5 + 2.5 * (0.7 - CLASSICAL_LIMIT) / 0.1)


class TestIntrinsicFidelity(unittest.TestCase):
    def test_perfect_resources(self):
        for value in intrinsic_fidelity(PERFECT, 1.0).values():
            self.assertAlmostEqual(value, 1.0)

    def test_partial_interference(self):
        fidelity = intrinsic_fidelity(PERFECT, 0.6)
        for label in ("H", "V"):
            self.assertAlmostEqual(fidelity[label], 1.0)
        for label in ("+", "-", "R", "L"):
            self.assertAlmostEqual(fidelity[label], 0.8)

    def test_multipair_dilution(self):
        fidelity = intrinsic_fidelity(PERFECT, 1.0, multipair=0.2, states=("H",))
        self.assertAlmostEqual(fidelity["H"], 0.9)
        with self.assertRaises(ValueError):
            intrinsic_fidelity(PERFECT, 1.0, multipair=1.5)

    def test_realistic_poles_beat_equator(self):
        fidelity = intrinsic_fidelity(bell_diagonal_from_visibilities(0.91, 0.90), 0.6)
        poles = (fidelity["H"] + fidelity["V"]) / 2
        equator = np.mean([fidelity[k] for k in ("+", "-", "R", "L")])
        self.assertGreater(poles, equator)
        self.assertTrue(all(value > CLASSICAL_LIMIT for value in fidelity.values()))


class TestTeleportationRun(unittest.TestCase):
    def test_ideal_link(self):
        result = run_teleportation(scenario(0.0))
        self.assertFalse(result.insufficient_statistics)
        for entry in result.per_state.values():
            self.assertEqual(entry.fidelity, 1.0)
            self.assertGreater(entry.coincidence_count, 0)
        self.assertEqual(result.counts.accidental, 0)
        self.assertEqual(result.counts.multipair, 0)

    def test_deterministic(self):
        config = scenario(20.0, noise_rate=200.0, duration=20.0, visibility=0.9, multi_pair_noise=True)
        self.assertEqual(run_teleportation(config).counts, run_teleportation(config).counts)

    def test_calibrated_link(self):
        result = run_teleportation(parse_config("qinghai-97km"))
        self.assertAlmostEqual(result.total_coincidences, 1150, delta=3 * math.sqrt(1150))
        self.assertAlmostEqual(result.expected_coincidences / 1171, 1.0, delta=0.1)
        # compared against a measured average with a comparable error
        tolerance = 3 * math.hypot(result.average_error, 0.012)
        self.assertAlmostEqual(result.average_fidelity, 0.804, delta=tolerance)
        self.assertGreater(result.average_fidelity - CLASSICAL_LIMIT, 5 * result.average_error)
        self.assertEqual(result.physical_duration, 14400.0)

    def test_longer_run_keeps_structure(self):
        result = run_teleportation(parse_config("qinghai-97km", {"time_scale": 4.0}))
        fidelity = {label: entry.fidelity for label, entry in result.per_state.items()}
        self.assertTrue(all(value > CLASSICAL_LIMIT for value in fidelity.values()))
        poles = (fidelity["H"] + fidelity["V"]) / 2
        equator = np.mean([fidelity[k] for k in ("+", "-", "R", "L")])
        self.assertGreaterEqual(poles, equator)
        self.assertEqual(result.effective_time, 4 * 14400.0)

    def test_no_coincidences(self):
        result = run_teleportation(scenario(120.0, duration=100.0))
        self.assertTrue(result.insufficient_statistics)
        self.assertIsNone(result.average_fidelity)
        self.assertTrue(all(entry.fidelity is None for entry in result.per_state.values()))

    def test_accidentals_come_from_matched_noise_tags(self):
        config = scenario(120.0, noise_rate=2e4, duration=100.0, window=25.0, seed=9)
        result = run_teleportation(config)
        trigger = teleport_rates(config.source, config.teleport).threefold_bsm_trigger
        noise = config.detector("bob").noise_rate
        expected = accidental_rate(trigger, noise, CoincidenceWindow(25.0)) * 100.0
        self.assertEqual(result.counts.signal, 0)
        self.assertAlmostEqual(result.counts.accidental, expected, delta=3 * math.sqrt(expected))
        self.assertEqual(result.total_coincidences, result.counts.accidental)

    def test_monte_carlo_follows_analytic_model(self):
        for loss in (20.0, 30.0, 40.0, 50.0):
            config = scenario(loss, noise_rate=200.0, duration=1440.0, visibility=0.9,
                              multi_pair_noise=True, seed=int(loss))
            result = run_teleportation(config)
            expected = result.analytic_fidelity
            tolerance = 4 * math.sqrt(expected * (1 - expected) / result.total_coincidences) + 0.01
            self.assertAlmostEqual(result.pooled_fidelity, result.analytic_fidelity, delta=tolerance,
                                   msg=f"{loss} dB")

    def test_merged_counts(self):
        first = TeleportationCounts(correct={"H": 8, "V": 1}, total={"H": 10, "V": 2}, signal=12)
        second = TeleportationCounts(correct={"H": 2}, total={"H": 5}, signal=4, accidental=1)
        merged = first.merge(second)
        self.assertEqual(merged.total, {"H": 15, "V": 2})
        self.assertEqual(merged.correct, {"H": 10, "V": 1})
        result = result_from_counts(merged, effective_time=1.0, physical_duration=1.0,
                                    expected=17.0, analytic=0.8)
        self.assertAlmostEqual(result.per_state["H"].fidelity, 10 / 15)
        self.assertAlmostEqual(result.pooled_fidelity, 11 / 17)
        self.assertAlmostEqual(result.average_fidelity, (10 / 15 + 0.5) / 2)
        self.assertEqual(result.total_coincidences, 17)


if __name__ == "__main__":
    unittest.main()
