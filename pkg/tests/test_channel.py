import unittest
import warnings

import numpy as np

from qtlink.channel import (
    ChannelGeometry,
    effective_spot,
    geometric_loss,
    pointing_loss,
    sample_transmission,
    to_db,
    total_budget,
    transmittance,
)
from qtlink.errors import ParameterError, SubSpotWarning


def link(spot: float, aperture: float = 0.4, pointing_rms: float = 0.0) -> ChannelGeometry:
    return ChannelGeometry(
        distance=97e3, divergence=spot / 97e3, receiver_aperture=aperture,
        far_field_spot=spot, pointing_rms=pointing_rms,
    )


class TestChannel(unittest.TestCase):
    def test_geometric_loss_endpoints(self):
        self.assertAlmostEqual(geometric_loss(link(3.5)), 19.0, delta=0.5)
        self.assertAlmostEqual(geometric_loss(link(17.9)), 33.0, delta=0.5)

    def test_geometric_loss_is_monotone(self):
        losses = [geometric_loss(link(spot)) for spot in np.linspace(0.5, 20.0, 40)]
        self.assertTrue(np.all(np.diff(losses) > 0))
        losses = [geometric_loss(link(3.5, aperture)) for aperture in np.linspace(0.1, 3.4, 34)]
        self.assertTrue(np.all(np.diff(losses) < 0))
        with self.assertWarns(SubSpotWarning):
            self.assertEqual(geometric_loss(link(0.4, 0.4)), 0.0)

    def test_spot_defaults_to_divergence(self):
        geom = ChannelGeometry(distance=1000.0, divergence=1e-3, receiver_aperture=0.1)
        self.assertAlmostEqual(geom.spot, 1.0)
        self.assertAlmostEqual(geometric_loss(geom), 20.0)

    def test_full_capture_warns(self):
        with self.assertWarns(SubSpotWarning):
            self.assertEqual(geometric_loss(link(0.3)), 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            budget = total_budget(link(0.3), 2.0, 3.0)
        self.assertTrue(budget.full_capture)
        self.assertAlmostEqual(budget.total_db, 5.0)

    def test_budget_is_itemized(self):
        budget = total_budget(link(3.5, pointing_rms=2e-6), 8.2, 8.0)
        items = dict(budget.items())
        self.assertGreater(items["pointing"], 0.0)
        parts = items["geometric"] + items["atmospheric"] + items["optics"] + items["pointing"]
        self.assertAlmostEqual(parts, items["total"])
        self.assertAlmostEqual(budget.transmittance, 10 ** (-budget.total_db / 10))

    def test_pointing_loss(self):
        self.assertEqual(pointing_loss(link(3.5)), 0.0)
        jittered = link(3.5, pointing_rms=5e-6)
        self.assertGreater(effective_spot(jittered), 3.5)
        self.assertGreater(pointing_loss(jittered), pointing_loss(link(3.5, pointing_rms=1e-6)))

    def test_conversions(self):
        self.assertAlmostEqual(transmittance(30.0), 1e-3)
        self.assertAlmostEqual(to_db(transmittance(44.0)), 44.0)
        with self.assertRaises(ValueError):
            transmittance(-1.0)
        with self.assertRaises(ValueError):
            to_db(0.0)

    def test_db_round_trip(self):
        for db in np.linspace(0.0, 100.0, 201):
            self.assertAlmostEqual(to_db(transmittance(db)), db, delta=1e-12)
        self.assertEqual(transmittance(0.0), 1.0)

    def test_invalid_geometry(self):
        with self.assertRaises(ParameterError):
            ChannelGeometry(distance=0.0, divergence=1e-5, receiver_aperture=0.4)
        with self.assertRaises(ValueError):
            total_budget(link(3.5), -1.0, 0.0)

    def test_sample_transmission(self):
        mask = sample_transmission(0.3, 200_000, rng_seed=11)
        self.assertEqual(mask.size, 200_000)
        self.assertAlmostEqual(mask.mean(), 0.3, delta=0.005)
        self.assertTrue(np.array_equal(mask, sample_transmission(0.3, 200_000, rng_seed=11)))
        self.assertEqual(sample_transmission(0.5, 0, rng_seed=1).size, 0)
        self.assertTrue(sample_transmission(1.0, 100, rng_seed=1).all())
        with self.assertRaises(ValueError):
            sample_transmission(1.5, 10, rng_seed=1)


if __name__ == "__main__":
    unittest.main()
