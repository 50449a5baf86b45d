"""
Free-space channel loss budget.

The far field is a uniform disk: a receiver of diameter d_rx inside a spot
of diameter d_spot collects (d_rx / d_spot)^2 of the power. Losses are
positive dB values; transmittance is 10^(-dB/10).
"""
import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, SubSpotWarning

logger = logging.getLogger(__name__)

_CHUNK = 1 << 20


@dataclass(frozen=True, kw_only=True)
class ChannelGeometry:
    distance: float  # m
    divergence: float  # rad, full angle
    receiver_aperture: float  # m, diameter
    far_field_spot: float | None = None  # m, diameter
    pointing_rms: float = 0.0  # rad

    def __post_init__(self):
        for name in ("distance", "divergence", "receiver_aperture"):
            if not getattr(self, name) > 0:
                raise ParameterError(name, "must be positive")
        if self.far_field_spot is not None and not self.far_field_spot > 0:
            raise ParameterError("far_field_spot", "must be positive")
        if self.pointing_rms < 0:
            raise ParameterError("pointing_rms", "must be non-negative")

    @property
    def spot(self) -> float:
        if self.far_field_spot is not None:
            return self.far_field_spot
        return self.divergence * self.distance

    @property
    def pointing_displacement(self) -> float:
        """RMS transverse beam displacement at the receiver, in m."""
        return self.pointing_rms * self.distance


@dataclass(frozen=True, kw_only=True)
class LinkBudget:
    geometric_db: float
    atmospheric_db: float
    optics_db: float
    pointing_db: float
    total_db: float
    full_capture: bool = False

    @property
    def transmittance(self) -> float:
        return transmittance(self.total_db)

    def items(self) -> list[tuple[str, float]]:
        return [
            ("geometric", self.geometric_db),
            ("atmospheric", self.atmospheric_db),
            ("optics", self.optics_db),
            ("pointing", self.pointing_db),
            ("total", self.total_db),
        ]


def _disk_capture_db(aperture: float, spot: float) -> float:
    if aperture >= spot:
        return 0.0
    return -10.0 * math.log10((aperture / spot) ** 2)


def geometric_loss(geom: ChannelGeometry) -> float:
    """Loss from the spot being wider than the receiver aperture."""
    if geom.receiver_aperture >= geom.spot:
        warnings.warn(
            f"receiver aperture {geom.receiver_aperture} m captures the whole "
            f"{geom.spot} m spot; geometric loss is 0 dB",
            SubSpotWarning,
            stacklevel=2,
        )
        return 0.0
    return _disk_capture_db(geom.receiver_aperture, geom.spot)


def effective_spot(geom: ChannelGeometry) -> float:
    """Spot broadened by pointing jitter: sqrt(spot^2 + (2 sigma L)^2)."""
    return math.hypot(geom.spot, 2.0 * geom.pointing_displacement)


def pointing_loss(geom: ChannelGeometry) -> float:
    """Extra capture loss of the jitter-broadened spot over the static one."""
    if geom.pointing_rms == 0:
        return 0.0
    broadened = _disk_capture_db(geom.receiver_aperture, effective_spot(geom))
    static = _disk_capture_db(geom.receiver_aperture, geom.spot)
    return broadened - static


def total_budget(geom: ChannelGeometry, atmospheric_db: float, optics_db: float) -> LinkBudget:
    if atmospheric_db < 0 or optics_db < 0:
        raise ValueError("atmospheric and optics losses must be non-negative")
    full_capture = geom.receiver_aperture >= geom.spot
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SubSpotWarning)
        geometric = geometric_loss(geom)
    if full_capture:
        logger.warning("aperture %.3g m >= spot %.3g m: no geometric loss",
                       geom.receiver_aperture, geom.spot)
    pointing = pointing_loss(geom)
    return LinkBudget(
        geometric_db=geometric,
        atmospheric_db=float(atmospheric_db),
        optics_db=float(optics_db),
        pointing_db=pointing,
        total_db=geometric + atmospheric_db + optics_db + pointing,
        full_capture=full_capture,
    )


def with_spot(geom: ChannelGeometry, far_field_spot: float) -> ChannelGeometry:
    return replace(geom, far_field_spot=far_field_spot)


def transmittance(db: float) -> float:
    if db < 0:
        raise ValueError(f"loss must be non-negative, got {db} dB")
    return 10.0 ** (-db / 10.0)


def to_db(eta: float) -> float:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"transmittance must lie in (0, 1], got {eta}")
    return -10.0 * math.log10(eta)


def sample_transmission(eta: float, n_photons: int, rng_seed: int) -> np.ndarray:
    """Independent Bernoulli(eta) survival per photon."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {eta}")
    if n_photons < 0:
        raise ValueError("photon count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    mask = np.empty(n_photons, dtype=bool)
    # bounded memory for 10^7+ photons
    for start in range(0, n_photons, _CHUNK):
        stop = min(start + _CHUNK, n_photons)
        mask[start:stop] = rng.random(stop - start) < eta
    return mask
