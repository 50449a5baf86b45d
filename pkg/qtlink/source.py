"""
Statistical model of the SPDC pair sources.

Rates are in s^-1, probabilities per pump pulse. The entangled source
emits |Phi+> pairs degraded into a Bell-diagonal mixture; the collinear
source supplies the input photon and its trigger.
"""
import logging
from dataclasses import astuple, dataclass

import numpy as np

from .errors import ParameterError
from .states import DensityMatrix, bell_diagonal

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, kw_only=True)
class SourceParams:
    pair_probability: float
    detection_efficiency: float
    repetition_rate: float = 76e6
    visibility_hv: float = 1.0
    visibility_pm: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.pair_probability <= 1.0:
            raise ParameterError("pair_probability", "must lie in [0, 1]")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ParameterError("detection_efficiency", "must lie in (0, 1]")
        if not self.repetition_rate > 0:
            raise ParameterError("repetition_rate", "must be positive")
        for name in ("visibility_hv", "visibility_pm"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(name, "must lie in [0, 1]")

    @property
    def twofold_rate(self) -> float:
        return self.repetition_rate * self.pair_probability * self.detection_efficiency**2

    def weights(self) -> "BellDiagonalWeights":
        return bell_diagonal_from_visibilities(self.visibility_hv, self.visibility_pm)


@dataclass(frozen=True, kw_only=True)
class BellDiagonalWeights:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float

    def __post_init__(self):
        values = astuple(self)
        if min(values) < 0:
            raise ParameterError("lambda", f"weights must be non-negative, got {values}")
        if abs(sum(values) - 1.0) > WEIGHT_TOL:
            raise ParameterError("lambda", f"weights must sum to 1, got {sum(values)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return astuple(self)

    def density(self) -> DensityMatrix:
        return bell_diagonal(self.as_tuple())


@dataclass(frozen=True, kw_only=True)
class LocalRates:
    twofold_entangled: float
    twofold_collinear: float
    fourfold: float
    threefold_bsm_trigger: float


def bell_diagonal_from_visibilities(v_hv: float, v_pm: float) -> BellDiagonalWeights:
    """Bell-diagonal weights with lambda3 == lambda4 reproducing both visibilities."""
    if not (0.0 <= v_hv <= 1.0 and 0.0 <= v_pm <= 1.0):
        raise ValueError(f"visibilities must lie in [0, 1], got ({v_hv}, {v_pm})")
    phi_total = (1.0 + v_hv) / 2.0
    psi_each = (1.0 - v_hv) / 4.0
    lambda1 = (phi_total + v_pm) / 2.0
    lambda2 = (phi_total - v_pm) / 2.0
    if lambda2 < -WEIGHT_TOL:
        raise ValueError(
            f"visibilities ({v_hv}, {v_pm}) are infeasible: "
            f"lambda2 = {lambda2:.6g} < 0 (need v_pm <= (1 + v_hv) / 2)"
        )
    return BellDiagonalWeights(
        lambda1=lambda1,
        lambda2=max(lambda2, 0.0),
        lambda3=psi_each,
        lambda4=psi_each,
    )


def local_rates(
    entangled: SourceParams,
    collinear_twofold: float,
    bsm_identification_fraction: float = 0.5,
) -> LocalRates:
    """Coincidence rates at the sending station, before any channel."""
    if entangled.detection_efficiency <= 0:
        raise ValueError("detection efficiency must be positive")
    if collinear_twofold < 0:
        raise ValueError("collinear two-fold rate must be non-negative")
    if not 0.0 < bsm_identification_fraction <= 1.0:
        raise ValueError("BSM identification fraction must lie in (0, 1]")
    twofold = entangled.twofold_rate
    fourfold = twofold * collinear_twofold / entangled.repetition_rate
    fourfold *= bsm_identification_fraction
    return LocalRates(
        twofold_entangled=twofold,
        twofold_collinear=collinear_twofold,
        fourfold=fourfold,
        threefold_bsm_trigger=fourfold / entangled.detection_efficiency,
    )


PAIR_EVENT_DTYPE = np.dtype([("pulse", np.int64), ("pairs", np.int8)])


def sample_pair_events(params: SourceParams, pulses: int, rng_seed: int) -> np.ndarray:
    """Pulses that carried at least one pair.

    Returns a structured array (pulse index, pair count) in pulse order.
    P(1 pair) = p and P(2 pairs) = p^2; higher orders are dropped.
    Two-pair events are incoherent downstream.
    """
    if pulses < 0:
        raise ValueError("pulses must be non-negative")
    p = params.pair_probability
    p_single, p_double = p, p * p
    if p_single + p_double > 1.0:
        # the truncation stops being a distribution past the golden ratio
        p_double = 1.0 - p_single
    if pulses == 0 or p == 0:
        return np.empty(0, dtype=PAIR_EVENT_DTYPE)
    rng = np.random.default_rng(rng_seed)
    # pulses are independent, so sample how many emitted and then where
    counts = rng.multinomial(pulses, [1.0 - p_single - p_double, p_single, p_double])
    emitting = counts[1] + counts[2]
    indices = np.sort(rng.choice(pulses, size=emitting, replace=False))
    pairs = np.ones(emitting, dtype=np.int8)
    pairs[rng.choice(emitting, size=counts[2], replace=False)] = 2
    events = np.empty(emitting, dtype=PAIR_EVENT_DTYPE)
    events["pulse"] = indices
    events["pairs"] = pairs
    logger.debug("sampled %i single and %i double pair events over %i pulses",
                 counts[1], counts[2], pulses)
    return events


def multipair_fraction(params: SourceParams) -> float:
    """Share of pair-carrying pulses that carry two pairs."""
    p = params.pair_probability
    if p == 0:
        return 0.0
    return p * p / (p + p * p)
