"""
One-link quantum teleportation.

The analytic model mixes the intrinsic fidelity of the four-fold signal with
unpolarized accidentals. The Monte Carlo splits the effective time evenly
between the six input states and, per state, draws local four-folds,
survives them through the channel, labels multi-pair events, samples the
Bell measurement outcome and the receiver's polarization analysis, and adds
accidentals by matching Bell-measurement triggers against the receiver's
noise tags.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np

from .channel import sample_transmission, transmittance
from .config import STATE_LABELS, ScenarioConfig, TeleportSettings
from .source import (
    BellDiagonalWeights,
    LocalRates,
    SourceParams,
    local_rates,
    multipair_fraction,
    sample_pair_events,
)
from .states import BellIndex, PureState, state_fidelity, teleport_density
from .timing import CoincidenceWindow, accidental_matches, generate_noise_tags
from .utils import binomial_error, derive_seeds, humanize_seconds

logger = logging.getLogger(__name__)

CLASSICAL_LIMIT = 2.0 / 3.0
IDENTIFIED_OUTCOMES = (BellIndex.PHI_PLUS, BellIndex.PHI_MINUS)


def analytic_fidelity(loss_db, noise_rate, rates: LocalRates, window: CoincidenceWindow, f0: float):
    """F = (S f0 + A / 2) / (S + A); broadcasts over array-valued loss and noise."""
    loss = np.asarray(loss_db, dtype=float)
    noise = np.asarray(noise_rate, dtype=float)
    if np.any(loss < 0) or np.any(noise < 0):
        raise ValueError("loss and noise rate must be non-negative")
    if not 0.5 <= f0 <= 1.0:
        raise ValueError(f"intrinsic fidelity must lie in [0.5, 1], got {f0}")
    signal = rates.fourfold * 10.0 ** (-loss / 10.0)
    accidental = rates.threefold_bsm_trigger * noise * window.width * 1e-9
    total = signal + accidental
    if np.any(total <= 0):
        raise ValueError("no signal and no accidentals: fidelity is undefined")
    fidelity = (signal * f0 + 0.5 * accidental) / total
    return float(fidelity) if fidelity.ndim == 0 else fidelity


def expected_coincidences(rates: LocalRates, loss_db: float, duration: float) -> float:
    return rates.fourfold * transmittance(loss_db) * duration


@dataclass(frozen=True, kw_only=True, eq=False)
class FidelitySurface:
    loss_axis: np.ndarray  # dB
    dark_axis: np.ndarray  # s^-1
    fidelity: np.ndarray = field(repr=False)  # [dark, loss]
    classical_limit: np.ndarray = field(repr=False)  # loss of the 2/3 contour per dark row, nan if off-grid

    def contour_points(self) -> list[tuple[float, float]]:
        return [
            (float(dark), float(loss))
            for dark, loss in zip(self.dark_axis, self.classical_limit)
            if not math.isnan(loss)
        ]


def contour_loss(loss_axis: np.ndarray, fidelity: np.ndarray, level: float = CLASSICAL_LIMIT) -> np.ndarray:
    """Loss at which each row first drops below ``level``, linearly interpolated."""
    contour = np.full(fidelity.shape[0], np.nan)
    for i, row in enumerate(fidelity):
        below = np.flatnonzero(row < level)
        if below.size == 0 or below[0] == 0:
            continue
        j = below[0]
        f1, f2 = row[j - 1], row[j]
        contour[i] = loss_axis[j - 1] + (f1 - level) * (loss_axis[j] - loss_axis[j - 1]) / (f1 - f2)
    return contour


def fidelity_surface(
    source: SourceParams,
    loss_range: tuple[float, float],
    dark_range: tuple[float, float],
    resolution: int,
    window: CoincidenceWindow = CoincidenceWindow(25.0),
    f0: float = 1.0,
    collinear_twofold: float | None = None,
    bsm_identification_fraction: float = 0.5,
) -> FidelitySurface:
    """Analytic fidelity on a loss x dark-rate grid.

    Without ``collinear_twofold`` the input photons come from a second copy
    of ``source``.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if not (loss_range[0] < loss_range[1] and dark_range[0] < dark_range[1]):
        raise ValueError("loss and dark ranges must be non-empty")
    if collinear_twofold is None:
        collinear_twofold = source.twofold_rate
    rates = local_rates(source, collinear_twofold, bsm_identification_fraction)
    loss_axis = np.linspace(loss_range[0], loss_range[1], resolution)
    dark_axis = np.linspace(dark_range[0], dark_range[1], resolution)
    fidelity = analytic_fidelity(loss_axis[np.newaxis, :], dark_axis[:, np.newaxis], rates, window, f0)
    return FidelitySurface(
        loss_axis=loss_axis,
        dark_axis=dark_axis,
        fidelity=fidelity,
        classical_limit=contour_loss(loss_axis, fidelity),
    )


@dataclass(frozen=True, kw_only=True)
class _OutcomeModel:
    phi_plus_probability: float
    phi_plus_fidelity: float
    phi_minus_fidelity: float

    @property
    def fidelity(self) -> float:
        p = self.phi_plus_probability
        return p * self.phi_plus_fidelity + (1 - p) * self.phi_minus_fidelity


def _outcome_model(label: str, weights: BellDiagonalWeights, interference_visibility: float) -> _OutcomeModel:
    """Outcome odds and fidelity against the Pauli-rotated target, given Phi+- was reported."""
    chi = PureState.from_label(label)
    source = weights.density()
    probabilities, fidelities = [], []
    for outcome in IDENTIFIED_OUTCOMES:
        rho, probability = teleport_density(chi, source, outcome, interference_visibility)
        target = chi.apply(outcome.correction.matrix)
        probabilities.append(probability)
        fidelities.append(state_fidelity(rho, target))
    return _OutcomeModel(
        phi_plus_probability=probabilities[0] / sum(probabilities),
        phi_plus_fidelity=fidelities[0],
        phi_minus_fidelity=fidelities[1],
    )


def intrinsic_fidelity(
    weights: BellDiagonalWeights,
    interference_visibility: float,
    multipair: float = 0.0,
    states: tuple[str, ...] = STATE_LABELS,
) -> dict[str, float]:
    """Per-state fidelity of the four-fold signal, before accidentals."""
    if not 0.0 <= multipair <= 1.0:
        raise ValueError("multi-pair fraction must lie in [0, 1]")
    return {
        label: (1 - multipair) * _outcome_model(label, weights, interference_visibility).fidelity + multipair / 2
        for label in states
    }


@dataclass(frozen=True, kw_only=True)
class StateFidelity:
    fidelity: float | None
    statistical_error: float | None
    coincidence_count: int


@dataclass(frozen=True, kw_only=True)
class TeleportationCounts:
    """Raw tallies of one or more shards; merging adds them."""

    correct: dict[str, int]
    total: dict[str, int]
    signal: int = 0
    multipair: int = 0
    accidental: int = 0

    def merge(self, other: "TeleportationCounts") -> "TeleportationCounts":
        labels = list(dict.fromkeys([*self.total, *other.total]))
        return TeleportationCounts(
            correct={k: self.correct.get(k, 0) + other.correct.get(k, 0) for k in labels},
            total={k: self.total.get(k, 0) + other.total.get(k, 0) for k in labels},
            signal=self.signal + other.signal,
            multipair=self.multipair + other.multipair,
            accidental=self.accidental + other.accidental,
        )


@dataclass(frozen=True, kw_only=True)
class TeleportationResult:
    per_state: dict[str, StateFidelity]
    average_fidelity: float | None
    average_error: float | None
    pooled_fidelity: float | None
    pooled_error: float | None
    total_coincidences: int
    effective_time: float  # s
    physical_duration: float  # s
    expected_coincidences: float
    analytic_fidelity: float
    insufficient_statistics: bool
    counts: TeleportationCounts

    def table(self) -> list[tuple[str, float | None, float | None, int]]:
        return [
            (label, entry.fidelity, entry.statistical_error, entry.coincidence_count)
            for label, entry in self.per_state.items()
        ]


def result_from_counts(
    counts: TeleportationCounts,
    *,
    effective_time: float,
    physical_duration: float,
    expected: float,
    analytic: float,
) -> TeleportationResult:
    """Estimates and binomial errors, recomputed from merged counts."""
    per_state = {}
    for label, total in counts.total.items():
        correct = counts.correct[label]
        per_state[label] = StateFidelity(
            fidelity=correct / total if total else None,
            statistical_error=binomial_error(correct, total) if total else None,
            coincidence_count=total,
        )
    measured = [entry for entry in per_state.values() if entry.fidelity is not None]
    average = average_error = None
    if measured:
        average = float(np.mean([entry.fidelity for entry in measured]))
        average_error = math.sqrt(sum(entry.statistical_error**2 for entry in measured)) / len(measured)
    total = sum(counts.total.values())
    correct = sum(counts.correct.values())
    return TeleportationResult(
        per_state=per_state,
        average_fidelity=average,
        average_error=average_error,
        pooled_fidelity=correct / total if total else None,
        pooled_error=binomial_error(correct, total) if total else None,
        total_coincidences=total,
        effective_time=effective_time,
        physical_duration=physical_duration,
        expected_coincidences=expected,
        analytic_fidelity=analytic,
        insufficient_statistics=len(measured) < len(per_state),
        counts=counts,
    )


def teleport_rates(source: SourceParams, settings: TeleportSettings) -> LocalRates:
    """Local rates, with a measured four-fold rate replacing the model when given."""
    rates = local_rates(source, settings.collinear_twofold, settings.bsm_identification_fraction)
    if settings.local_fourfold_rate is not None:
        fourfold = settings.local_fourfold_rate
        rates = replace(
            rates, fourfold=fourfold, threefold_bsm_trigger=fourfold / source.detection_efficiency
        )
    return rates


def _multipair_mask(source: SourceParams, events: int, seed: int) -> np.ndarray:
    """Which of ``events`` pair-carrying pulses held two pairs."""
    p = source.pair_probability
    if events == 0 or p == 0:
        return np.zeros(events, dtype=bool)
    pulses = int(math.ceil(1.2 * events / (p + p * p))) + 16
    blocks = []
    collected = 0
    sequence = np.random.SeedSequence(seed)
    while collected < events:
        block = sample_pair_events(source, pulses, sequence.spawn(1)[0])
        blocks.append(block["pairs"])
        collected += block.size
    return np.concatenate(blocks)[:events] == 2


def _simulate_shard(
    config: ScenarioConfig,
    settings: TeleportSettings,
    rates: LocalRates,
    eta: float,
    span: float,
    models: dict[str, _OutcomeModel],
    seed: int,
) -> TeleportationCounts:
    """One shard: ``span`` seconds for each input state."""
    window = CoincidenceWindow(settings.window)
    detector = config.detector(settings.receiver)
    correct, total = {}, {}
    signal = multipair = accidental = 0
    for label, state_seed in zip(settings.states, derive_seeds(seed, len(settings.states))):
        local_seed, channel_seed, pair_seed, noise_seed, match_seed, outcome_seed = derive_seeds(state_seed, 6)
        rng = np.random.default_rng(outcome_seed)
        local = int(np.random.default_rng(local_seed).poisson(rates.fourfold * span))
        arrived = int(np.count_nonzero(sample_transmission(eta, local, channel_seed)))

        if settings.multi_pair_noise:
            doubles = _multipair_mask(config.source, arrived, pair_seed)
        else:
            doubles = np.zeros(arrived, dtype=bool)
        model = models[label]
        phi_plus = rng.random(arrived) < model.phi_plus_probability
        success = np.where(phi_plus, model.phi_plus_fidelity, model.phi_minus_fidelity)
        success[doubles] = 0.5
        signal_correct = int(np.count_nonzero(rng.random(arrived) < success))

        noise = generate_noise_tags(detector, span, noise_seed, origin=settings.receiver)
        # BSM triggers that find a receiver noise click in their window
        matched = len(accidental_matches(noise, rates.threefold_bsm_trigger, window, span, match_seed))
        accidental_correct = int(rng.binomial(matched, 0.5))

        correct[label] = signal_correct + accidental_correct
        total[label] = arrived + matched
        signal += arrived
        multipair += int(np.count_nonzero(doubles))
        accidental += matched
        logger.debug("%s: %i local four-folds, %i arrived (%i multi-pair), %i accidentals",
                     label, local, arrived, int(np.count_nonzero(doubles)), matched)
    return TeleportationCounts(
        correct=correct, total=total, signal=signal, multipair=multipair, accidental=accidental
    )


def run_teleportation(config: ScenarioConfig) -> TeleportationResult:
    settings = config.teleport or TeleportSettings()
    source = config.source
    rates = teleport_rates(source, settings)
    loss_db = config.channels[0].total_loss_db
    eta = transmittance(loss_db)
    duration = config.simulated_duration
    noise_rate = config.detector(settings.receiver).noise_rate
    weights = source.weights()
    multipair = multipair_fraction(source) if settings.multi_pair_noise else 0.0
    models = {
        label: _outcome_model(label, weights, settings.interference_visibility)
        for label in settings.states
    }
    f0 = float(np.mean([(1 - multipair) * m.fidelity + multipair / 2 for m in models.values()]))
    logger.info(
        "teleporting %i states over %.1f dB for %s (four-fold %.4g s^-1, noise %.4g s^-1, f0 %.3f)",
        len(settings.states), loss_db, humanize_seconds(duration), rates.fourfold, noise_rate, f0,
    )
    span = duration / len(settings.states) / settings.shards
    shards = [
        _simulate_shard(config, settings, rates, eta, span, models, seed)
        for seed in derive_seeds(config.seed, settings.shards)
    ]
    counts = reduce(TeleportationCounts.merge, shards)
    window = CoincidenceWindow(settings.window)
    result = result_from_counts(
        counts,
        effective_time=duration,
        physical_duration=config.duration,
        expected=expected_coincidences(rates, loss_db, duration),
        analytic=analytic_fidelity(loss_db, noise_rate, rates, window, f0),
    )
    if result.insufficient_statistics:
        logger.warning("no coincidences for some input states; fidelities are undefined")
    elif result.average_fidelity is not None:
        logger.info("average fidelity %.3f +- %.3f over %i coincidences",
                    result.average_fidelity, result.average_error, result.total_coincidences)
    return result
