"""
Two-link entanglement distribution with a CHSH test.

One source sends a photon of each pair down each of two channels. Each
receiver's setting is picked by a QRNG that emits a fresh bit every
``qrng_interval`` and flips a modulator between its two analyzer angles.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .channel import sample_transmission, transmittance
from .config import ChshSettings, LocalitySettings, ScenarioConfig
from .source import bell_diagonal_from_visibilities
from .states import MeasurementSetting, outcome_probabilities
from .timing import (
    PS_PER_S,
    CoincidenceWindow,
    TimeTagStream,
    accidental_matches,
    generate_noise_tags,
    poisson_times,
)
from .utils import derive_seeds, humanize_seconds

logger = logging.getLogger(__name__)

ALICE_SETTINGS = (0.0, math.pi / 4)
BOB_SETTINGS = (math.pi / 8, 3 * math.pi / 8)
# sign of E(a_i, b_j) in S
CHSH_SIGNS = np.array([[1, -1], [1, 1]])
PS_PER_US = 10**6


@dataclass(frozen=True, kw_only=True)
class LocalityReport:
    light_time_between_receivers: float  # us
    measurement_event_delay: float  # us
    qrng_interval: float  # us
    measurement_duration: float  # us
    spacelike_separated: bool
    settings_spacelike: bool


def locality_audit(
    receiver_separation: float, path_difference: float, qrng_interval: float, measurement_duration: float
) -> LocalityReport:
    """Space-like separation of the two measurements (km and us in, us out)."""
    for name, value in (
        ("receiver_separation", receiver_separation),
        ("path_difference", path_difference),
        ("qrng_interval", qrng_interval),
        ("measurement_duration", measurement_duration),
    ):
        if value < 0:
            raise ValueError(f"{name} must be non-negative")
    light_time = receiver_separation * 1e3 / SPEED_OF_LIGHT * 1e6
    event_delay = path_difference * 1e3 / SPEED_OF_LIGHT * 1e6
    return LocalityReport(
        light_time_between_receivers=light_time,
        measurement_event_delay=event_delay,
        qrng_interval=qrng_interval,
        measurement_duration=measurement_duration,
        spacelike_separated=event_delay + measurement_duration < light_time,
        settings_spacelike=qrng_interval + measurement_duration < light_time,
    )


class QrngSwitch:
    """Seeded bit source switching between two analyzer settings.

    The bit of interval ``k`` depends only on the seed and ``k``, so every
    event inside one interval sees the same setting and shards agree.
    """

    def __init__(self, settings: tuple[float, float], interval: float, seed: int):
        if not interval > 0:
            raise ValueError("QRNG interval must be positive")
        self.settings = settings
        self.interval_ps = interval * PS_PER_US
        self.seed = seed

    def bit(self, interval_index: int) -> int:
        return int(np.random.default_rng([self.seed, interval_index]).integers(2))

    def choose(self, times) -> np.ndarray:
        """Setting index (0 or 1) in force at each time (ps)."""
        intervals = (np.asarray(times, dtype=np.int64) // self.interval_ps).astype(np.int64)
        unique, inverse = np.unique(intervals, return_inverse=True)
        bits = np.fromiter((self.bit(int(k)) for k in unique), dtype=np.int8, count=unique.size)
        return bits[inverse]


@dataclass(frozen=True, kw_only=True, eq=False)
class ChshCounts:
    """Outcome tallies indexed [alice setting, bob setting, alice outcome, bob outcome]."""

    table: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 2), dtype=np.int64))
    signal: int = 0
    accidental: int = 0

    def merge(self, other: "ChshCounts") -> "ChshCounts":
        return ChshCounts(
            table=self.table + other.table,
            signal=self.signal + other.signal,
            accidental=self.accidental + other.accidental,
        )

    def __eq__(self, other):
        if not isinstance(other, ChshCounts):
            return NotImplemented
        return (
            np.array_equal(self.table, other.table)
            and self.signal == other.signal
            and self.accidental == other.accidental
        )


@dataclass(frozen=True, kw_only=True)
class Correlation:
    setting_a: float
    setting_b: float
    correlation: float | None
    error: float | None
    coincidences: int


@dataclass(frozen=True, kw_only=True)
class ChshResult:
    correlations: list[Correlation]
    s_value: float | None
    s_error: float | None
    violation_sigmas: float | None
    coincidences: int
    effective_time: float  # s
    physical_duration: float  # s
    expected_coincidences: float
    insufficient_statistics: bool
    counts: ChshCounts
    locality: LocalityReport | None = None


def correlations_from_counts(counts: ChshCounts) -> list[Correlation]:
    result = []
    for i, a in enumerate(ALICE_SETTINGS):
        for j, b in enumerate(BOB_SETTINGS):
            outcomes = counts.table[i, j]
            total = int(outcomes.sum())
            if total:
                same = int(outcomes[0, 0] + outcomes[1, 1])
                e = (2 * same - total) / total
                error = math.sqrt(max(1.0 - e * e, 0.0) / total)
            else:
                e = error = None
            result.append(Correlation(setting_a=a, setting_b=b, correlation=e, error=error, coincidences=total))
    return result


def result_from_counts(
    counts: ChshCounts,
    *,
    effective_time: float,
    physical_duration: float,
    expected: float,
    locality: LocalityReport | None = None,
) -> ChshResult:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b') with binomially propagated error."""
    correlations = correlations_from_counts(counts)
    insufficient = any(entry.coincidences == 0 for entry in correlations)
    s_value = s_error = sigmas = None
    if not insufficient:
        signs = CHSH_SIGNS.ravel()
        s_value = abs(sum(sign * entry.correlation for sign, entry in zip(signs, correlations)))
        s_error = math.sqrt(sum(entry.error**2 for entry in correlations))
        if s_error > 0:
            sigmas = (s_value - 2.0) / s_error
    return ChshResult(
        correlations=correlations,
        s_value=s_value,
        s_error=s_error,
        violation_sigmas=sigmas,
        coincidences=int(counts.table.sum()),
        effective_time=effective_time,
        physical_duration=physical_duration,
        expected_coincidences=expected,
        insufficient_statistics=insufficient,
        counts=counts,
        locality=locality,
    )


def _outcome_tables(settings: ChshSettings, config: ScenarioConfig) -> np.ndarray:
    """Cumulative joint outcome probabilities, shape (2, 2, 4)."""
    source = config.source
    v_hv = settings.effective_visibility_hv
    v_pm = settings.effective_visibility_pm
    weights = bell_diagonal_from_visibilities(
        source.visibility_hv if v_hv is None else v_hv,
        source.visibility_pm if v_pm is None else v_pm,
    )
    rho = weights.density()
    tables = np.empty((2, 2, 4))
    for i, a in enumerate(ALICE_SETTINGS):
        for j, b in enumerate(BOB_SETTINGS):
            probabilities = outcome_probabilities(rho, MeasurementSetting(a), MeasurementSetting(b))
            tables[i, j] = np.cumsum(probabilities.ravel())
    return tables


def _simulate_shard(
    config: ScenarioConfig,
    settings: ChshSettings,
    switches: tuple[QrngSwitch, QrngSwitch],
    cumulative: np.ndarray,
    start: float,
    span: float,
    seed: int,
) -> ChshCounts:
    source = config.source
    eta_a, eta_b = (transmittance(channel.total_loss_db) for channel in config.channels)
    alice, bob = (config.detector(station) for station in settings.receivers)
    window = CoincidenceWindow(settings.window)
    pair_seed, survive_seed, singles_seed, noise_seed, match_seed, time_seed, outcome_seed = derive_seeds(seed, 7)

    # pairs reaching Alice, then Bob's photon of each
    rng = np.random.default_rng(pair_seed)
    at_alice = int(rng.poisson(source.twofold_rate * eta_a * span))
    signal = int(np.count_nonzero(sample_transmission(eta_b, at_alice, survive_seed)))

    # Alice's clicks matched against Bob's uncorrelated clicks
    photon_rate = source.repetition_rate * source.pair_probability * source.detection_efficiency
    singles = poisson_times(photon_rate * eta_a, span, np.random.default_rng(singles_seed))
    alice_clicks = TimeTagStream.from_times(singles, origin=settings.receivers[0]).merge(
        generate_noise_tags(alice, span, noise_seed, channel=1, origin=settings.receivers[0])
    )
    bob_clicks = photon_rate * eta_b + bob.noise_rate
    pairs = accidental_matches(alice_clicks, bob_clicks, window, span, match_seed)
    accidental = len(pairs)

    start_ps = int(start * PS_PER_S)
    signal_times = np.random.default_rng(time_seed).integers(
        start_ps, start_ps + int(span * PS_PER_S), size=signal, dtype=np.int64
    )
    accidental_times = start_ps + alice_clicks.times[[i for i, _ in pairs]]
    times = np.concatenate([signal_times, accidental_times.astype(np.int64)])
    is_signal = np.concatenate([np.ones(signal, dtype=bool), np.zeros(accidental, dtype=bool)])
    order = np.argsort(times, kind="stable")
    times, is_signal = times[order], is_signal[order]
    events = signal + accidental
    a_index = switches[0].choose(times)
    b_index = switches[1].choose(times)

    rng = np.random.default_rng(outcome_seed)
    outcome = rng.integers(4, size=events)
    draws = rng.random(events)
    thresholds = cumulative[a_index, b_index, :3]
    outcome[is_signal] = np.sum(draws[is_signal, np.newaxis] > thresholds[is_signal], axis=1)

    table = np.zeros((2, 2, 2, 2), dtype=np.int64)
    np.add.at(table, (a_index, b_index, outcome // 2, outcome % 2), 1)
    logger.debug("shard at %.0f s: %i pairs at Alice, %i coincidences, %i accidentals",
                 start, at_alice, signal, accidental)
    return ChshCounts(table=table, signal=signal, accidental=accidental)


def run_chsh(config: ScenarioConfig) -> ChshResult:
    settings = config.chsh or ChshSettings()
    duration = config.simulated_duration
    losses = [channel.total_loss_db for channel in config.channels]
    expected = config.source.twofold_rate * transmittance(sum(losses)) * duration
    logger.info("distributing pairs over %.1f + %.1f dB for %s (%.1f coincidences expected)",
                losses[0], losses[1], humanize_seconds(duration), expected)
    alice_seed, bob_seed, *shard_seeds = derive_seeds(config.seed, settings.shards + 2)
    switches = (
        QrngSwitch(ALICE_SETTINGS, settings.qrng_interval, alice_seed),
        QrngSwitch(BOB_SETTINGS, settings.qrng_interval, bob_seed),
    )
    cumulative = _outcome_tables(settings, config)
    span = duration / settings.shards
    shards = [
        _simulate_shard(config, settings, switches, cumulative, index * span, span, seed)
        for index, seed in enumerate(shard_seeds)
    ]
    counts = reduce(ChshCounts.merge, shards)
    locality = None
    if settings.locality is not None:
        locality = audit_from_settings(settings.locality, settings.qrng_interval)
    result = result_from_counts(
        counts, effective_time=duration, physical_duration=config.duration, expected=expected, locality=locality
    )
    if result.insufficient_statistics:
        logger.warning("some setting pairs saw no coincidences; S is undefined")
    else:
        logger.info("S = %.3f +- %.3f over %i coincidences (%.1f sigma)",
                    result.s_value, result.s_error, result.coincidences, result.violation_sigmas or 0.0)
    return result


def audit_from_settings(locality: LocalitySettings, qrng_interval: float) -> LocalityReport:
    return locality_audit(
        locality.receiver_separation, locality.path_difference, qrng_interval, locality.measurement_duration
    )
