"""
Acquiring, pointing and tracking (APT) loop simulation.

Single tip axis, angles in microradians. A cascade of stages runs on one
fixed time step; every stage samples its sensor at its own rate and sees the
disturbance minus the corrections of the slower stages and of itself. The
fastest stage holds its command until the next sample, the slower ones slew
to it.
"""
import enum
import logging
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .channel import ChannelGeometry, pointing_loss
from .errors import InstabilityError, ParameterError

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6  # urad
URAD = 1e-6


def _hold_response(theta: float) -> complex:
    """Fundamental of a zero-order hold over one sample period."""
    if theta == 0:
        return 1.0
    return (1 - np.exp(-1j * theta)) / (1j * theta)


def integral_rejection(gain: float, theta: float) -> float:
    """|residual / disturbance| of a held integrating loop at phase step theta."""
    pole = 1.0 - gain
    closed = gain / (1 - pole * np.exp(-1j * theta))
    return float(abs(1 - closed * _hold_response(theta)))


def tune_gains(sensor_rate: float, bandwidth: float) -> tuple[float, float, float]:
    """Integral-only gains putting the 0.5 rejection point at ``bandwidth``."""
    if not sensor_rate > 2 * bandwidth > 0:
        raise ValueError("sensor rate must exceed twice the bandwidth")
    theta = 2 * math.pi * bandwidth / sensor_rate
    low, high = 1e-9, 1.0
    if integral_rejection(high, theta) > 0.5:
        raise ValueError(
            f"{bandwidth} Hz is out of reach for a {sensor_rate} Hz sensor"
        )
    for _ in range(80):
        middle = (low + high) / 2
        if integral_rejection(middle, theta) > 0.5:
            low = middle
        else:
            high = middle
    return 0.0, (low + high) / 2 * sensor_rate, 0.0


@dataclass(frozen=True, kw_only=True)
class LoopStage:
    name: str
    sensor_rate: float  # Hz
    target_closed_loop_bandwidth: float  # Hz
    sensor_noise_rms: float = 0.0  # urad
    actuator_range: float = 1e5  # urad
    pid_gains: tuple[float, float, float] | None = None
    enabled: bool = True

    def __post_init__(self):
        if not self.sensor_rate > 2 * self.target_closed_loop_bandwidth:
            raise ParameterError("sensor_rate", "must exceed twice the target bandwidth")
        if not self.target_closed_loop_bandwidth > 0:
            raise ParameterError("target_closed_loop_bandwidth", "must be positive")
        if self.sensor_noise_rms < 0:
            raise ParameterError("sensor_noise_rms", "must be non-negative")
        if not self.actuator_range > 0:
            raise ParameterError("actuator_range", "must be positive")
        if self.pid_gains is None:
            gains = tune_gains(self.sensor_rate, self.target_closed_loop_bandwidth)
        else:
            gains = tuple(float(g) for g in self.pid_gains)
            if len(gains) != 3 or not all(math.isfinite(g) for g in gains):
                raise ParameterError("pid_gains", "must be three finite numbers")
        object.__setattr__(self, "pid_gains", gains)


@dataclass(frozen=True, kw_only=True)
class DisturbanceSpec:
    drift_amplitude: float = 0.0  # urad/s
    turbulence_rms: float = 0.0  # urad
    turbulence_knee: float = 10.0  # Hz
    sinusoid_probe: tuple[float, float] | None = None  # (Hz, urad)

    def __post_init__(self):
        if self.drift_amplitude < 0 or self.turbulence_rms < 0:
            raise ParameterError("amplitude", "must be non-negative")
        if not self.turbulence_knee > 0:
            raise ParameterError("turbulence_knee", "must be positive")
        if self.sinusoid_probe is not None:
            frequency, amplitude = self.sinusoid_probe
            if frequency <= 0 or amplitude < 0:
                raise ParameterError("sinusoid_probe", "needs a positive frequency and amplitude")
            object.__setattr__(self, "sinusoid_probe", (float(frequency), float(amplitude)))


@dataclass(frozen=True, kw_only=True, eq=False)
class TrackingResult:
    residual_rms: float  # urad
    residual_series: np.ndarray = field(repr=False)
    per_stage_commands: dict[str, np.ndarray] = field(repr=False)
    dt: float

    def summary(self) -> dict:
        return {"residual_rms_urad": self.residual_rms, "samples": int(self.residual_series.size)}


class PidController:
    """Discrete PID with output clamp and conditional integration."""

    def __init__(self, kp: float, ki: float, kd: float, sample_time: float, limit: float):
        self.kp, self.ki, self.kd = kp, ki, kd
        self.sample_time = sample_time
        self.limit = limit
        self.reset()

    def reset(self) -> None:
        self.integral = 0.0
        self.previous_error = None

    def update(self, error: float) -> float:
        integral = self.integral + error * self.sample_time
        if self.previous_error is None:
            derivative = 0.0
        else:
            derivative = (error - self.previous_error) / self.sample_time
        self.previous_error = error
        output = self.kp * error + self.ki * integral + self.kd * derivative
        if -self.limit <= output <= self.limit:
            self.integral = integral
            return output
        # saturated: freeze the integrator
        return math.copysign(self.limit, output)


def synthesize_disturbance(spec: DisturbanceSpec, steps: int, dt: float, rng_seed: int) -> np.ndarray:
    """Platform drift + turbulence (flat to the knee, -2 slope above) + probe."""
    t = np.arange(steps) * dt
    series = spec.drift_amplitude * t
    if spec.turbulence_rms > 0:
        rng = np.random.default_rng(rng_seed)
        pole = math.exp(-2 * math.pi * spec.turbulence_knee * dt)
        drive = spec.turbulence_rms * math.sqrt(1 - pole**2) * rng.standard_normal(steps)
        start = spec.turbulence_rms * rng.standard_normal()
        turbulence, _ = lfilter([1.0], [1.0, -pole], drive, zi=[pole * start])
        series = series + turbulence
    if spec.sinusoid_probe is not None:
        frequency, amplitude = spec.sinusoid_probe
        series = series + amplitude * np.sin(2 * math.pi * frequency * t)
    return np.asarray(series, dtype=float)


def _hold_steps(stage: LoopStage, dt: float) -> int:
    return max(1, int(round(1.0 / (stage.sensor_rate * dt))))


def _stage_noise(stage: LoopStage, samples: int, rng_seed) -> np.ndarray:
    # keyed on the stage name: a stage draws the same noise in any cascade
    base = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    seed = np.random.SeedSequence(base.entropy, spawn_key=(*base.spawn_key, zlib.crc32(stage.name.encode())))
    return stage.sensor_noise_rms * np.random.default_rng(seed).standard_normal(samples)


def run_cascade(stages: list[LoopStage], disturbance: np.ndarray, dt: float, rng_seed: int) -> TrackingResult:
    """Close the enabled stages around a precomputed disturbance series.

    The fastest enabled stage holds each command until its next sample. Every
    slower stage slews its actuator linearly to the new command over one
    sample period, so a faster stage downstream sees a continuous correction.
    """
    active = [stage for stage in stages if stage.enabled]
    steps = disturbance.size
    holds = [_hold_steps(stage, dt) for stage in active]
    noise = [_stage_noise(stage, steps // hold + 1, rng_seed) for stage, hold in zip(active, holds)]
    controllers = [
        PidController(*stage.pid_gains, sample_time=hold * dt, limit=stage.actuator_range)
        for stage, hold in zip(active, holds)
    ]
    slewing = [s < len(active) - 1 for s in range(len(active))]
    commands = np.zeros((len(active), steps))
    start = [0.0] * len(active)
    target = [0.0] * len(active)
    residual = np.empty(steps)
    for i in range(steps):
        correction = 0.0
        for s, controller in enumerate(controllers):
            phase = i % holds[s]
            if phase == 0:
                measured = disturbance[i] - correction - target[s] + noise[s][i // holds[s]]
                start[s] = target[s]
                target[s] = controller.update(measured)
            if slewing[s]:
                position = start[s] + (target[s] - start[s]) * phase / holds[s]
            else:
                position = target[s]
            correction += position
            commands[s, i] = position
        value = disturbance[i] - correction
        if not -DIVERGENCE_LIMIT < value < DIVERGENCE_LIMIT:
            raise InstabilityError(
                f"tracking loop diverged at t={i * dt:.4g} s "
                f"(residual {value:.3g} urad); check gains of "
                + ", ".join(s.name for s in active)
            )
        residual[i] = value
    rms = float(np.sqrt(np.mean(residual**2))) if steps else 0.0
    return TrackingResult(
        residual_rms=rms,
        residual_series=residual,
        per_stage_commands={stage.name: commands[s] for s, stage in enumerate(active)},
        dt=dt,
    )


def _check_stages(stages: list[LoopStage], dt: float):
    if not 1 <= len(stages) <= 3:
        raise ValueError("a cascade has one to three stages")
    rates = [stage.sensor_rate for stage in stages]
    if rates != sorted(rates):
        raise ValueError("stages must be ordered from coarse (slowest) to fine")
    if dt > 1.0 / (2 * max(rates)) * (1 + 1e-9):
        raise ValueError(f"dt={dt} s is too coarse for a {max(rates)} Hz sensor")


def simulate_loop(
    stages: list[LoopStage], disturbance: DisturbanceSpec, duration: float, dt: float, rng_seed: int
) -> TrackingResult:
    _check_stages(stages, dt)
    steps = int(round(duration / dt))
    disturbance_seed, noise_seed = np.random.SeedSequence(rng_seed).spawn(2)
    series = synthesize_disturbance(disturbance, steps, dt, disturbance_seed)
    result = run_cascade(stages, series, dt, noise_seed)
    logger.debug("cascade %s: residual %.3f urad rms over %i steps",
                 [s.name for s in stages if s.enabled], result.residual_rms, steps)
    return result


def _tone_amplitude(series: np.ndarray, frequency: float, dt: float) -> float:
    t = np.arange(series.size) * dt
    return float(2.0 / series.size * abs(np.sum(series * np.exp(-2j * math.pi * frequency * t))))


def rejection_curve(
    stages: list[LoopStage],
    probe_frequencies: list[float],
    probe_amplitude: float,
    duration: float,
    dt: float,
    rng_seed: int = 0,
) -> list[tuple[float, float]]:
    """Residual amplitude ratio (loop on / loop off) per probe frequency."""
    _check_stages(stages, dt)
    slowest = min(stage.sensor_rate for stage in stages if stage.enabled)
    curve = []
    for frequency in probe_frequencies:
        if not 0 < frequency < slowest / 2:
            raise ValueError(f"probe {frequency} Hz is above the {slowest / 2} Hz Nyquist limit")
        # whole probe cycles, the first quarter left for settling
        cycles = max(4, int(round(duration * frequency)))
        steps = int(round(cycles / frequency / dt))
        settle = int(round(cycles // 4 / frequency / dt))
        probe = DisturbanceSpec(sinusoid_probe=(frequency, probe_amplitude))
        series = synthesize_disturbance(probe, steps, dt, rng_seed)
        closed = run_cascade(stages, series, dt, rng_seed).residual_series
        window = slice(settle, steps)
        on = _tone_amplitude(closed[window], frequency, dt)
        off = _tone_amplitude(series[window], frequency, dt)
        curve.append((float(frequency), on / off))
    return curve


def bandwidth_of(curve: list[tuple[float, float]]) -> float:
    """Frequency of the first upward 0.5 crossing, linearly interpolated."""
    points = sorted(curve)
    for (f1, r1), (f2, r2) in zip(points, points[1:]):
        if r1 <= 0.5 <= r2 and r2 > r1:
            return f1 + (0.5 - r1) * (f2 - f1) / (r2 - r1)
    raise ValueError("rejection curve does not bracket the 0.5 ratio")


def stage_bandwidths(
    stages: list[LoopStage], probe_amplitude: float, duration: float, dt: float, points: int = 24
) -> dict[str, float]:
    """Measured bandwidth of every stage closed on its own."""
    result = {}
    for stage in stages:
        target = stage.target_closed_loop_bandwidth
        frequencies = np.geomspace(target / 4, min(4 * target, stage.sensor_rate / 2.5), points)
        curve = rejection_curve([stage], list(frequencies), probe_amplitude, duration, dt)
        result[stage.name] = bandwidth_of(curve)
    return result


def pointing_loss_feed(result: TrackingResult, geom: ChannelGeometry) -> float:
    """Pointing loss (dB) of the channel given the loop's residual jitter."""
    return pointing_loss(replace(geom, pointing_rms=result.residual_rms * URAD))


class AcquisitionPhase(enum.Enum):
    GPS_POINTING = "gps-pointing"
    BEACON_EXCHANGE = "beacon-exchange"
    COARSE_TRACKING = "coarse-tracking"
    FINE_TRACKING = "fine-tracking"
    LINKED = "linked"


class LinkAcquisition:
    """Scripted link set-up; every step succeeds.

    A fixed-site link that was already aligned skips GPS pointing and the
    beacon exchange.
    """

    _SCRIPT = (
        (AcquisitionPhase.GPS_POINTING, "point transmitter from GPS coordinates"),
        (AcquisitionPhase.BEACON_EXCHANGE, "exchange beacon lasers in both directions"),
        (AcquisitionPhase.COARSE_TRACKING, "close coarse loops on the beacons"),
        (AcquisitionPhase.FINE_TRACKING, "close fine loops sharing the quantum path"),
        (AcquisitionPhase.LINKED, "transmit quantum and sync signals"),
    )

    def __init__(self, fixed_site: bool = False):
        self.fixed_site = fixed_site
        self.phase = None
        self.history = []

    def run(self) -> list[AcquisitionPhase]:
        for phase, action in self._SCRIPT:
            if self.fixed_site and phase in (AcquisitionPhase.GPS_POINTING, AcquisitionPhase.BEACON_EXCHANGE):
                continue
            logger.info("acquisition: %s (%s)", phase.value, action)
            self.phase = phase
            self.history.append(phase)
        return list(self.history)

    @property
    def linked(self) -> bool:
        return self.phase is AcquisitionPhase.LINKED
