"""
Detectors, time tags and station synchronization.

All times are integer picoseconds. A TimeTagStream keeps its channel ids and
times as parallel numpy arrays in the order given. Every producer here emits
them sorted by time; coincidence matching rejects streams that are not.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .errors import ParameterError, StatisticsError

logger = logging.getLogger(__name__)

PS_PER_S = 10**12
PS_PER_NS = 1000
MIN_FIT_SAMPLES = 100


@dataclass(frozen=True, kw_only=True)
class DetectorParams:
    efficiency: float = 1.0
    dark_rate: float = 0.0  # s^-1
    background_rate: float = 0.0  # s^-1
    jitter_sigma: float = 0.0  # ps

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ParameterError("efficiency", "must lie in [0, 1]")
        for name in ("dark_rate", "background_rate", "jitter_sigma"):
            if getattr(self, name) < 0:
                raise ParameterError(name, "must be non-negative")

    @property
    def noise_rate(self) -> float:
        return self.dark_rate + self.background_rate


@dataclass(frozen=True, kw_only=True)
class SyncPulseShape:
    fwhm: float = 2.65  # ns
    rise_time: float = 2.0  # ns
    amplitude_jitter_fraction: float = 0.1
    repetition: float = 10e3  # Hz

    def __post_init__(self):
        if not 0 < self.rise_time <= self.fwhm:
            raise ParameterError("rise_time", "must be positive and at most fwhm")
        if not self.repetition > 0:
            raise ParameterError("repetition", "must be positive")
        if self.amplitude_jitter_fraction < 0:
            raise ParameterError("amplitude_jitter_fraction", "must be non-negative")


@dataclass(frozen=True)
class CoincidenceWindow:
    width: float  # ns

    def __post_init__(self):
        if not self.width > 0:
            raise ParameterError("width", "must be positive")

    @property
    def half_width_ps(self) -> float:
        return self.width * PS_PER_NS / 2


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    channels: np.ndarray
    times: np.ndarray  # ps
    origin: str = ""
    pps_marks: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.int32).ravel()
        times = np.asarray(self.times, dtype=np.int64).ravel()
        if channels.size != times.size:
            raise ValueError("channels and times must have equal length")
        if times.size and times.min() < 0:
            raise ValueError("time tags must be non-negative")
        channels.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "pps_marks", tuple(int(m) for m in self.pps_marks))

    def __len__(self):
        return self.times.size

    @property
    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.times) >= 0))

    def sorted(self) -> "TimeTagStream":
        order = np.argsort(self.times, kind="stable")
        return TimeTagStream(self.channels[order], self.times[order], self.origin, self.pps_marks)

    @classmethod
    def from_times(cls, times, channel: int = 0, origin: str = "", duration: float | None = None):
        times = np.asarray(times, dtype=np.int64)
        pps = () if duration is None else tuple(range(0, int(duration) * PS_PER_S + 1, PS_PER_S))
        return cls(np.full(times.size, channel), times, origin=origin, pps_marks=pps)

    def merge(self, other: "TimeTagStream") -> "TimeTagStream":
        times = np.concatenate([self.times, other.times])
        channels = np.concatenate([self.channels, other.channels])
        marks = tuple(sorted(set(self.pps_marks) | set(other.pps_marks)))
        return TimeTagStream(channels, times, self.origin, marks).sorted()

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# station={self.origin}\n")
            fh.write(f"# pps_epoch={self.pps_marks[0] if self.pps_marks else 0}\n")
            fh.write(f"# pps_count={len(self.pps_marks)}\n")
            writer = csv.writer(fh)
            writer.writerow(["channel_id", "time_ps"])
            writer.writerows(zip(self.channels.tolist(), self.times.tolist()))

    @classmethod
    def from_csv(cls, path: Path) -> "TimeTagStream":
        header = {}
        with open(path, newline="") as fh:
            lines = [line for line in fh]
        rows = []
        for line in lines:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            else:
                rows.append(line)
        reader = csv.DictReader(rows)
        data = [(int(r["channel_id"]), int(r["time_ps"])) for r in reader]
        channels = [c for c, _ in data]
        times = [t for _, t in data]
        epoch = int(header.get("pps_epoch", 0))
        count = int(header.get("pps_count", 0))
        marks = tuple(epoch + i * PS_PER_S for i in range(count))
        return cls(channels, times, origin=header.get("station", ""), pps_marks=marks)


def poisson_times(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted arrival times (ps) of a homogeneous Poisson process."""
    span = int(round(duration * PS_PER_S))
    count = rng.poisson(rate * duration) if rate > 0 else 0
    return np.sort(rng.integers(0, span, size=count, dtype=np.int64))


def generate_noise_tags(
    params: DetectorParams, duration: float, rng_seed: int, channel: int = 0, origin: str = ""
) -> TimeTagStream:
    """Dark and background clicks over ``duration`` seconds."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(rng_seed)
    times = poisson_times(params.noise_rate, duration, rng)
    return TimeTagStream.from_times(times, channel=channel, origin=origin, duration=duration)


def discriminate_sync(
    shape: SyncPulseShape,
    true_emission_times,
    tdc_resolution: float,
    rng_seed: int,
    *,
    walk_suppression: float = 0.1,
    electronics_jitter: float = 0.0,
    channel: int = 0,
    origin: str = "",
) -> TimeTagStream:
    """Timestamp sync pulses through a constant-fraction discriminator and a TDC.

    The CFD leaves a residual walk of amplitude_jitter x rise_time x
    walk_suppression; ``electronics_jitter`` (ps, Gaussian) is added before
    the TDC floors each time to its bin.
    """
    if not tdc_resolution > 0:
        raise ValueError("TDC resolution must be positive")
    if not 0.0 <= walk_suppression <= 0.1:
        raise ValueError("walk suppression must lie in [0, 0.1]")
    rng = np.random.default_rng(rng_seed)
    truth = np.asarray(true_emission_times, dtype=np.int64)
    walk_scale = shape.amplitude_jitter_fraction * shape.rise_time * PS_PER_NS * walk_suppression
    walk = walk_scale * rng.standard_normal(truth.size)
    jitter = electronics_jitter * rng.standard_normal(truth.size)
    measured = truth + walk + jitter
    stamped = (np.floor(measured / tdc_resolution) * tdc_resolution).astype(np.int64)
    stamped = np.clip(stamped, 0, None)
    order = np.argsort(stamped, kind="stable")
    return TimeTagStream.from_times(stamped[order], channel=channel, origin=origin)


def accidental_rate(rate_a: float, rate_b: float, window: CoincidenceWindow) -> float:
    """Expected accidental coincidence rate r_a r_b tau of independent streams."""
    return rate_a * rate_b * window.width * 1e-9


def match_coincidences(
    a: TimeTagStream, b: TimeTagStream, window: CoincidenceWindow, offset: float = 0
) -> list[tuple[int, int]]:
    """Greedy one-to-one pairing with |t_a - t_b - offset| <= window / 2.

    Tags of ``a`` are visited in time order and take the earliest unused tag
    of ``b`` inside their window. Returns (index_a, index_b) pairs.
    """
    if not (a.is_sorted and b.is_sorted):
        raise ValueError("time tag streams must be sorted")
    half = window.half_width_ps
    targets = a.times - offset
    lows = np.searchsorted(b.times, targets - half, side="left")
    highs = np.searchsorted(b.times, targets + half, side="right")
    candidates = np.flatnonzero(highs > lows)
    pairs = []
    next_free = 0
    for i in candidates:
        j = max(int(lows[i]), next_free)
        if j < highs[i]:
            pairs.append((int(i), j))
            next_free = j + 1
    return pairs


def poisson_times_around(
    rate: float, anchors, half_width: float, duration: float, rng: np.random.Generator
) -> np.ndarray:
    """Poisson arrivals (ps) at ``rate``, drawn only within ``half_width`` of an anchor.

    Overlapping windows are merged first, so the result is the full process
    restricted to the union of windows. ``anchors`` must be sorted.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if rate <= 0 or anchors.size == 0:
        return np.empty(0, dtype=np.int64)
    last = int(round(duration * PS_PER_S)) - 1
    half = int(half_width)
    lows = np.clip(anchors - half, 0, last)
    highs = np.clip(anchors + half, 0, last)
    begins = np.flatnonzero(np.concatenate([[True], lows[1:] > highs[:-1]]))
    ends = np.concatenate([begins[1:] - 1, [anchors.size - 1]])
    lo, hi = lows[begins], highs[ends]
    counts = rng.poisson(rate * (hi - lo + 1) / PS_PER_S)
    times = rng.integers(np.repeat(lo, counts), np.repeat(hi, counts), endpoint=True)
    return np.sort(times)


def accidental_matches(
    anchors: TimeTagStream, rate: float, window: CoincidenceWindow, duration: float, rng_seed
) -> list[tuple[int, int]]:
    """Coincidences of ``anchors`` with an independent Poisson stream at ``rate``.

    Returns the (anchor index, other index) pairs from match_coincidences.
    """
    rng = np.random.default_rng(rng_seed)
    others = poisson_times_around(rate, anchors.times, window.half_width_ps, duration, rng)
    return match_coincidences(anchors, TimeTagStream.from_times(others), window)


def _gaussian(x, amplitude, center, sigma):
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def _histogram(residuals: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    values = np.unique(residuals)
    step = float(np.min(np.diff(values)))
    width = np.diff(np.histogram_bin_edges(residuals, bins="fd"))[0]
    # bins are whole multiples of the data grid so quantized data has no comb
    width = max(step, np.round(width / step) * step)
    start = values[0] - width / 2
    count = int(np.ceil((values[-1] - start) / width)) + 1
    edges = start + width * np.arange(count + 1)
    counts, edges = np.histogram(residuals, bins=edges)
    # one empty bin either side pins the tails of the fit
    centers = np.concatenate([[edges[0] - width / 2], (edges[:-1] + edges[1:]) / 2,
                              [edges[-1] + width / 2]])
    counts = np.concatenate([[0], counts, [0]])
    return centers, counts, width


@dataclass(frozen=True, kw_only=True)
class GaussianFit:
    center: float  # ps
    delta: float  # ps
    delta_error: float  # ps
    bin_centers: np.ndarray = field(repr=False, compare=False)
    counts: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"center_ps": self.center, "delta_ps": self.delta, "delta_err_ps": self.delta_error}


def fit_gaussian_histogram(residuals) -> GaussianFit:
    """Least-squares Gaussian fit to the binned residual histogram."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size < MIN_FIT_SAMPLES:
        raise StatisticsError(f"need at least {MIN_FIT_SAMPLES} samples, got {residuals.size}")
    if np.ptp(residuals) == 0:
        raise StatisticsError("all residuals are equal; width is undefined")
    centers, counts, width = _histogram(residuals)
    mean, std = residuals.mean(), residuals.std()
    p0 = [counts.max(), mean, max(std, width / 2)]
    try:
        popt, pcov = curve_fit(
            _gaussian, centers, counts, p0=p0,
            sigma=np.sqrt(np.maximum(counts, 1)), absolute_sigma=True, maxfev=10000,
        )
        center, delta, delta_error = popt[1], abs(popt[2]), float(np.sqrt(pcov[2, 2]))
        if not np.isfinite(delta_error):
            raise RuntimeError("singular covariance")
    except RuntimeError as e:
        logger.warning("Gaussian fit failed (%s); using sample moments", e)
        center, delta = mean, std
        delta_error = std / np.sqrt(2 * (residuals.size - 1))
    return GaussianFit(
        center=float(center), delta=float(delta), delta_error=float(delta_error),
        bin_centers=centers, counts=counts,
    )


@dataclass(frozen=True, kw_only=True)
class SyncChain:
    """Everything between a sync laser pulse and its recorded time stamp."""

    shape: SyncPulseShape = field(default_factory=SyncPulseShape)
    tdc_resolution: float = 100.0  # ps
    walk_suppression: float = 0.1
    electronics_jitter: float = 123.0  # ps per station
    station_offset: float = 333_356.0  # ps, constant inter-station clock offset

    def __post_init__(self):
        if not self.tdc_resolution > 0:
            raise ParameterError("tdc_resolution", "must be positive")
        if not 0.0 <= self.walk_suppression <= 0.1:
            raise ParameterError("walk_suppression", "must lie in [0, 0.1]")
        if self.electronics_jitter < 0:
            raise ParameterError("electronics_jitter", "must be non-negative")


@dataclass(frozen=True, kw_only=True)
class SyncResult:
    fit: GaussianFit
    pulses: int
    within_1ns: bool

    @property
    def two_delta(self) -> float:
        return 2 * self.fit.delta

    def to_dict(self) -> dict:
        return {
            **self.fit.to_dict(),
            "two_delta_ps": self.two_delta,
            "pulses": self.pulses,
            "within_1ns": self.within_1ns,
        }


def sync_accuracy(chain: SyncChain, detector: DetectorParams, pulses: int, rng_seed: int) -> SyncResult:
    """Inter-station timing residual of the quantum channel.

    Both stations timestamp the same sync pulses; the quantum detector at
    the receiver adds its own Gaussian jitter on top.
    """
    if pulses < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} pulses")
    seeds = np.random.SeedSequence(rng_seed).spawn(4)
    rng = np.random.default_rng(seeds[0])
    period = PS_PER_S / chain.shape.repetition
    # sub-ps phase of each pulse against the TDC clocks
    emission = (np.arange(pulses) * period + rng.uniform(0, chain.tdc_resolution, pulses)).astype(np.int64)
    kwargs = dict(walk_suppression=chain.walk_suppression, electronics_jitter=chain.electronics_jitter)
    sender = discriminate_sync(chain.shape, emission, chain.tdc_resolution, seeds[1], origin="sender", **kwargs)
    receiver = discriminate_sync(
        chain.shape, emission + int(chain.station_offset), chain.tdc_resolution, seeds[2],
        origin="receiver", **kwargs,
    )
    detector_jitter = detector.jitter_sigma * np.random.default_rng(seeds[3]).standard_normal(pulses)
    residuals = receiver.times - sender.times - chain.station_offset + detector_jitter
    fit = fit_gaussian_histogram(residuals)
    logger.info("sync residual: center %.1f ps, 2delta %.1f +- %.1f ps over %i pulses",
                fit.center, 2 * fit.delta, 2 * fit.delta_error, pulses)
    return SyncResult(fit=fit, pulses=pulses, within_1ns=2 * fit.delta < PS_PER_NS)
