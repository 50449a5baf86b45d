"""
Run dispatch: one driver per protocol, each returning its result object.
"""
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import report
from .channel import LinkBudget
from .config import (
    AptSweepSettings,
    BudgetSettings,
    ScenarioConfig,
    SyncSettings,
)
from .distribution import run_chsh
from .errors import ConfigError
from .teleportation import FidelitySurface, fidelity_surface, run_teleportation
from .timing import CoincidenceWindow, SyncResult, sync_accuracy
from .tracking import (
    AcquisitionPhase,
    LinkAcquisition,
    TrackingResult,
    bandwidth_of,
    pointing_loss_feed,
    rejection_curve,
    simulate_loop,
    stage_bandwidths,
)
from .utils import humanize_seconds

logger = logging.getLogger(__name__)


@dataclass(frozen=True, kw_only=True)
class AptSweepResult:
    stage: str
    curve: list[tuple[float, float]]
    bandwidth: float | None
    stage_bandwidths: dict[str, float]
    tracking: TrackingResult
    pointing_loss_db: float | None
    acquisition: list[AcquisitionPhase]


def run_apt_sweep(config: ScenarioConfig) -> AptSweepResult:
    settings = config.apt_sweep or AptSweepSettings()
    stages = list(config.apt.stages)
    fastest = max(stage.sensor_rate for stage in stages)
    stage = stages[-1]
    if settings.stage is not None:
        stage = next(s for s in stages if s.name == settings.stage)

    acquisition = LinkAcquisition(fixed_site=settings.fixed_site).run()

    sweep_dt = settings.dt or 1.0 / (4 * stage.sensor_rate)
    frequencies = settings.probe_frequencies
    if frequencies is None:
        target = stage.target_closed_loop_bandwidth
        frequencies = tuple(np.geomspace(target / 10, min(10 * target, stage.sensor_rate / 2.5), 16))
    curve = rejection_curve([stage], list(frequencies), settings.probe_amplitude, settings.probe_duration, sweep_dt)
    try:
        bandwidth = bandwidth_of(curve)
    except ValueError:
        logger.warning("rejection curve of %s never crosses 0.5", stage.name)
        bandwidth = None
    logger.info("%s stage: bandwidth %s", stage.name, f"{bandwidth:.1f} Hz" if bandwidth else "n/a")

    bandwidths = {}
    if settings.measure_all_stages:
        bandwidths = stage_bandwidths(
            stages, settings.probe_amplitude, settings.probe_duration, settings.dt or 1.0 / (4 * fastest)
        )

    tracking_dt = settings.dt or 1.0 / (2 * fastest)
    tracking = simulate_loop(stages, config.apt.disturbance, settings.tracking_duration, tracking_dt, config.seed)
    pointing = pointing_loss_feed(tracking, config.channels[0].geometry) if config.channels else None
    logger.info("cascade residual %.2f urad rms", tracking.residual_rms)
    return AptSweepResult(
        stage=stage.name,
        curve=curve,
        bandwidth=bandwidth,
        stage_bandwidths=bandwidths,
        tracking=tracking,
        pointing_loss_db=pointing,
        acquisition=acquisition,
    )


def run_sync(config: ScenarioConfig) -> SyncResult:
    settings = config.sync or SyncSettings()
    return sync_accuracy(settings.chain, config.detector(settings.receiver), settings.pulses, config.seed)


def run_budget(config: ScenarioConfig) -> dict[str, dict[str, LinkBudget]]:
    settings = config.budget or BudgetSettings()
    budgets = {}
    for channel in config.channels:
        variants = channel.budget_variants() if settings.weather_variants else {"nominal": channel.budget()}
        budgets[channel.name] = variants
        for name, budget in variants.items():
            logger.info("%s/%s: %.1f dB", channel.name, name, budget.total_db)
    return budgets


def run_surface(config: ScenarioConfig) -> dict[str, FidelitySurface]:
    settings = config.surface
    window = CoincidenceWindow(settings.window)
    return {
        name: fidelity_surface(
            source,
            settings.loss_range,
            settings.dark_range,
            settings.resolution,
            window=window,
            f0=settings.intrinsic_fidelity,
            bsm_identification_fraction=settings.bsm_identification_fraction,
        )
        for name, source in settings.sources.items()
    }


_DRIVERS = {
    "teleport": run_teleportation,
    "chsh": run_chsh,
    "surface": run_surface,
    "apt-sweep": run_apt_sweep,
    "sync": run_sync,
    "budget": run_budget,
}


def run(config: ScenarioConfig, record_wall_time: bool = False) -> report.RunReport:
    """Dispatch to the protocol's driver and wrap its result in a report."""
    try:
        driver = _DRIVERS[config.protocol]
    except KeyError:
        raise ConfigError("protocol", f"unknown protocol {config.protocol!r}") from None
    logger.info("running %s (%s, seed %i)", config.name, config.protocol, config.seed)
    started = time.monotonic()
    result = driver(config)
    elapsed = time.monotonic() - started
    logger.info("%s finished in %s", config.protocol, humanize_seconds(elapsed))
    return report.build_report(config, result, wall_time=elapsed if record_wall_time else None)
