"""
Run reports: the resolved config, the result payload, provenance, and the
CSV tables that go with each protocol.
"""
import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .channel import LinkBudget
from .distribution import ChshResult, LocalityReport
from .teleportation import FidelitySurface, TeleportationResult
from .timing import SyncResult
from .utils import to_builtin
from .version import __version__

logger = logging.getLogger(__name__)

REPORT_FILENAME = "report.json"


@dataclass(frozen=True, kw_only=True)
class Table:
    header: list[str]
    rows: list[list]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(to_builtin(self.rows))
        return buffer.getvalue()


@dataclass(frozen=True, kw_only=True)
class RunReport:
    protocol: str
    config: dict
    results: dict
    provenance: dict
    tables: dict[str, Table] = field(default_factory=dict)
    insufficient_statistics: bool = False

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "config": self.config,
            "results": self.results,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(to_builtin(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def write(self, directory: Path) -> list[Path]:
        """Write report.json and every table into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [directory / REPORT_FILENAME]
        written[0].write_text(self.to_json())
        for filename, table in self.tables.items():
            path = directory / filename
            path.write_text(table.to_csv())
            written.append(path)
        logger.info("wrote %s", ", ".join(str(p) for p in written))
        return written


def _teleport(result: TeleportationResult) -> tuple[dict, dict[str, Table]]:
    payload = {
        "per_state": {label: asdict(entry) for label, entry in result.per_state.items()},
        "average_fidelity": result.average_fidelity,
        "average_error": result.average_error,
        "pooled_fidelity": result.pooled_fidelity,
        "pooled_error": result.pooled_error,
        "total_coincidences": result.total_coincidences,
        "effective_time": result.effective_time,
        "physical_duration": result.physical_duration,
        "expected_coincidences": result.expected_coincidences,
        "analytic_fidelity": result.analytic_fidelity,
        "insufficient_statistics": result.insufficient_statistics,
        "counts": {
            "signal": result.counts.signal,
            "multipair": result.counts.multipair,
            "accidental": result.counts.accidental,
        },
    }
    table = Table(header=["state", "fidelity", "error", "coincidences"], rows=[list(row) for row in result.table()])
    return payload, {"teleport.csv": table}


def locality_dict(report: LocalityReport) -> dict:
    return asdict(report)


def _chsh(result: ChshResult) -> tuple[dict, dict[str, Table]]:
    payload = {
        "correlations": [asdict(entry) for entry in result.correlations],
        "s_value": result.s_value,
        "s_error": result.s_error,
        "violation_sigmas": result.violation_sigmas,
        "coincidences": result.coincidences,
        "effective_time": result.effective_time,
        "physical_duration": result.physical_duration,
        "expected_coincidences": result.expected_coincidences,
        "insufficient_statistics": result.insufficient_statistics,
        "counts": {"signal": result.counts.signal, "accidental": result.counts.accidental},
    }
    if result.locality is not None:
        payload["locality"] = locality_dict(result.locality)
    table = Table(
        header=["setting_a", "setting_b", "correlation", "error", "coincidences"],
        rows=[
            [e.setting_a, e.setting_b, e.correlation, e.error, e.coincidences]
            for e in result.correlations
        ],
    )
    return payload, {"chsh.csv": table}


def _surfaces(surfaces: dict[str, FidelitySurface]) -> tuple[dict, dict[str, Table]]:
    payload, tables = {}, {}
    for name, surface in surfaces.items():
        payload[name] = {
            "loss_range": [surface.loss_axis[0], surface.loss_axis[-1]],
            "dark_range": [surface.dark_axis[0], surface.dark_axis[-1]],
            "resolution": [surface.dark_axis.size, surface.loss_axis.size],
            "fidelity_min": surface.fidelity.min(),
            "fidelity_max": surface.fidelity.max(),
            "classical_limit": [list(point) for point in surface.contour_points()],
        }
        tables[f"surface_{name}.csv"] = Table(
            header=["dark_rate"] + [f"{loss:.6g}" for loss in surface.loss_axis],
            rows=[[dark, *row] for dark, row in zip(surface.dark_axis, surface.fidelity)],
        )
    return payload, tables


def _apt_sweep(result) -> tuple[dict, dict[str, Table]]:
    payload = {
        "stage": result.stage,
        "rejection_curve": [list(point) for point in result.curve],
        "bandwidth_hz": result.bandwidth,
        "stage_bandwidths_hz": result.stage_bandwidths,
        "residual_rms_urad": result.tracking.residual_rms,
        "pointing_loss_db": result.pointing_loss_db,
        "acquisition": [phase.value for phase in result.acquisition],
    }
    dt = result.tracking.dt
    tables = {
        "rejection.csv": Table(header=["frequency_hz", "ratio"], rows=[list(p) for p in result.curve]),
        "residual_series.csv": Table(
            header=["time_s", "residual_urad"],
            rows=[[i * dt, value] for i, value in enumerate(result.tracking.residual_series)],
        ),
    }
    return payload, tables


def _sync(result: SyncResult) -> tuple[dict, dict[str, Table]]:
    fit = result.fit
    table = Table(header=["bin_center_ps", "count"], rows=[list(row) for row in zip(fit.bin_centers, fit.counts)])
    return result.to_dict(), {"sync_histogram.csv": table}


def _budgets(budgets: dict[str, dict[str, LinkBudget]]) -> tuple[dict, dict[str, Table]]:
    payload, rows = {}, []
    for channel, variants in budgets.items():
        payload[channel] = {name: asdict(budget) for name, budget in variants.items()}
        for variant, budget in variants.items():
            rows.extend([channel, variant, component, db] for component, db in budget.items())
    return payload, {"budget.csv": Table(header=["channel", "variant", "component", "db"], rows=rows)}


_SERIALIZERS = {
    "teleport": _teleport,
    "chsh": _chsh,
    "surface": _surfaces,
    "apt-sweep": _apt_sweep,
    "sync": _sync,
    "budget": _budgets,
}


def build_report(config, result, wall_time: float | None = None) -> RunReport:
    payload, tables = _SERIALIZERS[config.protocol](result)
    provenance = {
        "tool": "qtlink",
        "version": __version__,
        "seed": config.seed,
        "time_scale": config.time_scale,
        "simulated_duration": config.simulated_duration,
        "physical_duration": config.duration,
    }
    if wall_time is not None:
        provenance["wall_time"] = wall_time
    return RunReport(
        protocol=config.protocol,
        config=config.to_dict(),
        results=payload,
        provenance=provenance,
        tables=tables,
        insufficient_statistics=bool(getattr(result, "insufficient_statistics", False)),
    )
