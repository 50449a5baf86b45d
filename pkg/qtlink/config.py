"""
Scenario files.

A scenario is one JSON object. Every section becomes a frozen dataclass;
unknown keys, missing sections and out-of-range values raise ConfigError
naming the dotted path of the offending entry.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .channel import ChannelGeometry, LinkBudget, total_budget, with_spot
from .errors import ConfigError, ParameterError
from .presets import get_preset
from .source import SourceParams
from .timing import DetectorParams, SyncChain, SyncPulseShape
from .tracking import DisturbanceSpec, LoopStage

logger = logging.getLogger(__name__)

PROTOCOLS = ("teleport", "chsh", "surface", "apt-sweep", "sync", "budget")
STATE_LABELS = ("H", "V", "+", "-", "R", "L")


@dataclass(frozen=True, kw_only=True)
class WeatherVariant:
    name: str
    far_field_spot: float  # m
    atmospheric_db: float


@dataclass(frozen=True, kw_only=True)
class ChannelSpec:
    name: str
    geometry: ChannelGeometry
    atmospheric_db: float = 0.0
    optics_db: float = 0.0
    loss_db: float | None = None  # measured or assumed total, overrides the budget
    weather: tuple[WeatherVariant, ...] = ()

    def budget(self) -> LinkBudget:
        return total_budget(self.geometry, self.atmospheric_db, self.optics_db)

    def budget_variants(self) -> dict[str, LinkBudget]:
        variants = {"nominal": self.budget()}
        for variant in self.weather:
            geom = with_spot(self.geometry, variant.far_field_spot)
            variants[variant.name] = total_budget(geom, variant.atmospheric_db, self.optics_db)
        return variants

    @property
    def total_loss_db(self) -> float:
        if self.loss_db is not None:
            return self.loss_db
        return self.budget().total_db


@dataclass(frozen=True, kw_only=True)
class AptSpec:
    stages: tuple[LoopStage, ...]
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)


@dataclass(frozen=True, kw_only=True)
class TeleportSettings:
    states: tuple[str, ...] = STATE_LABELS
    interference_visibility: float = 0.6
    window: float = 1.0  # ns
    collinear_twofold: float = 6.5e5  # s^-1
    bsm_identification_fraction: float = 0.5
    local_fourfold_rate: float | None = None  # s^-1, measured
    multi_pair_noise: bool = True
    receiver: str = "bob"
    shards: int = 1


@dataclass(frozen=True, kw_only=True)
class LocalitySettings:
    receiver_separation: float  # km
    path_difference: float  # km
    measurement_duration: float = 0.1  # us


@dataclass(frozen=True, kw_only=True)
class ChshSettings:
    effective_visibility_hv: float | None = None
    effective_visibility_pm: float | None = None
    window: float = 1.0  # ns
    qrng_interval: float = 20.0  # us
    receivers: tuple[str, str] = ("alice", "bob")
    locality: LocalitySettings | None = None
    shards: int = 1


@dataclass(frozen=True, kw_only=True)
class SurfaceSettings:
    sources: dict[str, SourceParams]
    loss_range: tuple[float, float] = (20.0, 70.0)  # dB
    dark_range: tuple[float, float] = (0.0, 1000.0)  # s^-1
    resolution: int = 200
    window: float = 25.0  # ns
    intrinsic_fidelity: float = 1.0
    bsm_identification_fraction: float = 0.5


@dataclass(frozen=True, kw_only=True)
class AptSweepSettings:
    stage: str | None = None  # default: the fastest stage
    probe_frequencies: tuple[float, ...] | None = None
    probe_amplitude: float = 10.0  # urad
    probe_duration: float = 0.5  # s
    dt: float | None = None
    tracking_duration: float = 10.0  # s
    fixed_site: bool = False
    measure_all_stages: bool = False


@dataclass(frozen=True, kw_only=True)
class SyncSettings:
    chain: SyncChain = field(default_factory=SyncChain)
    pulses: int = 100_000
    receiver: str = "bob"


@dataclass(frozen=True, kw_only=True)
class BudgetSettings:
    weather_variants: bool = True


@dataclass(frozen=True, kw_only=True)
class ScenarioConfig:
    name: str
    seed: int
    duration: float  # s
    protocol: str
    time_scale: float = 1.0
    source: SourceParams | None = None
    channels: tuple[ChannelSpec, ...] = ()
    detectors: dict[str, DetectorParams] = field(default_factory=dict)
    apt: AptSpec | None = None
    teleport: TeleportSettings | None = None
    chsh: ChshSettings | None = None
    surface: SurfaceSettings | None = None
    apt_sweep: AptSweepSettings | None = None
    sync: SyncSettings | None = None
    budget: BudgetSettings | None = None

    @property
    def simulated_duration(self) -> float:
        return self.duration * self.time_scale

    def detector(self, station: str) -> DetectorParams:
        try:
            return self.detectors[station]
        except KeyError:
            raise ConfigError(f"detectors.{station}", "no such station") from None

    def with_protocol(self, protocol: str) -> "ScenarioConfig":
        data = self.to_dict()
        data["protocol"] = protocol
        return from_dict(data)

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "time_scale": self.time_scale,
            "protocol": self.protocol,
        }
        if self.source is not None:
            data["source"] = asdict(self.source)
        if self.channels:
            data["channels"] = [_channel_dict(c) for c in self.channels]
        if self.detectors:
            data["detectors"] = {k: asdict(v) for k, v in self.detectors.items()}
        if self.apt is not None:
            data["apt"] = {
                "stages": [_listify(asdict(s)) for s in self.apt.stages],
                "disturbance": _listify(asdict(self.apt.disturbance)),
            }
        for key, attr in _SECTION_ATTRS.items():
            section = getattr(self, attr)
            if section is not None:
                data[key] = _section_dict(section)
        return data


def _listify(value):
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_listify(v) for v in value]
    return value


def _channel_dict(channel: ChannelSpec) -> dict:
    data = {
        "name": channel.name,
        "geometry": asdict(channel.geometry),
        "atmospheric_db": channel.atmospheric_db,
        "optics_db": channel.optics_db,
        "weather": [asdict(w) for w in channel.weather],
    }
    if channel.loss_db is not None:
        data["loss_db"] = channel.loss_db
    return data


def _section_dict(section) -> dict:
    if isinstance(section, SurfaceSettings):
        data = _listify(asdict(section))
        data["sources"] = {k: asdict(v) for k, v in section.sources.items()}
        return data
    if isinstance(section, SyncSettings):
        return {"pulses": section.pulses, "receiver": section.receiver, **_chain_dict(section.chain)}
    return _listify(asdict(section))


def _chain_dict(chain: SyncChain) -> dict:
    data = asdict(chain)
    shape = data.pop("shape")
    return {**data, **{f"pulse_{k}": v for k, v in shape.items()}}


# -- parsing -----------------------------------------------------------------

def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def _mapping(value, path: str, allowed, required=()) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key in value:
        if key not in allowed:
            raise ConfigError(_join(path, key), "unknown key")
    for key in required:
        if key not in value:
            raise ConfigError(_join(path, key), "missing required key")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return value


def _boolean(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _string(value, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"expected a non-empty string, got {value!r}")
    return value


def _numbers(value, path: str, length: int | None = None) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list of numbers")
    if length is not None and len(value) != length:
        raise ConfigError(path, f"expected {length} numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _positive(value, path: str) -> float:
    number = _number(value, path)
    if not number > 0:
        raise ConfigError(path, "must be positive")
    return number


def _build(cls, path: str, prefix: str = "", **kwargs):
    """Construct a record, mapping its own validation errors onto the path."""
    try:
        return cls(**kwargs)
    except ParameterError as e:
        raise ConfigError(_join(path, prefix + e.field), e.message) from None
    except TypeError:
        raise ConfigError(path, "a required value is null") from None
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _flat(cls, data, path: str, convert: dict, required=()) -> dict:
    """Convert the keys of a flat section whose keys are the fields of ``cls``."""
    names = {f.name for f in fields(cls)}
    _mapping(data, path, names, required)
    return {
        key: convert.get(key, _number)(value, _join(path, key))
        for key, value in data.items()
        if value is not None
    }


def _parse_source(data, path: str) -> SourceParams:
    values = _flat(SourceParams, data, path, {}, required=("pair_probability", "detection_efficiency"))
    return _build(SourceParams, path, **values)


def _parse_detector(data, path: str) -> DetectorParams:
    return _build(DetectorParams, path, **_flat(DetectorParams, data, path, {}))


def _parse_channel(data, path: str) -> ChannelSpec:
    _mapping(data, path, {"name", "geometry", "atmospheric_db", "optics_db", "loss_db", "weather"},
             required=("name", "geometry"))
    geometry_path = _join(path, "geometry")
    geometry = _build(
        ChannelGeometry, geometry_path,
        **_flat(ChannelGeometry, data["geometry"], geometry_path, {},
                required=("distance", "divergence", "receiver_aperture")),
    )
    kwargs = {"name": _string(data["name"], _join(path, "name")), "geometry": geometry}
    for key in ("atmospheric_db", "optics_db", "loss_db"):
        if data.get(key) is not None:
            kwargs[key] = _number(data[key], _join(path, key))
            if kwargs[key] < 0:
                raise ConfigError(_join(path, key), "loss must be non-negative")
    weather = []
    for i, entry in enumerate(data.get("weather", [])):
        entry_path = f"{path}.weather[{i}]"
        values = _flat(WeatherVariant, entry, entry_path, {"name": _string},
                       required=("name", "far_field_spot", "atmospheric_db"))
        if values["far_field_spot"] <= 0:
            raise ConfigError(_join(entry_path, "far_field_spot"), "must be positive")
        if values["atmospheric_db"] < 0:
            raise ConfigError(_join(entry_path, "atmospheric_db"), "loss must be non-negative")
        weather.append(WeatherVariant(**values))
    return ChannelSpec(weather=tuple(weather), **kwargs)


def _gains(value, path):
    return _numbers(value, path, 3)


def _probe(value, path):
    return _numbers(value, path, 2)


def _parse_apt(data, path: str) -> AptSpec:
    _mapping(data, path, {"stages", "disturbance"}, required=("stages",))
    stages_path = _join(path, "stages")
    if not isinstance(data["stages"], list) or not 1 <= len(data["stages"]) <= 3:
        raise ConfigError(stages_path, "expected a list of one to three stages")
    stages = []
    for i, entry in enumerate(data["stages"]):
        entry_path = f"{stages_path}[{i}]"
        values = _flat(
            LoopStage, entry, entry_path,
            {"name": _string, "pid_gains": _gains, "enabled": _boolean},
            required=("name", "sensor_rate", "target_closed_loop_bandwidth"),
        )
        stages.append(_build(LoopStage, entry_path, **values))
    rates = [s.sensor_rate for s in stages]
    if rates != sorted(rates):
        raise ConfigError(stages_path, "stages must be ordered from coarse to fine")
    disturbance_path = _join(path, "disturbance")
    values = _flat(DisturbanceSpec, data.get("disturbance", {}), disturbance_path, {"sinusoid_probe": _probe})
    return AptSpec(stages=tuple(stages), disturbance=_build(DisturbanceSpec, disturbance_path, **values))


def _labels(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of state labels")
    labels = []
    for i, label in enumerate(value):
        label = label.replace("−", "-") if isinstance(label, str) else label
        if label not in STATE_LABELS:
            raise ConfigError(f"{path}[{i}]", f"unknown state {label!r}; use one of {', '.join(STATE_LABELS)}")
        labels.append(label)
    return tuple(labels)


def _shards(value, path):
    shards = _integer(value, path)
    if shards < 1:
        raise ConfigError(path, "must be at least 1")
    return shards


def _parse_teleport(data, path: str) -> TeleportSettings:
    values = _flat(TeleportSettings, data, path, {
        "states": _labels, "multi_pair_noise": _boolean, "receiver": _string, "shards": _shards,
    })
    for key in ("window", "collinear_twofold", "local_fourfold_rate"):
        if key in values and not values[key] > 0:
            raise ConfigError(_join(path, key), "must be positive")
    if not 0.0 <= values.get("interference_visibility", 0.6) <= 1.0:
        raise ConfigError(_join(path, "interference_visibility"), "must lie in [0, 1]")
    if not 0.0 < values.get("bsm_identification_fraction", 0.5) <= 1.0:
        raise ConfigError(_join(path, "bsm_identification_fraction"), "must lie in (0, 1]")
    return TeleportSettings(**values)


def _receivers(value, path):
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(path, "expected two station names")
    return tuple(_string(v, f"{path}[{i}]") for i, v in enumerate(value))


def _parse_locality(data, path: str) -> LocalitySettings:
    values = _flat(LocalitySettings, data, path, {}, required=("receiver_separation", "path_difference"))
    for key, value in values.items():
        if value < 0:
            raise ConfigError(_join(path, key), "must be non-negative")
    return LocalitySettings(**values)


def _parse_chsh(data, path: str) -> ChshSettings:
    values = _flat(ChshSettings, data, path, {
        "receivers": _receivers, "locality": _parse_locality, "shards": _shards,
    })
    for key in ("effective_visibility_hv", "effective_visibility_pm"):
        if key in values and not 0.0 <= values[key] <= 1.0:
            raise ConfigError(_join(path, key), "must lie in [0, 1]")
    for key in ("window", "qrng_interval"):
        if key in values and not values[key] > 0:
            raise ConfigError(_join(path, key), "must be positive")
    return ChshSettings(**values)


def _range(value, path):
    low, high = _numbers(value, path, 2)
    if not 0 <= low < high:
        raise ConfigError(path, "expected [low, high] with 0 <= low < high")
    return low, high


def _sources(value, path):
    if not isinstance(value, dict) or not value:
        raise ConfigError(path, "expected an object of named sources")
    return {name: _parse_source(entry, _join(path, name)) for name, entry in value.items()}


def _resolution(value, path):
    resolution = _integer(value, path)
    if resolution < 2:
        raise ConfigError(path, "must be at least 2")
    return resolution


def _parse_surface(data, path: str) -> SurfaceSettings:
    values = _flat(SurfaceSettings, data, path, {
        "sources": _sources, "loss_range": _range, "dark_range": _range, "resolution": _resolution,
    }, required=("sources",))
    if "window" in values and not values["window"] > 0:
        raise ConfigError(_join(path, "window"), "must be positive")
    if not 0.5 <= values.get("intrinsic_fidelity", 1.0) <= 1.0:
        raise ConfigError(_join(path, "intrinsic_fidelity"), "must lie in [0.5, 1]")
    return SurfaceSettings(**values)


def _frequencies(value, path):
    frequencies = _numbers(value, path)
    if not frequencies or min(frequencies) <= 0:
        raise ConfigError(path, "expected positive probe frequencies")
    return frequencies


def _parse_apt_sweep(data, path: str) -> AptSweepSettings:
    values = _flat(AptSweepSettings, data, path, {
        "stage": _string, "probe_frequencies": _frequencies, "fixed_site": _boolean,
        "measure_all_stages": _boolean,
    })
    for key in ("probe_amplitude", "probe_duration", "dt", "tracking_duration"):
        if key in values and not values[key] > 0:
            raise ConfigError(_join(path, key), "must be positive")
    return AptSweepSettings(**values)


def _parse_sync(data, path: str) -> SyncSettings:
    shape_keys = {f"pulse_{f.name}": f.name for f in fields(SyncPulseShape)}
    chain_keys = {f.name for f in fields(SyncChain)} - {"shape"}
    _mapping(data, path, {"pulses", "receiver"} | chain_keys | set(shape_keys))
    shape = {shape_keys[k]: _number(v, _join(path, k)) for k, v in data.items() if k in shape_keys}
    chain = {k: _number(v, _join(path, k)) for k, v in data.items() if k in chain_keys}
    kwargs = {}
    if "pulses" in data:
        kwargs["pulses"] = _integer(data["pulses"], _join(path, "pulses"))
        if kwargs["pulses"] < 100:
            raise ConfigError(_join(path, "pulses"), "need at least 100 pulses")
    if "receiver" in data:
        kwargs["receiver"] = _string(data["receiver"], _join(path, "receiver"))
    pulse_shape = _build(SyncPulseShape, path, prefix="pulse_", **shape)
    return SyncSettings(chain=_build(SyncChain, path, shape=pulse_shape, **chain), **kwargs)


def _parse_budget(data, path: str) -> BudgetSettings:
    return BudgetSettings(**_flat(BudgetSettings, data, path, {"weather_variants": _boolean}))


_SECTION_ATTRS = {
    "teleport": "teleport",
    "chsh": "chsh",
    "surface": "surface",
    "apt-sweep": "apt_sweep",
    "sync": "sync",
    "budget": "budget",
}

_SECTION_PARSERS = {
    "teleport": _parse_teleport,
    "chsh": _parse_chsh,
    "surface": _parse_surface,
    "apt-sweep": _parse_apt_sweep,
    "sync": _parse_sync,
    "budget": _parse_budget,
}

_TOP_LEVEL = {
    "name", "seed", "duration", "time_scale", "protocol", "source", "channels", "detectors", "apt",
} | set(_SECTION_ATTRS)


def _require_sections(config: ScenarioConfig) -> None:
    protocol = config.protocol
    if protocol in ("teleport", "chsh") and config.source is None:
        raise ConfigError("source", f"required by protocol {protocol}")
    if protocol in ("teleport", "budget") and not config.channels:
        raise ConfigError("channels", f"protocol {protocol} needs at least one channel")
    if protocol == "teleport":
        receiver = (config.teleport or TeleportSettings()).receiver
        if receiver not in config.detectors:
            raise ConfigError(f"detectors.{receiver}", "required by protocol teleport")
    if protocol == "chsh":
        if len(config.channels) != 2:
            raise ConfigError("channels", "protocol chsh needs exactly two channels")
        for station in (config.chsh or ChshSettings()).receivers:
            if station not in config.detectors:
                raise ConfigError(f"detectors.{station}", "required by protocol chsh")
    if protocol == "surface" and config.surface is None:
        raise ConfigError("surface", "required by protocol surface")
    if protocol == "apt-sweep" and config.apt is None:
        raise ConfigError("apt", "required by protocol apt-sweep")
    if protocol == "apt-sweep" and config.apt_sweep and config.apt_sweep.stage is not None:
        names = [stage.name for stage in config.apt.stages]
        if config.apt_sweep.stage not in names:
            raise ConfigError("apt-sweep.stage", f"no stage named {config.apt_sweep.stage!r}")
    if protocol == "sync":
        receiver = (config.sync or SyncSettings()).receiver
        if receiver not in config.detectors:
            raise ConfigError(f"detectors.{receiver}", "required by protocol sync")


def from_dict(data: dict) -> ScenarioConfig:
    _mapping(data, "", _TOP_LEVEL, required=("name", "seed", "duration", "protocol"))
    protocol = data["protocol"]
    if protocol not in PROTOCOLS:
        raise ConfigError("protocol", f"unknown protocol {protocol!r}; use one of {', '.join(PROTOCOLS)}")
    seed = _integer(data["seed"], "seed")
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    kwargs = {
        "name": _string(data["name"], "name"),
        "seed": seed,
        "duration": _positive(data["duration"], "duration"),
        "protocol": protocol,
    }
    if "time_scale" in data:
        kwargs["time_scale"] = _positive(data["time_scale"], "time_scale")
    if "source" in data:
        kwargs["source"] = _parse_source(data["source"], "source")
    if "channels" in data:
        if not isinstance(data["channels"], list):
            raise ConfigError("channels", "expected a list of channels")
        kwargs["channels"] = tuple(_parse_channel(c, f"channels[{i}]") for i, c in enumerate(data["channels"]))
    if "detectors" in data:
        detectors = _mapping(data["detectors"], "detectors", set(data["detectors"]))
        kwargs["detectors"] = {k: _parse_detector(v, _join("detectors", k)) for k, v in detectors.items()}
    if "apt" in data:
        kwargs["apt"] = _parse_apt(data["apt"], "apt")
    for key, attr in _SECTION_ATTRS.items():
        if key in data:
            kwargs[attr] = _SECTION_PARSERS[key](data[key], key)
    config = ScenarioConfig(**kwargs)
    _require_sections(config)
    return config


def load_json(path: Path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such scenario file: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from None


def parse_config(path, overrides: dict | None = None) -> ScenarioConfig:
    """Load a scenario from a file path or a shipped preset name."""
    candidate = Path(path)
    data = load_json(candidate) if candidate.exists() else get_preset(str(path))
    if overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    config = from_dict(data)
    logger.debug("parsed scenario %s (protocol %s, seed %i)", config.name, config.protocol, config.seed)
    return config
