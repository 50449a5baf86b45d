import json
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigError


@dataclass(frozen=True, kw_only=True)
class Preset:
    name: str
    filename: str
    description: str


_presets = {
    # ground links
    Preset(
        name="qinghai-97km",
        filename="qinghai-97km.json",
        description="One-link teleportation over 97 km of free space, 44 dB measured loss",
    ),
    Preset(
        name="haixin-two-link",
        filename="haixin-two-link.json",
        description="Entanglement distribution to two receivers 51.2 km and 52.2 km away",
    ),

    # satellite extrapolations with assumed losses
    Preset(
        name="satellite-uplink",
        filename="satellite-uplink.json",
        description="Ground-to-satellite teleportation through a 45 dB uplink",
    ),
    Preset(
        name="satellite-two-downlink",
        filename="satellite-two-downlink.json",
        description="Entanglement distribution from a satellite to two ground stations, 75 dB",
    ),

    Preset(
        name="fidelity-surfaces",
        filename="fidelity-surfaces.json",
        description="Analytic fidelity versus loss and dark rate for two sources",
    ),
}


def list_presets() -> list[Preset]:
    return sorted(_presets, key=lambda preset: preset.name)


def get_preset(name: str) -> dict:
    """
    Get the raw scenario of a shipped preset by name, with or without ``.json``.
    """
    key = name.removesuffix(".json")
    for preset in _presets:
        if preset.name == key:
            text = resources.files(__package__).joinpath("scenarios", preset.filename).read_text()
            return json.loads(text)
    raise ConfigError("<file>", f"no such scenario file or preset: {name}")
