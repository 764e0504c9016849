"""Scenario configuration: flat ``key = value`` files with dotted keys.

Lines are ``section.key = value``; ``#`` starts a comment.  Unknown keys,
duplicate keys and malformed values are errors that name the offending
line.  Physical quantities carry their unit in the key name.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

from .core import CrystalParams, PumpParams, INFINITE
from .errors import ConfigurationError, DomainError
from .pump import DiffuserSpec
from .simulator import CameraSpec, ImagingMode


class ScenarioMode(enum.Enum):
    MOMENTUM = "momentum"
    POSITION = "position"
    STATIC_SPECKLE = "static_speckle"


class PumpModel(enum.Enum):
    GAUSSIAN_SCHELL = "gaussian_schell"
    DIFFUSER = "diffuser"


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _length_or_inf(text: str) -> float:
    if text.lower() in ("inf", "infinite", "+inf"):
        return INFINITE
    return float(text)


def _tristate(text: str):
    return None if text.lower() == "auto" else _bool(text)


# key -> (parser, default); a default of None means "derived"
SCHEMA = {
    "scenario.name": (str, "scenario"),
    "scenario.mode": (str, "momentum"),
    "scenario.frames": (int, 20000),
    "scenario.seed": (int, 0),
    "scenario.fixed_counts": (_bool, False),
    "crystal.length_mm": (float, 0.9),
    "crystal.pump_wavelength_nm": (float, 405.0),
    "crystal.alpha": (float, 0.455),
    "pump.waist_um": (float, 89.0),
    "pump.lc_um": (_length_or_inf, INFINITE),
    "pump.model": (str, "gaussian_schell"),
    "diffuser.phase_std_rad": (float, 2 * math.pi),
    "diffuser.layers": (int, 1),
    "diffuser.screen_correlation_um": (float, None),
    "diffuser.realizations": (int, 200),
    "diffuser.grid": (int, 512),
    "diffuser.pad": (int, 1024),
    "model.sigma_r_um": (float, None),
    "model.sigma_k_rad_per_mm": (float, None),
    "camera.width": (int, 75),
    "camera.height": (int, 75),
    "camera.pixel_um": (float, 16.0),
    "camera.wavelength_nm": (float, 810.0),
    "camera.focal_length_mm": (float, 40.0),
    "camera.magnification": (float, 4.0),
    "camera.quantum_efficiency": (float, 0.8),
    "camera.em_gain_mean": (float, 300.0),
    "camera.readout_noise_mean": (float, 171.0),
    "camera.readout_noise_std": (float, 20.0),
    "camera.pairs_per_frame_mean": (float, 50.0),
    "analysis.mask_center": (_bool, True),
    "analysis.include_diagonal": (_bool, False),
    "analysis.pixel_correction": (_tristate, None),
    "analysis.rounds": (int, 3),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Split a config into {key: (raw value, line number)} without interpreting values."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        if key not in SCHEMA:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} (first on line {entries[key][1]})")
        if not value:
            raise ConfigurationError(f"{source}:{lineno}: empty value for {key!r}")
        entries[key] = (value, lineno)
    return entries


def resolve(entries: dict[str, tuple[str, int]], source: str = "<config>",
            overrides: dict[str, str] | None = None) -> dict[str, object]:
    """Typed values for every schema key, defaults filled in."""
    merged = dict(entries)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigurationError(f"override: unknown key {key!r}")
        merged[key] = (str(value), 0)
    out = {}
    for key, (parser, default) in SCHEMA.items():
        if key not in merged:
            out[key] = default
            continue
        raw, lineno = merged[key]
        where = f"{source}:{lineno}" if lineno else "override"
        try:
            out[key] = parser(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: ScenarioMode
    crystal: CrystalParams
    pump: PumpParams
    camera: CameraSpec
    frames: int
    seed: int = 0
    pump_model: PumpModel = PumpModel.GAUSSIAN_SCHELL
    diffuser: DiffuserSpec | None = None
    realizations: int = 200
    pump_grid: int = 512
    pump_pad: int = 1024
    sigma_r: float | None = None
    sigma_k: float | None = None
    fixed_counts: bool = False
    mask_center: bool = True
    include_diagonal: bool = False
    pixel_correction: bool | None = None
    rounds: int = 3
    values: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def imaging(self) -> ImagingMode:
        return ImagingMode.POSITION if self.mode is ScenarioMode.POSITION else ImagingMode.MOMENTUM

    @property
    def uses_pump_field(self) -> bool:
        """True when pairs are drawn from a synthesized pump far field."""
        return self.mode is ScenarioMode.STATIC_SPECKLE or (
            self.mode is ScenarioMode.MOMENTUM and self.pump_model is PumpModel.DIFFUSER)

    @property
    def resolved_pixel_correction(self) -> bool:
        # pair momentum sums pinned to far-field samples are already pixel-discrete
        if self.pixel_correction is not None:
            return self.pixel_correction
        return self.mode is not ScenarioMode.STATIC_SPECKLE

    def with_values(self, overrides: dict) -> "Scenario":
        """Copy with some typed schema values replaced."""
        unknown = set(overrides) - set(SCHEMA)
        if unknown:
            raise ConfigurationError(f"unknown keys {sorted(unknown)}")
        return scenario_from_values({**self.values, **overrides})


def scenario_from_values(v: dict[str, object]) -> Scenario:
    try:
        mode = ScenarioMode(str(v["scenario.mode"]).lower())
    except ValueError:
        raise ConfigurationError(f"scenario.mode must be one of {[m.value for m in ScenarioMode]}") from None
    try:
        model = PumpModel(str(v["pump.model"]).lower())
    except ValueError:
        raise ConfigurationError(f"pump.model must be one of {[m.value for m in PumpModel]}") from None
    if v["scenario.frames"] < 1:
        raise ConfigurationError("scenario.frames must be >= 1")
    if mode is ScenarioMode.STATIC_SPECKLE:
        model = PumpModel.DIFFUSER
    try:
        crystal = CrystalParams(v["crystal.length_mm"] * 1e-3, v["crystal.pump_wavelength_nm"] * 1e-9,
                                v["crystal.alpha"])
        pump = PumpParams(v["pump.waist_um"] * 1e-6, v["pump.lc_um"] * 1e-6)
    except DomainError as exc:
        raise ConfigurationError(str(exc)) from None

    diffuser = None
    if model is PumpModel.DIFFUSER:
        layers = v["diffuser.layers"]
        std = v["diffuser.phase_std_rad"]
        corr = v["diffuser.screen_correlation_um"]
        if corr is not None:
            diffuser = DiffuserSpec(corr * 1e-6, std, layers)
        elif not pump.coherent:
            diffuser = DiffuserSpec.for_coherence_length(pump.coherence_length_lc, std, layers)
        elif mode is ScenarioMode.STATIC_SPECKLE:
            raise ConfigurationError("static speckle needs pump.lc_um or diffuser.screen_correlation_um")

    cam_kw = dict(quantum_efficiency=v["camera.quantum_efficiency"], em_gain_mean=v["camera.em_gain_mean"],
                  readout_noise_mean=v["camera.readout_noise_mean"],
                  readout_noise_std=v["camera.readout_noise_std"],
                  pairs_per_frame_mean=v["camera.pairs_per_frame_mean"])
    if mode is ScenarioMode.POSITION:
        camera = CameraSpec.position(v["camera.width"], v["camera.height"], v["camera.pixel_um"] * 1e-6,
                                     v["camera.magnification"], **cam_kw)
    else:
        camera = CameraSpec.momentum(v["camera.width"], v["camera.height"], v["camera.pixel_um"] * 1e-6,
                                     v["camera.wavelength_nm"] * 1e-9, v["camera.focal_length_mm"] * 1e-3,
                                     **cam_kw)
    sr = v["model.sigma_r_um"]
    sk = v["model.sigma_k_rad_per_mm"]
    if (sr is not None and sr <= 0) or (sk is not None and sk <= 0):
        raise ConfigurationError("model widths must be positive")
    if sk is not None and (mode is not ScenarioMode.MOMENTUM or model is not PumpModel.GAUSSIAN_SCHELL):
        raise ConfigurationError("model.sigma_k_rad_per_mm applies to momentum runs with the gaussian_schell pump")
    if v["diffuser.realizations"] < 1 or v["diffuser.grid"] < 8 or v["diffuser.pad"] < v["diffuser.grid"]:
        raise ConfigurationError("diffuser grid settings out of range (realizations >= 1, grid >= 8, pad >= grid)")
    return Scenario(
        name=str(v["scenario.name"]), mode=mode, crystal=crystal, pump=pump, camera=camera,
        frames=v["scenario.frames"], seed=v["scenario.seed"], pump_model=model, diffuser=diffuser,
        realizations=v["diffuser.realizations"], pump_grid=v["diffuser.grid"], pump_pad=v["diffuser.pad"],
        sigma_r=None if sr is None else sr * 1e-6, sigma_k=None if sk is None else sk * 1e3,
        fixed_counts=v["scenario.fixed_counts"], mask_center=v["analysis.mask_center"],
        include_diagonal=v["analysis.include_diagonal"], pixel_correction=v["analysis.pixel_correction"],
        rounds=v["analysis.rounds"], values=dict(v),
    )


def load_scenario(path, overrides: dict[str, str] | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigurationError(f"{path}: not UTF-8 text") from None
    return scenario_from_values(resolve(parse_config_text(text, str(path)), str(path), overrides))


def scenario_from_text(text: str, overrides: dict[str, str] | None = None, source="<config>") -> Scenario:
    return scenario_from_values(resolve(parse_config_text(text, source), source, overrides))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return str(value)


def dump_values(values: dict[str, object]) -> str:
    """Render resolved values back to config text (derived keys left out)."""
    return "".join(f"{k} = {format_value(val)}\n" for k, val in values.items() if val is not None)


def bundled_path(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    p = Path(__file__).with_name("scenarios") / name
    if not p.exists():
        raise ConfigurationError(f"no bundled scenario named {name!r}")
    return p

