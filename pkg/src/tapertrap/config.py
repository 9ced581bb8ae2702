"""Flat ``section.key_unit = value`` experiment configuration.

Every physical key carries a unit suffix; values are converted to SI on
read and written back with the SI suffix, so ``dumps(loads(text))`` is a
fixed point. See README for the grammar.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields

UNITS = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "power": {"W": 1.0, "mW": 1e-3},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
    "time": {"s": 1.0, "ms": 1e-3},
    "frequency": {"Hz": 1.0},
    "temperature": {"K": 1.0},
    "viscosity": {"Pa_s": 1.0},
    "density": {"kg_m3": 1.0},
    "drag": {"kg_per_s": 1.0},
    "stiffness": {"N_per_m": 1.0, "pN_per_mm": 1e-9},
}
SI = {
    "length": "m", "power": "W", "angle": "rad", "time": "s", "frequency": "Hz",
    "temperature": "K", "viscosity": "Pa_s", "density": "kg_m3", "drag": "kg_per_s",
    "stiffness": "N_per_m",
}


class ConfigError(ValueError):
    """Invalid configuration text or values."""


def _f(kind=None, default=None, listy=False, positive=True, optional=False, kind_name="float"):
    return field(default_factory=lambda: default, metadata={
        "kind": kind, "listy": listy, "positive": positive, "optional": optional, "type": kind_name,
    })


@dataclass
class ExperimentConfig:
    """All parameters of a run, in SI units.

    Section and key names mirror the text format, e.g. ``geometry_waist_diameter``
    is ``geometry.waist_diameter_m``.
    """

    geometry_waist_diameter: float = _f("length", 400e-9)
    geometry_taper_length: float = _f("length", 1e-3)
    geometry_waist_half_length: float = _f("length", 0.0, positive=False)

    fiber_core_index: float = _f(None, 1.45)

    modes_short_wavelength: float = _f("length", 640e-9)
    modes_long_wavelength: float = _f("length", 785e-9)
    modes_long_power: float = _f("power", 1e-3, positive=False)
    modes_short_direction: int = _f(None, 1, kind_name="int", positive=False)
    modes_short_polarization: float = _f("angle", 0.0, positive=False)
    modes_long_polarization: float = _f("angle", 0.0, positive=False)
    modes_probe_offset: float = _f("length", 0.0, positive=False)

    particle_radius: float = _f("length", 75e-9)
    particle_material: str = _f(None, "gold", kind_name="str")
    particle_density: float = _f("density", 19300.0)
    particle_force_scale: float = _f(None, 1.0)
    particle_target_mean_stiffness: float = _f("stiffness", None, optional=True)

    medium_refractive_index: float = _f(None, 1.33)
    medium_viscosity: float = _f("viscosity", 1e-3)
    medium_temperature: float = _f("temperature", 293.0)

    sweep_ratios: list = _f(None, [0.1, 0.15, 0.2, 0.25], listy=True)
    sweep_diameter_min: float = _f("length", 400e-9)
    sweep_diameter_max: float = _f("length", 1000e-9)
    sweep_diameter_step: float = _f("length", 1e-9)

    dynamics_dt: float = _f("time", 1e-4)
    dynamics_duration: float = _f("time", 10.0)
    dynamics_seed: int = _f(None, 0, kind_name="int", positive=False)
    dynamics_gamma: float = _f("drag", None, optional=True)
    dynamics_injection_z: list = _f("length", [0.0], listy=True, positive=False)
    dynamics_injection_reference: str = _f(None, "absolute", kind_name="str")
    dynamics_injection_t: list = _f("time", [0.0], listy=True, positive=False)
    dynamics_z_min: float = _f("length", -0.2e-3, positive=False)
    dynamics_z_max: float = _f("length", 1.5e-3)
    dynamics_pixel_pitch: float = _f("length", 5e-6)
    dynamics_frame_rate: float = _f("frequency", 30.0)
    dynamics_noise_sigma: float = _f(None, 0.05, positive=False)
    dynamics_spot_intensity: float = _f(None, 1.0)

    transport_wavelength: float = _f("length", None, optional=True)
    transport_power: float = _f("power", 9e-3)
    transport_injection_z: list = _f("length", [-0.4e-3], listy=True, positive=False)
    transport_window_min: float = _f("length", -0.3e-3, positive=False)
    transport_window_max: float = _f("length", 0.3e-3, positive=False)

    analysis_delta: float = _f("length", 23e-6)
    analysis_threshold_rel: float = _f(None, 0.3)
    analysis_min_height: float = _f(None, 0.3, positive=False)
    analysis_max_jump: float = _f("length", 50e-6)
    analysis_min_length: int = _f(None, 10, kind_name="int")
    analysis_min_dwell: float = _f("time", 2.0)
    analysis_gamma: float = _f("drag", None, optional=True)
    analysis_polarization_angle: float = _f("angle", math.pi / 2, positive=False)

    @property
    def n_particles(self) -> int:
        return len(self.dynamics_injection_z)

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            md = f.metadata
            if v is None:
                if md["optional"]:
                    continue
                raise ConfigError(f"{_key(f.name)}: value required")
            vals = v if md["listy"] else [v]
            if md["listy"] and not vals:
                raise ConfigError(f"{_key(f.name)}: list must not be empty")
            if md["type"] == "str":
                continue
            for x in vals:
                if not math.isfinite(x):
                    raise ConfigError(f"{_key(f.name)}: non-finite value")
                if md["positive"] and x <= 0:
                    raise ConfigError(f"{_key(f.name)}: must be positive, got {x!r}")
        if len(self.dynamics_injection_t) != len(self.dynamics_injection_z):
            raise ConfigError("dynamics.injection_t: length differs from dynamics.injection_z")
        if self.dynamics_injection_reference not in ("absolute", "trap"):
            raise ConfigError("dynamics.injection_reference: must be 'absolute' or 'trap'")
        if self.modes_long_power < 0:
            raise ConfigError("modes.long_power: must be non-negative")
        if self.modes_short_direction not in (1, -1):
            raise ConfigError("modes.short_direction: must be +1 or -1")
        if self.modes_short_wavelength >= self.modes_long_wavelength:
            raise ConfigError("modes.short_wavelength: must be below modes.long_wavelength")
        if self.sweep_diameter_min >= self.sweep_diameter_max:
            raise ConfigError("sweep.diameter_min: must be below sweep.diameter_max")
        if self.dynamics_z_min >= self.dynamics_z_max:
            raise ConfigError("dynamics.z_min: must be below dynamics.z_max")
        return self

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


def _key(name):
    section, rest = name.split("_", 1)
    return f"{section}.{rest}"


_FIELDS = {_key(f.name): f for f in fields(ExperimentConfig)}


def _split_key(key):
    """Map ``section.name_unit`` to (field, unit scale)."""
    if key in _FIELDS and _FIELDS[key].metadata["kind"] is None:
        return _FIELDS[key], 1.0
    for base, f in _FIELDS.items():
        kind = f.metadata["kind"]
        if kind is None or not key.startswith(base + "_"):
            continue
        unit = key[len(base) + 1:]
        if unit in UNITS[kind]:
            return f, UNITS[kind][unit]
    return None, None


def _parse_scalar(text, typ):
    if typ == "str":
        return text
    try:
        return int(text) if typ == "int" else float(text)
    except ValueError:
        raise ValueError(f"cannot read {text!r} as {typ}") from None


def loads(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        f, scale = _split_key(key)
        if f is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if f.name in seen:
            raise ConfigError(f"line {lineno}: {key!r} repeats line {seen[f.name]}")
        seen[f.name] = lineno
        md = f.metadata
        try:
            if value.lower() == "none" and md["optional"]:
                parsed = None
            elif md["listy"]:
                items = [s.strip() for s in value.split(",") if s.strip()]
                parsed = [_parse_scalar(s, md["type"]) * scale for s in items]
            else:
                parsed = _parse_scalar(value, md["type"])
                if md["type"] == "float":
                    parsed *= scale
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        setattr(cfg, f.name, parsed)
    try:
        return cfg.validate()
    except ConfigError as exc:
        name = str(exc).split(":", 1)[0]
        where = next((ln for fname, ln in seen.items() if _key(fname) == name), None)
        raise ConfigError(f"line {where}: {exc}" if where else str(exc)) from None


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    section = None
    for f in fields(cfg):
        key = _key(f.name)
        sec = key.split(".")[0]
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        kind = f.metadata["kind"]
        if kind is not None:
            key = f"{key}_{SI[kind]}"
        v = getattr(cfg, f.name)
        if v is None:
            text = "none"
        elif f.metadata["listy"]:
            text = ", ".join(repr(float(x)) for x in v)
        elif f.metadata["type"] == "float":
            text = repr(float(v))
        else:
            text = str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
