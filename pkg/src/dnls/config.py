"""Run configuration: INI-style sections of key = value pairs.

Files are parsed strictly: unknown sections or keys, duplicate keys and
malformed lines are rejected with the offending location. A parsed RunConfig
serializes back to text losslessly (all keys written with their resolved
values), and the sha256 of that canonical text is the run's config hash.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DnlsError, DomainError
from .geometry import (
    DEFAULT_METRIC_AMPLITUDE,
    DampingField,
    MetricField,
    PRESET_NAMES,
    build_preset,
    cutoff_field,
)
from .grid import Field, GridSpec

__all__ = ["RunConfig", "parse_config", "parse_config_text"]


@dataclass
class GridSection:
    dim: int = 2
    n: int = 128
    box_half_length: float = 12.0


@dataclass
class GeometrySection:
    preset: str = "conformal_bump"
    metric_amplitude: float = np.nan  # nan = preset default
    metric_radius: float = 2.0
    damping_amplitude: float = 1.0
    damping_shape: str = "ball"
    damping_radius: float = np.nan    # nan = metric_radius + 2
    damping_inner_radius: float = 0.0
    damping_outer_radius: float = 0.0
    damping_center_offset: float = np.nan  # nan = preset default
    g_tol: float = 1e-12
    a_min: float = 1e-8


@dataclass
class InitialDataSection:
    kind: str = "gaussian"        # gaussian | smooth_random
    amplitude: float = 0.5
    width: float = 1.0
    center_offset: float = 0.0
    momentum: float = 0.0
    k_scale: float = 2.0


@dataclass
class SolverSection:
    scheme: str = "strang"
    dt: float = 0.01
    duration: float = 1.0
    dealias: bool = True
    nonlinearity: bool = True
    inner_perturbation_steps: int = 1
    boundary_mass_warn: float = 1e-6


@dataclass
class ObservablesSection:
    record_every: int = 1
    interaction_every: int = 10
    local_radius: float = 2.0
    cutoff_flat_radius: float = np.nan     # nan = damping support + 0.5
    cutoff_support_radius: float = np.nan  # nan = midway to the box edge
    cutoff_exponents: tuple = (0.0, 0.5)


@dataclass
class ScatteringSection:
    s_values: tuple = (0.0, 0.25, 0.5, 0.75, 0.9)
    snapshot_every: int = 0
    tol_mono: float = 0.05


@dataclass
class RaysSection:
    count: int = 64
    sampling: str = "random"
    sample_radius: float = 3.0
    horizon: float = 100.0
    dt: float = 0.001
    escape_radius: float = np.nan  # nan = 1.5 * max support + 5


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/out"


_SECTION_TYPES = {
    "grid": GridSection,
    "geometry": GeometrySection,
    "initial_data": InitialDataSection,
    "solver": SolverSection,
    "observables": ObservablesSection,
    "scattering": ScatteringSection,
    "rays": RaysSection,
    "run": RunSection,
}


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    initial_data: InitialDataSection = field(default_factory=InitialDataSection)
    solver: SolverSection = field(default_factory=SolverSection)
    observables: ObservablesSection = field(default_factory=ObservablesSection)
    scattering: ScatteringSection = field(default_factory=ScatteringSection)
    rays: RaysSection = field(default_factory=RaysSection)
    run: RunSection = field(default_factory=RunSection)

    # -- resolved values -----------------------------------------------------

    def resolved_metric_amplitude(self) -> float:
        if np.isnan(self.geometry.metric_amplitude):
            return DEFAULT_METRIC_AMPLITUDE[self.geometry.preset]
        return self.geometry.metric_amplitude

    def resolved_damping_radius(self) -> float:
        if np.isnan(self.geometry.damping_radius):
            if self.geometry.preset == "uncontrolled_bump":
                return self.geometry.metric_radius
            return self.geometry.metric_radius + 2.0
        return self.geometry.damping_radius

    def resolved_damping_offset(self) -> float:
        if not np.isnan(self.geometry.damping_center_offset):
            return self.geometry.damping_center_offset
        if self.geometry.preset == "uncontrolled_bump":
            return self.geometry.metric_radius + self.resolved_damping_radius() + 1.0
        return 0.0

    def resolved_cutoff_radii(self) -> tuple[float, float]:
        L = self.grid.box_half_length
        damping_reach = self.resolved_damping_radius() + abs(
            self.resolved_damping_offset()
        )
        flat = self.observables.cutoff_flat_radius
        if np.isnan(flat):
            flat = damping_reach + 0.5
        support = self.observables.cutoff_support_radius
        if np.isnan(support):
            support = flat + 0.5 * (L - flat)
        return float(flat), float(support)

    def resolved_escape_radius(self, metric: MetricField,
                               damping: DampingField) -> float:
        if not np.isnan(self.rays.escape_radius):
            return self.rays.escape_radius
        return 1.5 * max(metric.support_radius, damping.support_radius) + 5.0

    # -- builders --------------------------------------------------------------

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid.dim, self.grid.n, self.grid.box_half_length)

    def build_geometry(self, spec: GridSpec | None = None):
        spec = spec or self.grid_spec()
        params = {
            "metric_amplitude": self.resolved_metric_amplitude(),
            "metric_radius": self.geometry.metric_radius,
            "damping_amplitude": self.geometry.damping_amplitude,
            "damping_shape": self.geometry.damping_shape,
            "damping_radius": self.resolved_damping_radius(),
            "damping_inner_radius": self.geometry.damping_inner_radius,
            "damping_outer_radius": self.geometry.damping_outer_radius,
            "damping_center_offset": self.resolved_damping_offset(),
        }
        return build_preset(self.geometry.preset, spec, params)

    def solver_config(self):
        from .solver import SolverConfig

        return SolverConfig(
            dt=self.solver.dt,
            duration=self.solver.duration,
            scheme=self.solver.scheme,
            dealias=self.solver.dealias,
            nonlinearity=self.solver.nonlinearity,
            inner_perturbation_steps=self.solver.inner_perturbation_steps,
            boundary_mass_warn=self.solver.boundary_mass_warn,
        )

    def initial_field(self, spec: GridSpec | None = None) -> Field:
        spec = spec or self.grid_spec()
        ic = self.initial_data
        if ic.kind == "gaussian":
            r2 = np.zeros(spec.shape)
            for j, x in enumerate(spec.coords):
                offset = ic.center_offset if j == 0 else 0.0
                r2 = r2 + (x - offset) ** 2
            values = ic.amplitude * np.exp(-r2 / (2.0 * ic.width**2))
            if ic.momentum != 0.0:
                values = values * np.exp(1j * ic.momentum * spec.coords[0])
            return Field(values.astype(np.complex128), spec)
        if ic.kind == "smooth_random":
            from .observables import smooth_random_field

            f = smooth_random_field(spec, seed=self.run.seed, k_scale=ic.k_scale)
            return Field(ic.amplitude * f.values, spec)
        raise ConfigError(f"[initial_data] unknown kind {ic.kind!r}")

    def cutoff(self, spec: GridSpec | None = None) -> np.ndarray:
        spec = spec or self.grid_spec()
        flat, support = self.resolved_cutoff_radii()
        return cutoff_field(spec, flat, support)

    # -- serialization ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for section_name in _SECTION_TYPES:
            section = getattr(self, section_name)
            lines.append(f"[{section_name}]")
            for f in dc_fields(section):
                value = getattr(section, f.name)
                lines.append(f"{f.name} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # -- validation --------------------------------------------------------------

    def validate(self) -> "RunConfig":
        g = self.grid
        try:
            spec = GridSpec(g.dim, g.n, g.box_half_length)
        except DomainError as exc:
            raise ConfigError(f"[grid] {exc}") from exc
        L = g.box_half_length
        geo = self.geometry
        if geo.preset not in PRESET_NAMES:
            raise ConfigError(
                f"[geometry] preset must be one of {PRESET_NAMES}, got {geo.preset!r}"
            )
        for label, radius in (
            ("metric_radius", geo.metric_radius),
            ("damping_radius", self.resolved_damping_radius()),
            ("local_radius", self.observables.local_radius),
        ):
            if not 0.0 < radius < L:
                raise ConfigError(
                    f"[geometry] {label} = {radius} must lie inside the box "
                    f"(0, {L}) so that balls fit in the box"
                )
        flat, support = self.resolved_cutoff_radii()
        if not 0.0 < flat < support < L:
            raise ConfigError(
                f"[observables] cutoff radii (flat={flat}, support={support}) must "
                f"satisfy 0 < flat < support < {L}"
            )
        try:
            metric, damping = self.build_geometry(spec)
        except DnlsError as exc:
            raise ConfigError(f"[geometry] {exc}") from exc
        try:
            solver_cfg = self.solver_config()
        except DomainError as exc:
            raise ConfigError(f"[solver] {exc}") from exc
        if solver_cfg.scheme == "rk4_mol":
            from .solver import cfl_suggestion

            bound = cfl_suggestion(
                spec, metric, "rk4_mol", solver_cfg.duration,
                solver_cfg.inner_perturbation_steps, solver_cfg.dealias,
            )
            if solver_cfg.dt > bound * (1.0 + 1e-12):
                raise ConfigError(
                    f"[solver] dt = {solver_cfg.dt} exceeds the rk4_mol stability "
                    f"suggestion {bound:.6g}"
                )
        for s in self.scattering.s_values:
            if s < 0:
                raise ConfigError(f"[scattering] s_values must be >= 0, got {s}")
        for s in self.observables.cutoff_exponents:
            if not 0.0 <= s < 1.0:
                raise ConfigError(
                    f"[observables] cutoff_exponents must lie in [0, 1), got {s}"
                )
        r = self.rays
        if r.count < 1 or r.dt <= 0 or r.horizon <= 0 or r.sample_radius <= 0:
            raise ConfigError("[rays] count, dt, horizon, sample_radius must be positive")
        if r.sampling not in ("random", "lattice"):
            raise ConfigError(f"[rays] sampling must be random or lattice, got {r.sampling!r}")
        return self


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _parse_value(text: str, target_type, location: str):
    text = text.strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if target_type is int:
            return int(text)
        if target_type is float:
            if text.lower() in ("auto", "nan"):
                return float("nan")
            return float(text)
        if target_type is tuple:
            if not text:
                return ()
            return tuple(float(part) for part in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"{location}: {exc}") from exc


def _find_line(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and "=" in stripped:
            candidate = stripped.split("=", 1)[0].strip()
            if candidate == key:
                return i
    return None


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    cfg = RunConfig()
    for section_name in parser.sections():
        if section_name not in _SECTION_TYPES:
            raise ConfigError(
                f"{source}: unknown section [{section_name}] "
                f"(line {_find_line(text, '[' + section_name) or '?'})"
            )
        section = getattr(cfg, section_name)
        known = {f.name: f.type for f in dc_fields(section)}
        type_map = {f.name: type(getattr(section, f.name)) for f in dc_fields(section)}
        for key, raw in parser.items(section_name):
            if key not in known:
                line = _find_line(text, key)
                raise ConfigError(
                    f"{source}: unknown key {key!r} in [{section_name}]"
                    + (f" (line {line})" if line else "")
                )
            value = _parse_value(raw, type_map[key], f"{source}: [{section_name}] {key}")
            setattr(section, key, value)
    return cfg.validate()


def parse_config(path: str | Path) -> RunConfig:
    """Parse and validate a configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))
