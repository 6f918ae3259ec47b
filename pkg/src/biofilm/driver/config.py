"""Simulation configuration: a flat ``key = value`` text format with dotted sections.

Physical parameters are bare keys (``Re_s``, ``Gamma1``, ``A`` ...); scheme options,
solver settings, initial condition and output live under dotted prefixes
(``ch.theta``, ``solver.pressure.rtol``, ``ic.phi_bulk``, ``output.every``).
Lines are ``key = value``; ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError
from ..flow import VISCOUS_MODES, FlowParams
from ..linsolve import SolverConfig
from ..mesh import GridSpec
from ..transport import ChParams, NutrientParams
from .initial import VARIANTS, InitialCondition

MODES = ("simulate", "scaling", "serialcheck")
SYSTEMS = ("ch", "nutrient", "momentum", "pressure")

# the scenario iterates many elliptic solves to a tight tolerance; 500 is too few
SCENARIO_MAX_IT = 20000


def _scenario_solver() -> SolverConfig:
    return SolverConfig(max_it=SCENARIO_MAX_IT)


@dataclass
class OutputConfig:
    directory: str = "output"
    # snapshot every N steps; 0 disables snapshots (the final step is always written)
    every: int = 0
    formats: tuple = ("vtk", "csv")


@dataclass
class ScalingConfig:
    ranks: tuple = (1, 2, 4)
    steps: int = 10
    grids: tuple = (256, 512)


@dataclass
class SimConfig:
    # spatial intervals per direction (nodes = intervals + 1)
    nx: int = 256
    ny: int = 256
    dt: float = 1.0
    steps: int = 20
    mode: str = "simulate"
    # Re_s, Re_n, Lambda, Gamma1, Gamma2, Ds, mu, Kc, A as in the detachment scenario;
    # the scheme options are the stable choices for that scenario
    ch: ChParams = field(default_factory=lambda: ChParams(
        stabilizer=2.5e6, advection="upwind", advection_theta=1.0))
    nutrient: NutrientParams = field(default_factory=lambda: NutrientParams(
        theta=1.0, solvent_floor=1e-3))
    flow: FlowParams = field(default_factory=lambda: FlowParams(
        viscous="split", theta=1.0, max_viscosity_ratio=100.0))
    solvers: dict = field(default_factory=lambda: {s: _scenario_solver() for s in SYSTEMS})
    ic: InitialCondition = field(default_factory=InitialCondition)
    output: OutputConfig = field(default_factory=OutputConfig)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    # component threshold as a fraction of ic.phi_bulk
    threshold_fraction: float = 0.5
    # keep ch.stabilizer at 2*Gamma2 unless it is set explicitly
    stabilizer_auto: bool = True

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_intervals(self.nx, self.ny)

    @property
    def threshold(self) -> float:
        return self.threshold_fraction * self.ic.phi_bulk

    def validate(self) -> "SimConfig":
        if not self.dt > 0:
            raise ConfigError(f"dt: must be positive, got {self.dt}")
        if self.steps < 1:
            raise ConfigError(f"steps: must be at least 1, got {self.steps}")
        if self.nx < 3 or self.ny < 3:
            raise ConfigError(f"grid.nx/grid.ny: need at least 3 intervals, got {self.nx}x{self.ny}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.ch.Gamma1 != self.flow.Gamma1:
            raise ConfigError("Gamma1: transport and flow copies disagree")
        if self.output.every < 0:
            raise ConfigError(f"output.every: must be non-negative, got {self.output.every}")
        bad = set(self.output.formats) - {"vtk", "csv"}
        if bad:
            raise ConfigError(f"output.formats: unknown format(s) {', '.join(sorted(bad))}")
        if self.scaling.steps < 1:
            raise ConfigError(f"scaling.steps: must be at least 1, got {self.scaling.steps}")
        if not self.scaling.ranks or min(self.scaling.ranks) < 1:
            raise ConfigError("scaling.ranks: need a non-empty list of positive rank counts")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ConfigError("diagnostics.threshold_fraction: must lie in (0, 1]")
        self.ic.validate()
        return self


# --- parsing ------------------------------------------------------------------

# bare physical keys -> (section, field); Gamma1 feeds both the transport and flow copies
_PHYSICAL = {
    "Re_s": [("flow", "Re_s")],
    "Re_n": [("flow", "Re_n")],
    "rho_n_ratio": [("flow", "rho_n_ratio")],
    "rho_s_ratio": [("flow", "rho_s_ratio")],
    "Gamma1": [("ch", "Gamma1"), ("flow", "Gamma1")],
    "Gamma2": [("ch", "Gamma2")],
    "Lambda": [("ch", "Lambda")],
    "mu": [("ch", "mu")],
    "Kc": [("ch", "Kc")],
    "epsilon": [("ch", "epsilon")],
    "Ds": [("nutrient", "Ds")],
    "A": [("nutrient", "A")],
}

_SCHEME = {
    "ch": ("stabilizer", "theta", "advection", "advection_theta"),
    "nutrient": ("theta", "solvent_floor"),
    "flow": ("include_R", "viscous", "theta", "max_viscosity_ratio", "lid_velocity", "bottom_velocity"),
}


class ParseError(ConfigError):
    def __init__(self, path, line: int, column: int, message: str):
        self.line, self.column = line, column
        super().__init__(f"{path}:{line}:{column}: {message}")


def _to_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _to_floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _to_pairs(text: str) -> tuple:
    pairs = []
    for chunk in text.split(";"):
        vals = _to_floats(chunk)
        if len(vals) != 2:
            raise ValueError(f"expected 'x y' pairs separated by ';', got {chunk.strip()!r}")
        pairs.append(vals)
    return tuple(pairs)


def _convert(template, text: str):
    """Parse ``text`` into the type of the default value ``template``."""
    if isinstance(template, bool):
        return _to_bool(text)
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, str):
        return text
    raise TypeError(type(template))


def parse_text(text: str, path: str = "<config>") -> dict:
    """Split config text into ``{key: (value, line, key_column, value_column)}`` (later keys win)."""
    items = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ParseError(path, lineno, col, "expected 'key = value'")
        key, value = body.split("=", 1)
        col = len(key) - len(key.lstrip()) + 1
        key = key.strip()
        if not key or any(ch.isspace() for ch in key):
            raise ParseError(path, lineno, col, f"malformed key {key!r}")
        value = value.strip()
        if not value:
            raise ParseError(path, lineno, body.index("=") + 2, f"missing value for {key!r}")
        rest = body.split("=", 1)[1]
        items[key] = (value, lineno, col, body.index("=") + 2 + len(rest) - len(rest.lstrip()))
    return items


class _Builder:
    """Accumulates keyword overrides per section before building the dataclasses."""

    def __init__(self):
        self.top = {}
        self.sections = {"ch": {}, "nutrient": {}, "flow": {}, "ic": {}, "output": {}, "scaling": {}}
        self.solver_all = {}
        self.solver = {s: {} for s in SYSTEMS}
        self.stabilizer_auto = None

    def set(self, key: str, value: str) -> None:
        parts = key.split(".")
        if key in ("dt", "steps", "mode"):
            self.top[key] = {"dt": float, "steps": int, "mode": str.lower}[key](value)
        elif key == "grid.n":
            self.top["nx"] = self.top["ny"] = int(value)
        elif key in ("grid.nx", "grid.ny"):
            self.top[parts[1]] = int(value)
        elif key in _PHYSICAL:
            for section, name in _PHYSICAL[key]:
                self.sections[section][name] = float(value)
        elif len(parts) == 2 and parts[0] in _SCHEME and parts[1] in _SCHEME[parts[0]]:
            self._scheme(parts[0], parts[1], value)
        elif len(parts) == 2 and parts[0] == "ic":
            self._ic(parts[1], value)
        elif len(parts) == 2 and parts[0] == "output":
            self._output(parts[1], value)
        elif len(parts) == 2 and parts[0] == "scaling":
            self._scaling(parts[1], value)
        elif key == "diagnostics.threshold_fraction":
            self.top["threshold_fraction"] = float(value)
        elif parts[0] == "solver" and len(parts) in (2, 3):
            self._solver(parts[1:], value)
        else:
            raise KeyError(key)

    def _scheme(self, section, name, value):
        if section == "ch" and name == "stabilizer":
            self.stabilizer_auto = value.lower() == "auto"
            if self.stabilizer_auto:
                return
        if name == "max_viscosity_ratio":
            self.sections[section][name] = None if value.lower() == "none" else float(value)
        elif name in ("lid_velocity", "bottom_velocity"):
            vals = _to_floats(value)
            if len(vals) != 2:
                raise ValueError(f"expected two numbers 'u v', got {value!r}")
            self.sections[section][name] = vals
        elif name == "include_R":
            self.sections[section][name] = _to_bool(value)
        elif name in ("advection", "viscous"):
            self.sections[section][name] = value.lower()
        else:
            self.sections[section][name] = float(value)

    def _ic(self, name, value):
        defaults = InitialCondition()
        if name == "cap_centers":
            self.sections["ic"][name] = _to_pairs(value)
        elif name == "variant":
            self.sections["ic"][name] = value.lower()
        elif hasattr(defaults, name):
            self.sections["ic"][name] = _convert(getattr(defaults, name), value)
        else:
            raise KeyError(f"ic.{name}")

    def _output(self, name, value):
        if name == "directory":
            self.sections["output"][name] = value
        elif name == "every":
            self.sections["output"][name] = int(value)
        elif name == "formats":
            self.sections["output"][name] = tuple(v.strip().lower() for v in value.split(",") if v.strip())
        else:
            raise KeyError(f"output.{name}")

    def _scaling(self, name, value):
        if name in ("ranks", "grids"):
            self.sections["scaling"][name] = tuple(int(v) for v in _to_floats(value))
        elif name == "steps":
            self.sections["scaling"][name] = int(value)
        else:
            raise KeyError(f"scaling.{name}")

    def _solver(self, parts, value):
        if len(parts) == 1:
            target, name = self.solver_all, parts[0]
        elif parts[0] in SYSTEMS:
            target, name = self.solver[parts[0]], parts[1]
        else:
            raise KeyError("solver." + ".".join(parts))
        if name in ("rtol", "atol"):
            target[name] = float(value)
        elif name in ("max_it", "restart"):
            target[name] = int(value)
        elif name == "pc":
            target[name] = value.lower()
        else:
            raise KeyError("solver." + ".".join(parts))

    def build(self, base: SimConfig) -> SimConfig:
        def merged(obj, overrides, label):
            try:
                return replace(obj, **overrides)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{label}: {exc}") from exc

        ch_over = dict(self.sections["ch"])
        auto = base.stabilizer_auto if self.stabilizer_auto is None else self.stabilizer_auto
        if auto:
            ch_over["stabilizer"] = 2.0 * ch_over.get("Gamma2", base.ch.Gamma2)
        cfg = replace(
            base,
            **self.top,
            stabilizer_auto=auto,
            ch=merged(base.ch, ch_over, "ch"),
            nutrient=merged(base.nutrient, self.sections["nutrient"], "nutrient"),
            flow=merged(base.flow, self.sections["flow"], "flow"),
            ic=replace(base.ic, **self.sections["ic"]),
            output=replace(base.output, **self.sections["output"]),
            scaling=replace(base.scaling, **self.sections["scaling"]),
            solvers={s: merged(base.solvers[s], {**self.solver_all, **self.solver[s]}, f"solver.{s}")
                     for s in SYSTEMS},
        )
        return cfg.validate()


def apply_overrides(base: SimConfig, items) -> SimConfig:
    """Apply ``(key, value)`` pairs on top of ``base`` and validate the result."""
    b = _Builder()
    for key, value in items:
        try:
            b.set(key, value)
        except KeyError:
            raise ConfigError(f"unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return b.build(base)


def load_config(path, overrides=()) -> SimConfig:
    """Read a config file; unknown keys and bad values are rejected with their position."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    items = parse_text(text, str(path))
    b = _Builder()
    for key, (value, line, kcol, vcol) in items.items():
        try:
            b.set(key, value)
        except KeyError:
            raise ParseError(path, line, kcol, f"unknown key {key!r}") from None
        except ValueError as exc:
            raise ParseError(path, line, vcol, f"{key}: {exc}") from None
    cfg = b.build(SimConfig())
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def describe(cfg: SimConfig) -> str:
    """Render a config back into the text format (round-trips through load_config)."""
    lines = [f"grid.nx = {cfg.nx}", f"grid.ny = {cfg.ny}", f"dt = {cfg.dt!r}",
             f"steps = {cfg.steps}", f"mode = {cfg.mode}"]
    for key, targets in _PHYSICAL.items():
        section, name = targets[0]
        lines.append(f"{key} = {getattr(getattr(cfg, section), name)!r}")
    for section, names in _SCHEME.items():
        obj = getattr(cfg, section)
        for name in names:
            v = getattr(obj, name)
            if section == "ch" and name == "stabilizer" and cfg.stabilizer_auto:
                v = "auto"
            elif isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{section}.{name} = {v}")
    for s in SYSTEMS:
        for f in dataclasses.fields(SolverConfig):
            if f.name == "nullspace":
                continue
            lines.append(f"solver.{s}.{f.name} = {getattr(cfg.solvers[s], f.name)}")
    for f in dataclasses.fields(InitialCondition):
        v = getattr(cfg.ic, f.name)
        if f.name == "cap_centers":
            v = "; ".join(f"{x!r} {y!r}" for x, y in v)
        lines.append(f"ic.{f.name} = {v}")
    lines.append(f"output.directory = {cfg.output.directory}")
    lines.append(f"output.every = {cfg.output.every}")
    lines.append(f"output.formats = {', '.join(cfg.output.formats)}")
    lines.append(f"scaling.ranks = {' '.join(map(str, cfg.scaling.ranks))}")
    lines.append(f"scaling.steps = {cfg.scaling.steps}")
    lines.append(f"scaling.grids = {' '.join(map(str, cfg.scaling.grids))}")
    lines.append(f"diagnostics.threshold_fraction = {cfg.threshold_fraction!r}")
    return "\n".join(lines) + "\n"


__all__ = [
    "MODES", "SYSTEMS", "VARIANTS", "VISCOUS_MODES", "OutputConfig", "ScalingConfig",
    "SimConfig", "ParseError", "load_config", "apply_overrides", "parse_text", "describe",
]
