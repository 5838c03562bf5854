"""Typed, validated run configuration read from INI text.

Every key lives in a section (``[wave]``, ``[flow]`` ...) and is addressed as
``section.key``. Unknown sections or keys are rejected. Each value remembers
whether it came from the file or from the built-in default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any, Callable

SCENARIOS = ("wave-mps", "wave-tpvqa", "mpo-compile", "ns-cylinder", "grid-gen", "bench")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv: Callable) -> Callable:
    def parse(text: str):
        if text.strip().lower() in ("none", "auto", ""):
            return None
        return conv(text)
    parse.__name__ = f"optional {conv.__name__}"
    return parse


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _str_list(text: str) -> tuple:
    return tuple(x for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], str | None] | None = None  # returns a message on violation
    help: str = ""


def _positive(v):
    return None if v is None or v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be non-negative"


def _at_least(k):
    return lambda v: None if v is None or v >= k else f"must be >= {k}"


def _one_of(*choices):
    return lambda v: None if v in choices else f"must be one of {choices}"


def _accuracies(v):
    bad = [a for a in v if a not in (2, 4, 6)]
    return f"orders {bad} not in (2, 4, 6)" if bad else (None if v else "must not be empty")


def _operators(v):
    bad = [a for a in v if a not in ("M1", "M2")]
    return f"unknown operators {bad}" if bad else (None if v else "must not be empty")


SCHEMA: dict[str, dict[str, Key]] = {
    "wave": {
        "n_x": Key(int, 6, _at_least(2)),
        "n_y": Key(int, 6, _at_least(2)),
        "dt": Key(float, 1e-4, _positive, "s"),
        "c": Key(float, 340.2, _positive, "m/s"),
        "f": Key(float, 100.0, _positive, "Hz"),
        "A0": Key(float, 1.0, None, "source amplitude"),
        "rho": Key(float, 1.2, _positive, "kg/m^3"),
        "L": Key(_opt(float), None, _positive, "half width in m; auto from f/c"),
        "accuracy": Key(int, 2, _one_of(2, 4, 6)),
        "steps": Key(int, 200, _at_least(1)),
        "max_bond": Key(_opt(int), None, _at_least(1), "none = lossless"),
        "cutoff": Key(float, 0.0, _nonneg, "relative singular-value cutoff; 0 with max_bond none = lossless"),
        "snapshot_every": Key(int, 10, _at_least(1)),
        "oracle": Key(_bool, True),
    },
    "sponge": {
        "gamma_max": Key(float, 1000.0, _nonneg, "1/s"),
        "c_b": Key(float, 1.0, _positive),
        "fraction": Key(float, 0.25, lambda v: None if 0 <= v < 0.5 else "must lie in [0, 0.5)"),
    },
    "compile": {
        "z": Key(int, 4, _at_least(1)),
        "tol": Key(float, 1e-6, _positive),
        "max_iters": Key(int, 100000, _at_least(1)),
        "time_limit": Key(_opt(float), 600.0, _positive, "s per operator"),
        "init": Key(str, "random", _one_of("random", "polar", "svd")),
        "method": Key(str, "lbfgs", _one_of("lbfgs", "cg", "gd")),
        "operators": Key(_str_list, ("M1", "M2"), _operators),
        "accuracies": Key(_int_list, (6,), _accuracies),
    },
    "tpvqa": {
        "steps": Key(int, 200, _at_least(1)),
        "diagnostics_every": Key(int, 20, _at_least(1)),
        "compiled_dir": Key(_opt(str), None, None, "output directory of an mpo-compile run to reuse"),
    },
    "grid": {
        "geometry": Key(str, "cylinder", _one_of("cylinder", "naca0012")),
        "n_xi": Key(int, 6, _at_least(3)),
        "n_eta": Key(int, 6, _at_least(3)),
        "radius": Key(float, 0.5, _positive, "m"),
        "outer": Key(float, 8.0, _positive, "m"),
        "method": Key(str, "transfinite", _one_of("transfinite", "elliptic")),
        "smooth_iterations": Key(int, 400, _at_least(1)),
        "smooth_tol": Key(float, 1e-8, _positive),
    },
    "flow": {
        "rho": Key(float, 1.0, _positive, "kg/m^3"),
        "nu": Key(float, 0.05, _positive, "m^2/s"),
        "u_inf": Key(float, 1.0, _positive, "m/s"),
        "dt": Key(_opt(float), None, _positive, "s; auto from the grid"),
        "steps": Key(int, 200, _at_least(1)),
        "max_bond": Key(_opt(int), None, _at_least(1), "none = lossless"),
        "sample_every": Key(int, 10, _at_least(1)),
        "steady_tol": Key(_opt(float), None, _positive),
        "steady_count": Key(int, 10, _at_least(1)),
        "oracle": Key(_bool, True),
    },
    "poisson": {
        "tol": Key(float, 1e-10, _positive),
        "sweeps": Key(int, 30, _at_least(1)),
        "max_bond": Key(_opt(int), None, _at_least(1)),
        "patience": Key(int, 3, _at_least(1)),
    },
    "bench": {
        "wave_n": Key(int, 5, _at_least(2), "sites per axis"),
        "wave_steps": Key(int, 100, _at_least(1)),
        "tpvqa_steps": Key(int, 40, _at_least(1)),
        "tpvqa_accuracies": Key(_int_list, (2, 4, 6), _accuracies),
        "compile_time_limit": Key(float, 60.0, _positive, "s"),
        "flow_n": Key(int, 5, _at_least(3)),
        "flow_steps": Key(int, 60, _at_least(1)),
        "flow_bonds": Key(_int_list, (8, 16), lambda v: None if v and min(v) >= 1 else "need positive bonds"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    values: dict
    explicit: frozenset = field(default=frozenset(), compare=False)
    seed: int = 0

    def get(self, path: str):
        section, key = path.split(".", 1)
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def provenance(self, path: str) -> str:
        return "explicit" if path in self.explicit else "default"

    def items(self):
        for section, keys in self.values.items():
            for key, value in keys.items():
                yield f"{section}.{key}", value


def defaults(scenario: str, seed: int = 0) -> RunConfig:
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown {scenario!r}; choose from {SCENARIOS}")
    values = {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    return RunConfig(scenario, values, frozenset(), seed)


def parse_config(text: str, scenario: str, seed: int = 0) -> RunConfig:
    """Parse INI ``text``; raises :class:`ConfigError` on any problem."""
    base = defaults(scenario, seed)
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    values = {s: dict(v) for s, v in base.values.items()}
    explicit = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key")
            spec = SCHEMA[section][key]
            try:
                value = spec.parse(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: cannot read {raw!r} as {spec.parse.__name__}") from None
            values[section][key] = value
            explicit.add(path)
    cfg = RunConfig(scenario, values, frozenset(explicit), seed)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            if spec.check is None:
                continue
            msg = spec.check(cfg.values[section][key])
            if msg:
                raise ConfigError(f"{section}.{key}: {msg}")
    try:
        wave_physics(cfg)
    except ValueError as exc:
        raise ConfigError(f"wave: {exc}") from None
    try:
        sponge(cfg, wave_physics(cfg))
    except ValueError as exc:
        raise ConfigError(f"sponge.fraction: {exc}") from None
    fl = cfg.values["flow"]
    if fl["dt"] is not None:
        from .flow import CFLViolation, FlowParams, check_cfl
        try:
            check_cfl(_grid_for_check(cfg), FlowParams(fl["rho"], fl["nu"], fl["u_inf"], fl["dt"]), fl["dt"])
        except CFLViolation as exc:
            raise ConfigError(f"flow.dt: {exc}") from None
    g = cfg.values["grid"]
    if g["geometry"] == "cylinder" and g["outer"] <= g["radius"]:
        raise ConfigError("grid.outer: must exceed grid.radius")


def _grid_for_check(cfg: RunConfig):
    from .grids import cylinder_grid, naca_grid
    g = cfg.values["grid"]
    if g["geometry"] == "cylinder":
        return cylinder_grid(g["n_xi"], g["n_eta"], g["radius"], g["outer"])
    return naca_grid(g["n_xi"], g["n_eta"], g["outer"], g["smooth_iterations"], g["smooth_tol"])


def wave_physics(cfg: RunConfig):
    from .discrete import WavePhysics
    w = cfg.values["wave"]
    return WavePhysics(rho=w["rho"], c=w["c"], A0=w["A0"], f=w["f"], dt=w["dt"], n_x=w["n_x"], n_y=w["n_y"],
                       L=w["L"])


def sponge(cfg: RunConfig, phys):
    from .discrete import SpongeSpec
    s = cfg.values["sponge"]
    return SpongeSpec.default(phys, gamma_max=s["gamma_max"], c_b=s["c_b"], fraction=s["fraction"])


def _render_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_config(cfg: RunConfig, include_defaults: bool = False) -> str:
    """INI text; by default only explicitly set keys, so parsing it back is exact."""
    lines = []
    for section, keys in cfg.values.items():
        chosen = [(k, v) for k, v in keys.items()
                  if include_defaults or f"{section}.{k}" in cfg.explicit]
        if not chosen:
            continue
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_render_value(v)}" for k, v in chosen)
        lines.append("")
    return "\n".join(lines)


def render_value(v) -> str:
    return _render_value(v)
