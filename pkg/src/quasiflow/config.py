"""Experiment configuration: INI files with an ``[experiment]`` section.

Example::

    [experiment]
    preset = heat_decay
    resolution = 128
    seed = 0

    [flow]
    dt0 = 1e-3
    t_end = 1.0

    [params]
    amplitude = 2.5

Keys left out take the preset's defaults.  ``[flow]`` keys are FlowConfig
fields; ``[diagnostics]`` holds yes/no toggles; ``[params]`` is free-form
and passed to the preset.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .coefficients import coefficient, nonlinearity
from .flow import FlowConfig
from .grid import Domain

OUTPUT_ENV = "QUASIFLOW_OUTPUT"


class ConfigError(ValueError):
    """The configuration cannot be parsed or fails validation."""


@dataclass
class ExperimentConfig:
    preset: str
    domain: str
    resolution: int
    a: str = "const"
    f: str = "zero"
    p: float = 2.0
    flow: FlowConfig = field(default_factory=FlowConfig)
    diagnostics: dict[str, bool] = field(default_factory=dict)
    output_dir: str = ""
    seed: int = 0
    params: dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return Domain.parse(self.domain).ndim

    def output_path(self) -> Path:
        root = Path(os.environ.get(OUTPUT_ENV, "runs"))
        return root / (self.output_dir or self.preset)

    def param(self, key: str, default=None, cast=float):
        if key not in self.params:
            return default
        try:
            return cast(self.params[key])
        except ValueError:
            raise ConfigError(f"parameter {key}={self.params[key]!r} is not a valid {cast.__name__}") from None

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["flow"] = dataclasses.asdict(self.flow)
        return d


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"not a yes/no value: {text!r}")


def build_config(preset: str, overrides: dict | None = None, flow: dict | None = None,
                 diagnostics: dict | None = None, params: dict | None = None) -> ExperimentConfig:
    """Merge user values over a preset's defaults and validate."""
    from .experiments import PRESETS

    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
    entry = PRESETS[preset]
    base = dict(entry.defaults)
    base.update(overrides or {})
    fl = dict(entry.flow)
    fl.update(flow or {})
    diag = dict(entry.diagnostics)
    diag.update(diagnostics or {})
    prm = dict(entry.params)
    prm.update(params or {})
    try:
        fcfg = FlowConfig(**{k: _flow_value(k, v) for k, v in fl.items()})
    except TypeError as exc:
        raise ConfigError(f"bad [flow] section: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        cfg = ExperimentConfig(
            preset=preset,
            domain=str(base["domain"]),
            resolution=int(base["resolution"]),
            a=str(base.get("a", "const")),
            f=str(base.get("f", "zero")),
            p=float(base.get("p", 2.0)),
            flow=fcfg,
            diagnostics={k: v if isinstance(v, bool) else _bool(v) for k, v in diag.items()},
            output_dir=str(base.get("output_dir", "")),
            seed=int(base.get("seed", 0)),
            params={k: str(v) for k, v in prm.items()},
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad [experiment] section: {exc}") from None
    validate(cfg)
    return cfg


_FLOW_TYPES = {f.name: f.type for f in dataclasses.fields(FlowConfig)}


def _flow_value(key, value):
    if key not in _FLOW_TYPES:
        raise ConfigError(f"unknown [flow] key {key!r}")
    if isinstance(value, str):
        kind = _FLOW_TYPES[key]
        try:
            if kind == "int":
                return int(value)
            if kind == "float":
                return float(value)
        except ValueError:
            raise ConfigError(f"[flow] {key}={value!r} is not a number") from None
    return value


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = dict(parser["experiment"])
    preset = exp.pop("preset", None)
    if not preset:
        raise ConfigError(f"{path}: [experiment] needs a preset")
    sect = {s: dict(parser[s]) for s in ("flow", "diagnostics", "params") if parser.has_section(s)}
    return build_config(preset, exp, sect.get("flow"), sect.get("diagnostics"), sect.get("params"))


def validate(cfg: ExperimentConfig) -> None:
    """Raise ConfigError for unknown models, bad domains or exponent windows."""
    from .experiments import PRESETS

    try:
        dom = Domain.parse(cfg.domain)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.resolution < 8:
        raise ConfigError("resolution must be at least 8")
    if not cfg.p > 1:
        raise ConfigError("p must exceed 1")
    try:
        coefficient(cfg.a)
        nm = nonlinearity(cfg.f, n=dom.ndim, p=cfg.p)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    check = PRESETS[cfg.preset].validate
    if check is not None:
        check(cfg, dom, nm)
