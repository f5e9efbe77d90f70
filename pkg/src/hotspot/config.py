"""Structured-text run configuration (INI style, one section per module).

Floats are written with ``repr`` so a dump/load round trip is bit-exact.
Unknown sections and keys are rejected with the offending line number.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field as dc_field

from .field import FieldConfig
from .gp import Hyperparams
from .planner import DEFAULT_BETAS, BetaSchedule, PlannerConfig
from .sensing import make_levels


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SensingConfig:
    altitudes: tuple[float, ...] = (10.0, 40.0, 70.0)
    footprints: tuple[float, ...] = (1.0, 4.0, 7.0)
    pixels: tuple[int, int] = (3, 3)
    noise_model: tuple[float, float] = (0.25, 0.05)

    def levels(self):
        return make_levels(self.altitudes, self.footprints, self.noise_model)


@dataclass(frozen=True)
class GPConfig:
    length_scale: float = 2.0
    signal_variance: float = 100.0
    inference: str = "exact"
    inducing_method: str = "lattice"

    def hyperparams(self, sensing: SensingConfig) -> Hyperparams:
        nv = tuple(lv.noise_variance for lv in sensing.levels())
        return Hyperparams(self.length_scale, self.signal_variance, nv)

    @property
    def sparse_size(self) -> int | str:
        return parse_inference(self.inference)


@dataclass(frozen=True)
class PlannerSection:
    variance_mode: str = "cpv"
    window: int | None = 1
    beta_form: str = "increasing"
    beta_gamma: float | None = None
    beta_rate: float | None = None
    beta_offset: float | None = None
    sensing_time: float = 2.0
    budget: float = 100.0
    start: str = "low"

    def schedule(self) -> BetaSchedule:
        base = DEFAULT_BETAS[(self.variance_mode, self.beta_form)]
        return BetaSchedule(base.gamma if self.beta_gamma is None else self.beta_gamma,
                            base.rate if self.beta_rate is None else self.beta_rate,
                            base.offset if self.beta_offset is None else self.beta_offset)


@dataclass(frozen=True)
class BenchConfig:
    env_count: int = 20
    env_seed_base: int = 0
    trials: int = 5
    trial_seed_base: int = 0
    strategies: tuple[str, ...] = ("DCPV++",)
    budgets: tuple[float, ...] = (100.0,)
    sparsity: tuple[str, ...] = ("exact",)
    workers: int = 1
    out: str = "results.csv"


@dataclass(frozen=True)
class RunConfig:
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    sensing: SensingConfig = dc_field(default_factory=SensingConfig)
    gp: GPConfig = dc_field(default_factory=GPConfig)
    planner: PlannerSection = dc_field(default_factory=PlannerSection)
    bench: BenchConfig = dc_field(default_factory=BenchConfig)

    def hyperparams(self) -> Hyperparams:
        return self.gp.hyperparams(self.sensing)

    def planner_config(self, **overrides) -> PlannerConfig:
        p = self.planner
        kw = dict(variance_mode=p.variance_mode, window=p.window, beta=p.schedule(),
                  inference=self.gp.sparse_size, inducing_method=self.gp.inducing_method,
                  sensing_time=p.sensing_time, budget=p.budget)
        kw.update(overrides)
        return PlannerConfig(**kw)


SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_inference(text) -> int | str:
    if isinstance(text, int):
        return text
    t = str(text).strip().lower()
    if t == "exact":
        return "exact"
    try:
        s = int(t)
    except ValueError:
        raise ConfigError(f"inference must be 'exact' or an inducing-point count, got {text!r}") from None
    if s < 1:
        raise ConfigError("inducing-point count must be >= 1")
    return s


# -- value codecs --------------------------------------------------------------

def _scalar(tp, text: str):
    if tp is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    raise TypeError(f"unsupported config type {tp}")


def _decode(hint, text: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() == "none":
            return None
        return _decode(args[0], text)
    if origin is tuple:
        args = typing.get_args(hint)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_scalar(args[0], p) for p in parts)
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_scalar(a, p) for a, p in zip(args, parts))
    return _scalar(hint, text)


def _encode(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_encode(v) for v in value)
    return str(value)


# -- dump / load ---------------------------------------------------------------

def dumps(config: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(config, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_encode(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save_config(config: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(dumps(config))


def _line_numbers(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    where = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where.setdefault((section, None), no)
        elif "=" in line:
            where.setdefault((section, line.split("=", 1)[0].strip().lower()), no)
    return where


def loads(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    where = _line_numbers(text)
    built = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{source}:{where.get((sec, None), '?')}: unknown section [{sec}]")
    for name, f in SECTIONS.items():
        cls = f.default_factory
        if name not in parser:
            built[name] = cls()
            continue
        hints = typing.get_type_hints(cls)
        kw = {}
        for key, raw in parser[name].items():
            line = where.get((name, key), "?")
            if key not in hints:
                raise ConfigError(f"{source}:{line}: unknown key '{key}' in [{name}]")
            try:
                kw[key] = _decode(hints[key], raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}:{line}: bad value for '{key}': {exc}") from None
        try:
            built[name] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    cfg = RunConfig(**built)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read(), str(path))


def validate(cfg: RunConfig):
    """Cross-section checks that the individual dataclasses cannot make."""
    try:
        cfg.sensing.levels()
        cfg.hyperparams()
        cfg.planner_config()
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.planner.start not in ("low", "mid", "high", "any") and not cfg.planner.start.isdigit():
        raise ConfigError(f"planner start must be low/mid/high/any or an arm id, got {cfg.planner.start!r}")
    b = cfg.bench
    if b.env_count < 1 or b.trials < 1 or b.workers < 1:
        raise ConfigError("bench env_count, trials and workers must be >= 1")
    for s in b.sparsity:
        parse_inference(s)
    from .bench import resolve_strategy  # local import: bench depends on this module
    for name in b.strategies:
        try:
            resolve_strategy(name, len(cfg.sensing.altitudes))
        except ValueError as exc:
            raise ConfigError(f"[bench] strategies: {exc}") from None
