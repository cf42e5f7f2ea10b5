"""TOML run configuration.

Every section and key is optional; missing keys take the documented
defaults below. Unknown sections or keys are rejected with the line and
column where they appear so that typos fail fast.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .baselines import GbdtParams
from .pfn import PfnConfig
from .prior import GeneratorConfig, PriorConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainSettings:
    steps: int = 4000
    batch: int = 8
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 1.0
    warmup: int = 0  # 0 picks the default warmup (5% of steps)


@dataclass
class LogisticSettings:
    logistic_lr: float = 0.5
    logistic_epochs: int = 500
    logistic_l2: float = 1e-3


@dataclass
class PreprocessSettings:
    ensembles: tuple = (1, 32)


@dataclass
class EvalSettings:
    seeds: int = 40
    train_fraction: float = 0.76
    stratified: bool = True
    top_k: int = 25
    roc_seed: int = 0


@dataclass
class MapSettings:
    ensembles: int = 32
    width: int = 96
    height: int = 64
    blocks: tuple = (4, 3)


@dataclass
class RunConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    pfn: PfnConfig = field(default_factory=PfnConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    logistic: LogisticSettings = field(default_factory=LogisticSettings)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    map: MapSettings = field(default_factory=MapSettings)


# section -> dataclasses whose fields share that section's key space
_SECTIONS = {
    "prior": (PriorConfig,),
    "prior.generator": (GeneratorConfig,),
    "pfn": (PfnConfig, TrainSettings),
    "preprocess": (PreprocessSettings,),
    "baselines": (GbdtParams, LogisticSettings),
    "eval": (EvalSettings,),
    "map": (MapSettings,),
}


def _defaults(cls):
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _locate(text, section, key):
    """1-based (line, column) of ``key`` inside ``[section]`` (best effort)."""
    current = ""
    header = re.compile(r"^\s*\[\s*([^\]]+?)\s*\]")
    for lineno, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1).replace(" ", "")
            if key is None and current == section:
                return lineno, line.index("[") + 1
            continue
        if key is not None and current == section:
            m = re.match(rf"^(\s*)(\"?{re.escape(key)}\"?)\s*[=.]", line)
            if m:
                return lineno, len(m.group(1)) + 1
    return 0, 0


def _error(text, path, section, key, msg):
    line, col = _locate(text, section, key)
    where = f"{path}:{line}:{col}" if line else str(path)
    return ConfigError(f"{where}: {msg}")


def _coerce(value, default, where):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ValueError(f"{where}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def parse_config(text: str, path="<config>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values = {}
    for section, body in doc.items():
        if section not in _SECTIONS or not isinstance(body, dict):
            raise _error(text, path, section, None, f"unknown section [{section}]")
        tables = {section: body}
        if section == "prior" and isinstance(body.get("generator"), dict):
            tables["prior.generator"] = body["generator"]
        for name, table in tables.items():
            allowed = {}
            for cls in _SECTIONS[name]:
                allowed.update(_defaults(cls))
            for key, val in table.items():
                if name == "prior" and key == "generator" and isinstance(val, dict):
                    continue
                if key not in allowed:
                    raise _error(text, path, name, key, f"unknown key {key!r} in [{name}]")
                try:
                    values[(name, key)] = _coerce(val, allowed[key], f"[{name}] {key}")
                except ValueError as exc:
                    raise _error(text, path, name, key, str(exc)) from None

    def build(cls, section):
        kw = {k: values[(section, k)] for k in _defaults(cls) if (section, k) in values}
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise _error(text, path, section, None, f"invalid [{section}]: {exc}") from None

    generator = build(GeneratorConfig, "prior.generator")
    prior_kw = {k: values[("prior", k)] for k in _defaults(PriorConfig) if ("prior", k) in values}
    try:
        prior = PriorConfig(generator=generator, **prior_kw)
    except (TypeError, ValueError) as exc:
        raise _error(text, path, "prior", None, f"invalid [prior]: {exc}") from None
    cfg = RunConfig(
        prior=prior,
        pfn=build(PfnConfig, "pfn"),
        train=build(TrainSettings, "pfn"),
        gbdt=build(GbdtParams, "baselines"),
        logistic=build(LogisticSettings, "baselines"),
        preprocess=build(PreprocessSettings, "preprocess"),
        eval=build(EvalSettings, "eval"),
        map=build(MapSettings, "map"),
    )
    if cfg.train.steps < 1:
        raise _error(text, path, "pfn", "steps", "steps must be >= 1")
    if not cfg.preprocess.ensembles or any(int(m) != m or m < 1 for m in cfg.preprocess.ensembles):
        raise _error(text, path, "preprocess", "ensembles", "ensembles must be positive integers")
    cfg.preprocess.ensembles = tuple(int(m) for m in cfg.preprocess.ensembles)
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)
