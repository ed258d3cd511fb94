"""Experiment configuration files.

A config is an INI document with up to five sections::

    [data]        edges, window, attributes, explicit_steps, sequence
    [synthetic]   any SyntheticSpec field
    [model]       any TrainConfig field
    [eval]        subsample, near_zero, negative_ratio, ks, f1_mode, seed
    [output]      directory

Unknown sections or keys are errors. ``COEVO_SEED`` in the environment
replaces the model and synthetic seeds.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields

from .synthetic import SyntheticSpec
from .training import TrainConfig

SEED_ENV = "COEVO_SEED"


class ConfigError(ValueError):
    pass


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class DataConfig:
    edges: str = ""
    window: float = 0.0
    attributes: str = ""
    explicit_steps: bool = False
    sequence: str = ""


@dataclass
class EvalConfig:
    subsample: bool = True
    near_zero: float = 0.1
    negative_ratio: float = 1.0
    ks: tuple = (50, 100, 200)
    f1_mode: str = "best"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.ks, str):
            self.ks = tuple(int(k) for k in self.ks.split(",") if k.strip())
        self.ks = tuple(int(k) for k in self.ks)
        if self.f1_mode not in ("best", "fixed"):
            raise ConfigError(f"unknown f1_mode {self.f1_mode!r}")
        if self.negative_ratio <= 0 or self.near_zero < 0:
            raise ConfigError("negative_ratio must be > 0 and near_zero >= 0")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticSpec | None = None
    model: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: str = "."

    def to_dict(self) -> dict:
        return {"data": asdict(self.data),
                "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
                "model": self.model.to_dict(),
                "eval": {**asdict(self.eval), "ks": list(self.eval.ks)},
                "output": {"directory": self.output}}


def _typed(cls, section: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    kw = {}
    for k, v in section.items():
        default = known[k].default
        try:
            if isinstance(default, bool):
                kw[k] = _bool(v)
            elif isinstance(default, int):
                kw[k] = int(v)
            elif isinstance(default, float):
                kw[k] = float(v)
            else:
                kw[k] = v
        except ValueError as exc:
            raise ConfigError(f"[{where}] {k}: {exc}") from exc
    return cls(**kw)


SECTIONS = ("data", "synthetic", "model", "eval", "output")


def parse_config(text: str, source: str = "<config>", env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")
    sec = {name: dict(cp[name]) if cp.has_section(name) else {} for name in SECTIONS}
    seed = env.get(SEED_ENV)
    if seed is not None and seed.strip():
        sec["model"]["seed"] = seed
        if cp.has_section("synthetic"):
            sec["synthetic"]["seed"] = seed
    try:
        data = _typed(DataConfig, sec["data"], "data")
        synthetic = SyntheticSpec.from_mapping(sec["synthetic"]) if cp.has_section("synthetic") else None
        model = TrainConfig.from_mapping(sec["model"])
        ev = _typed(EvalConfig, sec["eval"], "eval")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    out = sec["output"]
    if set(out) - {"directory"}:
        raise ConfigError(f"unknown keys in [output]: {sorted(set(out) - {'directory'})}")
    return ExperimentConfig(data, synthetic, model, ev, out.get("directory", "."))


def load_config(path, env=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(text, str(path), env)


def default_config_text() -> str:
    """Every key with its default value, for ``--help`` and docs."""
    cfg = ExperimentConfig()
    lines = []
    for name, values in [("data", asdict(cfg.data)), ("synthetic", SyntheticSpec().to_dict()),
                         ("model", cfg.model.to_dict()), ("eval", asdict(cfg.eval)),
                         ("output", {"directory": cfg.output})]:
        lines.append(f"[{name}]")
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
