"""Experiment configuration: named variants, flat key-value files and overrides.

Config files are flat YAML mappings. Nested sections are addressed with
dotted keys, e.g. ``train.total_timesteps: 1000000`` or
``physics.velocity: 10``. The same keys are accepted by ``--override``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .curriculum import CurriculumSpec
from .dynamics import ConfigurationError, PhysicsConfig
from .encoders import EncodingMode
from .ppo import TrainConfig

OUTPUT_ROOT_ENV = "SWARMNAV_OUTPUT_ROOT"


@dataclass(frozen=True)
class Variant:
    description: str
    encoding: EncodingMode
    target: str  # fixed | random | curriculum
    num_envs: int = 1


EXPERIMENTS = {
    "env-0": Variant("constant target, full state", EncodingMode.FULL_STATE, "fixed"),
    "env-1a": Variant("constant target, positions only", EncodingMode.POSITIONS_ONLY, "fixed"),
    "env-1b": Variant("constant target, mean pose", EncodingMode.MEAN_POSE, "fixed"),
    "env-1c": Variant("constant target, mean pose of unabsorbed", EncodingMode.MEAN_POSE_UNABSORBED, "fixed"),
    "env-2": Variant("random target, full state", EncodingMode.FULL_STATE, "random"),
    "env-2-om": Variant("random target, full state + target bearing, 4 envs", EncodingMode.FULL_STATE_BEARING, "random", 4),
    "env-2-omc": Variant("curriculum on env-2-om, 2 envs", EncodingMode.FULL_STATE_BEARING, "curriculum", 2),
}

# (experiment, swimmers, algo) -> reported smoothed return
REPORTED_RETURNS = {
    ("env-0", 4, "ppo"): 4.0, ("env-0", 4, "rpo"): 4.0,
    ("env-0", 9, "ppo"): 9.0, ("env-0", 9, "rpo"): 8.9,
    ("env-0", 16, "ppo"): 16.0, ("env-0", 16, "rpo"): 13.9,
    ("env-1a", 4, "ppo"): 3.9, ("env-1a", 4, "rpo"): 3.7,
    ("env-1a", 9, "ppo"): 8.6, ("env-1a", 9, "rpo"): 8.5,
    ("env-1a", 16, "ppo"): 15.6, ("env-1a", 16, "rpo"): 15.1,
    ("env-1b", 4, "ppo"): 4.0, ("env-1b", 4, "rpo"): 3.9,
    ("env-1b", 9, "ppo"): 7.8, ("env-1b", 9, "rpo"): 8.9,
    ("env-1b", 16, "ppo"): 11.8, ("env-1b", 16, "rpo"): 15.9,
    ("env-1c", 4, "ppo"): 4.0, ("env-1c", 4, "rpo"): 4.0,
    ("env-1c", 9, "ppo"): 9.0, ("env-1c", 9, "rpo"): 8.9,
    ("env-1c", 16, "ppo"): 11.9, ("env-1c", 16, "rpo"): 11.9,
    ("env-2", 4, "ppo"): 0.2, ("env-2", 4, "rpo"): 3.9,
    ("env-2", 9, "ppo"): 0.9, ("env-2", 9, "rpo"): 8.5,
    ("env-2", 16, "ppo"): 2.7, ("env-2", 16, "rpo"): 14.1,
    ("env-2-om", 16, "rpo"): 14.6,
    ("env-2-omc", 16, "rpo"): 15.8,
    ("env-2-omc", 25, "rpo"): 24.5,
}

CURRICULUM_DECAY = {16: 1000.0, 25: 2000.0}


@dataclass
class ExperimentConfig:
    experiment: str = "env-0"
    algo: str = "ppo"
    n_swimmers: int = 4
    seed: int = 1
    output_dir: str | None = None
    spacing: float = 6.0
    fixed_target: tuple = (10.56, 41.63, 9.36)
    target_max_distance: float = 100.0
    target_radius_range: tuple = (5.0, 20.0)
    target_shape: str = "square"
    circular_mean: bool = False
    smoothing_window: int = 100
    checkpoint_every: int = 50
    train: TrainConfig = field(default_factory=TrainConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    curriculum: CurriculumSpec | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        self.fixed_target = tuple(float(v) for v in self.fixed_target)
        self.target_radius_range = tuple(float(v) for v in self.target_radius_range)
        if self.train.algo != self.algo.lower():
            self.train = replace(self.train, algo=self.algo)
        self.algo = self.train.algo
        if self.variant.target == "curriculum" and self.curriculum is None:
            self.curriculum = CurriculumSpec(decay=CURRICULUM_DECAY.get(self.n_swimmers, 1000.0))

    @property
    def variant(self) -> Variant:
        return EXPERIMENTS[self.experiment]

    @property
    def run_name(self) -> str:
        return f"{self.experiment}_n{self.n_swimmers}_{self.algo}_s{self.seed}"

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.run_name

    def to_flat(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("train", "physics", "curriculum"):
                if v is None:
                    continue
                sub = v.to_dict() if hasattr(v, "to_dict") else asdict(v)
                for k, sv in sub.items():
                    out[f"{f.name}.{k}"] = list(sv) if isinstance(sv, tuple) else sv
            else:
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_SECTIONS = {"train": TrainConfig, "physics": PhysicsConfig, "curriculum": CurriculumSpec}


def _coerce(cls, name, value):
    # YAML 1.1 reads "1e-4" as a string; numeric fields accept it anyway
    default = next(f.default for f in fields(cls) if f.name == name)
    if isinstance(value, str) and type(default) in (int, float):
        try:
            return type(default)(float(value)) if type(default) is int else float(value)
        except ValueError as exc:
            raise ConfigurationError(f"{name}: expected a number, got {value!r}") from exc
    if isinstance(value, int) and not isinstance(value, bool) and type(default) is float:
        return float(value)
    return value


def from_flat(flat: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from dotted flat keys."""
    top, sections = {}, {name: {} for name in _SECTIONS}
    top_names = {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        if rest:
            if head not in _SECTIONS:
                raise ConfigurationError(f"unknown config section in key {key!r}")
            valid = {f.name for f in fields(_SECTIONS[head])}
            if rest not in valid:
                raise ConfigurationError(f"unknown config key {key!r}")
            sections[head][rest] = _coerce(_SECTIONS[head], rest, value)
        elif key in top_names:
            top[key] = _coerce(ExperimentConfig, key, value)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    if "algo" in top:
        sections["train"].setdefault("algo", top["algo"])
    variant = EXPERIMENTS.get(top.get("experiment", "env-0"))
    if variant is not None:
        sections["train"].setdefault("num_envs", variant.num_envs)
    try:
        train = TrainConfig(**sections["train"])
        physics = PhysicsConfig(**sections["physics"])
        curriculum = CurriculumSpec(**sections["curriculum"]) if sections["curriculum"] else None
        return ExperimentConfig(**top, train=train, physics=physics, curriculum=curriculum)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override must look like key=value, got {text!r}")
    return key.strip(), yaml.safe_load(raw)


def load_config(path, overrides=(), seed=None) -> ExperimentConfig:
    with open(path) as fh:
        flat = yaml.safe_load(fh) or {}
    if not isinstance(flat, dict):
        raise ConfigurationError(f"{path}: expected a flat mapping")
    for item in overrides:
        k, v = parse_override(item)
        flat[k] = v
    if seed is not None:
        flat["seed"] = seed
    return from_flat(flat)


def dump_config(cfg: ExperimentConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_flat(), sort_keys=False))


def cell_config(experiment: str, n_swimmers: int, algo: str, seed: int = 1) -> ExperimentConfig:
    """Configuration for one (experiment, swimmers, algo) benchmark cell."""
    variant = EXPERIMENTS[experiment]
    return ExperimentConfig(
        experiment=experiment,
        algo=algo,
        n_swimmers=n_swimmers,
        seed=seed,
        train=TrainConfig(algo=algo, num_envs=variant.num_envs),
    )
