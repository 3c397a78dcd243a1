"""Run configuration: dataclasses, JSON parsing, validation, echoing."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ConfigRangeError


@dataclass
class ModelConfig:
    image_hw: int = 32           # square frame edge, pixels
    patch: int = 4               # patch edge; image_hw must divide by it
    d_model: int = 64            # token width everywhere
    vit_blocks: int = 2
    resampler_k: int = 8         # latent token count
    decoder_layers: int = 2
    lstm_layers: int = 2
    lstm_width: int = 64
    pose_clip: float = 0.1       # tanh output scale, matches the env step clip
    gate_init: float = 0.5       # initial cross-attention gate pre-activation
    sep_resampler: bool = False
    depth_input: str = "sensor"  # "sensor" | "constant" (RGB-only ablation)
    seed: int = 0

    def validate(self):
        for name in ("image_hw", "patch", "d_model", "vit_blocks",
                     "resampler_k", "decoder_layers", "lstm_layers", "lstm_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigRangeError(f"model.{name} must be a positive integer, got {v!r}")
        if self.image_hw % self.patch != 0:
            raise ConfigRangeError(
                f"model.patch {self.patch} must divide model.image_hw {self.image_hw}"
            )
        if self.d_model < 4:
            raise ConfigRangeError(
                f"model.d_model must be at least 4 (positional band), got {self.d_model}"
            )
        if self.pose_clip <= 0:
            raise ConfigRangeError(f"model.pose_clip must be positive, got {self.pose_clip}")
        if self.depth_input not in ("sensor", "constant"):
            raise ConfigError(f"model.depth_input must be 'sensor' or 'constant'")


@dataclass
class TrainConfig:
    lambda_gripper: float = 1.0
    learning_rate: float = 2e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 1
    clip_norm: float = 1.0       # global gradient-norm bound
    seed: int = 0
    ckpt_every: int = 0          # 0 = final checkpoint only

    def validate(self):
        if self.lambda_gripper < 0:
            raise ConfigRangeError(f"train.lambda_gripper must be >= 0, got {self.lambda_gripper}")
        if self.learning_rate < 0:
            raise ConfigRangeError(f"train.learning_rate must be >= 0, got {self.learning_rate}")
        for b in self.betas:
            if not 0.0 <= b < 1.0:
                raise ConfigRangeError(f"train.betas must lie in [0, 1), got {self.betas}")
        if self.epochs < 0:
            raise ConfigRangeError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigRangeError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm <= 0:
            raise ConfigRangeError(f"train.clip_norm must be positive, got {self.clip_norm}")


@dataclass
class EnvConfig:
    palettes: list[str] = field(default_factory=lambda: ["A", "B", "C"])
    eval_palette: str = "D"
    families: list[str] | None = None
    variant: str = "standard"
    n_chains: int = 200
    horizon: int = 64            # per-task step budget
    n_trajectories: int = 200
    enrich: bool = False

    def validate(self):
        from .sim import FAMILIES, PALETTES

        for p in self.palettes + [self.eval_palette]:
            if p not in PALETTES:
                raise ConfigRangeError(f"env palette {p!r} not one of {sorted(PALETTES)}")
        if self.families is not None:
            for f in self.families:
                if f not in FAMILIES:
                    raise ConfigRangeError(f"env.families entry {f!r} not one of {FAMILIES}")
        if self.variant not in ("standard", "tall_short"):
            raise ConfigRangeError(f"env.variant must be standard or tall_short")
        if self.n_chains < 1 or self.horizon < 1 or self.n_trajectories < 1:
            raise ConfigRangeError("env counts must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    seed: int = 0

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.env.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["betas"] = list(d["train"]["betas"])
        return d


def _apply_section(obj, section: str, data: dict):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {section}.{key}" if section else
                              f"unknown config key: {key}")
        if key == "betas":
            value = tuple(value)
        setattr(obj, key, value)


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus override sections.

    An empty file means all defaults. Unknown keys raise ConfigError with
    the offending key name; out-of-range values raise ConfigRangeError.
    """
    cfg = RunConfig()
    sources = []
    if path is not None:
        text = Path(path).read_text().strip()
        sources.append(json.loads(text) if text else {})
    if overrides:
        sources.append(overrides)
    for source in sources:
        for section, data in source.items():
            if section == "seed":
                cfg.seed = data
                continue
            if section not in ("model", "train", "env"):
                raise ConfigError(f"unknown config key: {section}")
            _apply_section(getattr(cfg, section), section, data)
    cfg.validate()
    return cfg


def echo_config(cfg: RunConfig, run_dir: str | Path) -> Path:
    """Write the effective config where the run can be reproduced from."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / "config_echo.json"
    out.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_echoed_config(path: str | Path) -> RunConfig:
    return parse_config(path)


def resolve_out(path: str | Path) -> Path:
    """Resolve an output path; MINIVLA_RUN_DIR / RFPX_RUN_DIR override the
    root for relative paths."""
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get("RFPX_RUN_DIR") or os.environ.get("MINIVLA_RUN_DIR")
    return (Path(root) / p) if root else p
