"""Run configuration as a flat ``key=value`` text file.

Blank lines and ``#`` comments are ignored; unknown keys are errors.
:meth:`RunConfig.to_text` writes every key in a fixed order, so
``parse(to_text(cfg)) == cfg`` and re-serialization is byte-identical.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .objective import LossConfig
from .selector import TemperatureSchedule
from .tails import ConfigError, TailConfig
from .vit import EncoderConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_dir: str = "data"
    image_size: int = 32
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    classes: int = 10
    ln_eps: float = 1e-6
    tail_patches: tuple = (16, 8, 4)
    tail_resize: tuple = (0, 0, 0)  # 0: no resize, else square side before patching
    lam: float = 0.5
    alpha: float = 0.25
    tau_start: float = 5.0
    tau_end: float = 0.5
    tau_mode: str = "linear"
    optimizer: str = "adam"
    lr: float = 3e-3  # pretraining
    finetune_lr: float = 1e-3  # backbone during joint finetuning
    predictor_lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-5
    warmup_epochs: int = 1
    batch_size: int = 64
    epochs_pretrain: int = 15
    epochs_finetune: int = 10

    def __post_init__(self):
        for name in ("image_size", "depth", "dim", "heads", "mlp_ratio", "classes", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("ln_eps", "tau_start", "tau_end", "lr", "finetune_lr", "predictor_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("lam", "weight_decay", "momentum", "epochs_pretrain", "epochs_finetune", "warmup_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if len(self.tail_patches) != len(self.tail_resize) or not self.tail_patches:
            raise ConfigError("tail_patches and tail_resize must be non-empty and equally long")
        if self.tau_mode not in ("linear", "constant"):
            raise ConfigError(f"tau_mode must be linear or constant, got {self.tau_mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        try:
            self.encoder_config()
            for t in self.tails():
                t.validate(self.image_size, self.image_size)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    # -- derived views ---------------------------------------------------------
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.depth, self.dim, self.heads, self.mlp_ratio, self.classes, self.ln_eps)

    def tails(self) -> tuple[TailConfig, ...]:
        out = []
        for p, r in zip(self.tail_patches, self.tail_resize):
            side = r or self.image_size
            out.append(TailConfig(p, side // p, (r, r) if r else None))
        return tuple(out)

    def loss_config(self, costs=()) -> LossConfig:
        return LossConfig(self.lam, self.alpha, tuple(costs))

    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.tau_start, self.tau_end, self.tau_mode)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # -- text form --------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        kinds = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            try:
                values[key] = _parse(kinds[key], val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from e
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_text(text)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _parse(kind, val: str):
    if kind is tuple:
        return tuple(int(x) for x in val.split(",") if x.strip())
    if kind is int:
        return int(val)
    if kind is float:
        return float(val)
    return val
