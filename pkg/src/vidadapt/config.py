"""Flat ``key = value`` run configuration shared by every subcommand.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .diffusion import NoiseSchedule, SamplerConfig, make_schedule
from .errors import ConfigError
from .toyworld import BACKGROUNDS


@dataclass
class RunConfig:
    # schedule
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # architecture
    widths: tuple[int, ...] = (64, 64)
    blocks_per_res: int = 1
    groups: int = 8
    heads: int = 1
    text_dim: int = 32
    time_dim: int = 64
    adapter_ratio: int = 8
    shift_window: int = 2
    temporal_adapter: bool = True
    attn_adapter: bool = True
    ffn_adapter: bool = True
    latent_shift: bool = True
    # training
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    frames: int = 16
    height: int = 32
    width: int = 32
    backgrounds: tuple[str, ...] = BACKGROUNDS
    contrastive_weight: float = 0.1
    cfg_dropout: float = 0.0
    eval_every: int = 0
    ckpt_every: int = 0
    # sampling
    ddim_steps: int = 50
    eta: float = 0.0
    guidance_scale: float = 1.0
    n_samples: int = 1
    caption: str = "a red square moving right"
    # editing
    edit_caption: str = "a blue square moving right"
    source_seed: int = 0
    source_background: str = "black"
    tune_steps: int = 200
    # super-resolution
    mode: str = "train"
    scale: int = 4
    aug_max: float = 0.3
    aug_level: float = 0.0
    base_steps: int = 2000
    identity_task: bool = False
    input_manifest: str = ""
    # benchmark
    bench_L: tuple[int, ...] = (4, 8, 16, 32)
    bench_N: int = 64
    bench_d: int = 32
    repeats: int = 5
    # evaluation
    metric: str = "all"
    val_clips: int = 16

    def denoiser(self, seed: int = 0, **overrides) -> DenoiserConfig:
        names = {f.name for f in fields(DenoiserConfig)}
        kw = {k: getattr(self, k) for k in names if hasattr(self, k)}
        kw.update(overrides)
        return DenoiserConfig(seed=seed, **kw)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)

    def sampler(self, seed: int) -> SamplerConfig:
        return SamplerConfig(self.ddim_steps, self.eta, seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base else RunConfig()
    known = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, value, getattr(cfg, key)))
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
