"""Toy latent U-Net: a 2D text-conditioned denoiser and its inflation to video.

The image model works on ``[B, C, H, W]`` latents. ``inflate_to_video``
returns a copy that accepts ``[B, L, C, H, W]``: 2D layers run per frame with
shared weights, a temporal adapter follows every residual conv block,
self-attention switches to latent-shift attention, and spatial adapters wrap
the attention and feed-forward outputs.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, replace

import torch
import torch.nn.functional as F
from torch import nn

from .adapters import SpatialAdapter, TemporalAdapter, bottleneck_width
from .diffusion import make_schedule
from .errors import ConfigError, DimensionError
from .lsa import SelfAttention, ShiftSpec, scaled_dot_attention
from .numerics import gelu


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 48
    cond_channels: int = 0  # extra input channels (super-resolution conditioning)
    noise_level_cond: bool = False
    widths: tuple[int, ...] = (64, 64)
    blocks_per_res: int = 1
    groups: int = 8
    heads: int = 1
    ff_mult: int = 2
    text_dim: int = 32
    time_dim: int = 64
    adapter_ratio: int = 8
    shift_window: int = 2
    temporal_kernel: tuple[int, int, int] = (3, 1, 1)
    temporal_adapter: bool = True
    attn_adapter: bool = True
    ffn_adapter: bool = True
    latent_shift: bool = True
    # read the network output as v and return eps = sqrt(ab) v + sqrt(1 - ab) x_t
    v_param: bool = True
    schedule: tuple[int, float, float] = (1000, 1e-4, 0.02)
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.widths or self.blocks_per_res < 1:
            raise ConfigError("need at least one resolution level and one block per level")
        for w in self.widths:
            if w % self.groups:
                raise ConfigError(f"width {w} not divisible by {self.groups} groups")
            if w % self.heads:
                raise ConfigError(f"width {w} not divisible by {self.heads} heads")
            bottleneck_width(w, self.adapter_ratio)
        if self.time_dim % 2:
            raise ConfigError("time_dim must be even")

    @property
    def in_channels(self) -> int:
        return self.latent_channels + self.cond_channels

    def to_dict(self) -> dict:
        return asdict(self)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    return emb.to(torch.get_default_dtype())


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, cfg: DenoiserConfig):
        super().__init__()
        self.norm1 = nn.GroupNorm(cfg.groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(cfg.time_dim, cout)
        self.norm2 = nn.GroupNorm(cfg.groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        self.temporal_adapter: TemporalAdapter | None = None

    def forward(self, x: torch.Tensor, temb: torch.Tensor, frames: int) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        out = self.skip(x) + h
        if self.temporal_adapter is not None:
            BL, C, H, W = out.shape
            out = self.temporal_adapter(out.reshape(BL // frames, frames, C, H, W)).reshape(BL, C, H, W)
        return out


class CrossAttention(nn.Module):
    def __init__(self, d: int, text_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.to_q = nn.Linear(d, d, bias=False)
        self.to_k = nn.Linear(text_dim, d, bias=False)
        self.to_v = nn.Linear(text_dim, d, bias=False)
        self.to_out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        out = scaled_dot_attention(self.to_q(x), self.to_k(text), self.to_v(text), self.heads)
        return self.to_out(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int):
        super().__init__()
        self.fc1 = nn.Linear(d, d * mult)
        self.fc2 = nn.Linear(d * mult, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Self-attention, text cross-attention and FFN over the pixels of a feature map."""

    def __init__(self, d: int, cfg: DenoiserConfig):
        super().__init__()
        self.norm = nn.GroupNorm(cfg.groups, d)
        self.proj_in = nn.Linear(d, d)
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, cfg.heads, spec=ShiftSpec(cfg.shift_window))
        self.ln2 = nn.LayerNorm(d)
        self.cross = CrossAttention(d, cfg.text_dim, cfg.heads)
        self.ln3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, cfg.ff_mult)
        self.proj_out = nn.Linear(d, d)
        self.attn_adapter: SpatialAdapter | None = None
        self.ffn_adapter: SpatialAdapter | None = None

    def forward(self, x: torch.Tensor, text: torch.Tensor, frames: int) -> torch.Tensor:
        BL, C, H, W = x.shape
        h = self.proj_in(self.norm(x).flatten(2).transpose(1, 2))  # [BL, N, C]
        a = self.ln1(h)
        if self.attn.mode != "framewise":
            a = self.attn(a.reshape(BL // frames, frames, H * W, C)).reshape(BL, H * W, C)
        else:
            a = self.attn(a)
        if self.attn_adapter is not None:
            a = self.attn_adapter(a)
        h = h + a
        h = h + self.cross(self.ln2(h), text)
        f = self.ff(self.ln3(h))
        if self.ffn_adapter is not None:
            f = self.ffn_adapter(f)
        h = h + f
        return x + self.proj_out(h).transpose(1, 2).reshape(BL, C, H, W)


class Level(nn.Module):
    def __init__(self, cin: int, cout: int, cfg: DenoiserConfig, n_blocks: int):
        super().__init__()
        self.res = nn.ModuleList()
        self.attn = nn.ModuleList()
        for i in range(n_blocks):
            self.res.append(ResBlock(cin if i == 0 else cout, cout, cfg))
            self.attn.append(TransformerBlock(cout, cfg))

    def forward(self, x, temb, text, frames):
        for res, attn in zip(self.res, self.attn):
            x = attn(res(x, temb, frames), text, frames)
        return x


class Denoiser(nn.Module):
    """Epsilon predictor. ``video`` switches the input layout to ``[B, L, C, H, W]``."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.video = False
        w = cfg.widths
        td = cfg.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.noise_mlp = (nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
                          if cfg.noise_level_cond else None)
        self.conv_in = nn.Conv2d(cfg.in_channels, w[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = w[0]
        for i, wi in enumerate(w):
            self.down.append(Level(prev, wi, cfg, cfg.blocks_per_res))
            prev = wi
            if i + 1 < len(w):
                self.downsample.append(nn.Conv2d(wi, wi, 3, stride=2, padding=1))
        self.upsample = nn.ModuleList()
        self.up = nn.ModuleList()
        for i in reversed(range(len(w) - 1)):
            self.upsample.append(nn.Conv2d(w[i + 1], w[i], 3, padding=1))
            self.up.append(Level(2 * w[i], w[i], cfg, cfg.blocks_per_res))
        self.norm_out = nn.GroupNorm(cfg.groups, w[0])
        self.conv_out = nn.Conv2d(w[0], cfg.latent_channels, 3, padding=1)
        # plain attribute, not a buffer: it is derived from the config, not learned
        self.alpha_bar = make_schedule(*cfg.schedule).alpha_bar if cfg.v_param else None

    def forward(self, x: torch.Tensor, text_emb: torch.Tensor, t: torch.Tensor,
                cond: torch.Tensor | None = None,
                noise_level: torch.Tensor | None = None) -> torch.Tensor:
        cfg = self.cfg
        if self.video:
            if x.ndim != 5:
                raise DimensionError(f"video model expects [B, L, C, H, W], got {tuple(x.shape)}")
            B, L = x.shape[:2]
        else:
            if x.ndim != 4:
                raise DimensionError(f"image model expects [B, C, H, W], got {tuple(x.shape)}")
            B, L = x.shape[0], 1
        C, H, W = x.shape[-3:]
        if C != cfg.latent_channels:
            raise DimensionError(f"expected {cfg.latent_channels} latent channels, got {C}")
        down_factor = 2 ** (len(cfg.widths) - 1)
        if H % down_factor or W % down_factor:
            raise DimensionError(f"latent extents {H}x{W} must be divisible by {down_factor}")
        h = x.reshape(B * L, C, H, W)
        if cfg.cond_channels:
            if cond is None or cond.shape[-3] != cfg.cond_channels:
                raise DimensionError(f"model needs {cfg.cond_channels} conditioning channels")
            h = torch.cat([h, cond.reshape(B * L, cfg.cond_channels, H, W)], dim=1)
        t = torch.as_tensor(t).reshape(-1).expand(B)
        temb = self.time_mlp(timestep_embedding(t, cfg.time_dim))
        if self.noise_mlp is not None:
            lvl = torch.zeros(B) if noise_level is None else torch.as_tensor(noise_level).reshape(-1).expand(B)
            temb = temb + self.noise_mlp(timestep_embedding(lvl, cfg.time_dim))
        temb = temb.repeat_interleave(L, dim=0)
        text = text_emb.repeat_interleave(L, dim=0)

        h = self.conv_in(h)
        skips = []
        for i, level in enumerate(self.down):
            h = level(h, temb, text, L)
            if i < len(self.downsample):
                skips.append(h)
                h = self.downsample[i](h)
        for up_conv, level in zip(self.upsample, self.up):
            h = up_conv(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = level(torch.cat([h, skips.pop()], dim=1), temb, text, L)
        out = self.conv_out(F.silu(self.norm_out(h))).reshape(x.shape)
        if self.alpha_bar is not None:
            ab = self.alpha_bar[t.long()].to(x.dtype).reshape(B, *([1] * (x.ndim - 1)))
            out = ab.sqrt() * out + (1 - ab).sqrt() * x
        return out

    def res_blocks(self) -> list[ResBlock]:
        return [r for lv in [*self.down, *self.up] for r in lv.res]

    def transformer_blocks(self) -> list[TransformerBlock]:
        return [a for lv in [*self.down, *self.up] for a in lv.attn]


def build_image_denoiser(cfg: DenoiserConfig) -> Denoiser:
    """Seeded construction; two builds from the same config are identical."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return Denoiser(cfg)


def attach_adapters(model: Denoiser, cfg: DenoiserConfig) -> None:
    """Insert zero-initialized adapters per the config flags (seeded by cfg.seed + 1)."""
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    for res in model.res_blocks():
        d = res.conv2.out_channels
        res.temporal_adapter = (TemporalAdapter(d, bottleneck_width(d, cfg.adapter_ratio),
                                                cfg.temporal_kernel, gen)
                                if cfg.temporal_adapter else None)
    for blk in model.transformer_blocks():
        d = blk.proj_in.in_features
        width = bottleneck_width(d, cfg.adapter_ratio)
        blk.attn_adapter = SpatialAdapter(d, width, gen) if cfg.attn_adapter else None
        blk.ffn_adapter = SpatialAdapter(d, width, gen) if cfg.ffn_adapter else None
        blk.attn.set_mode("lsa" if cfg.latent_shift else "framewise", ShiftSpec(cfg.shift_window))


def inflate_to_video(image_model: Denoiser, cfg: DenoiserConfig | None = None) -> Denoiser:
    """Copy of ``image_model`` that runs on videos with adapters and latent-shift attention.

    ``cfg`` may override the adapter/attention fields; architecture fields must
    match the image model.
    """
    base_cfg = image_model.cfg
    cfg = cfg or base_cfg
    arch = ("latent_channels", "cond_channels", "noise_level_cond", "widths", "blocks_per_res",
            "groups", "heads", "ff_mult", "text_dim", "time_dim", "v_param", "schedule")
    for name in arch:
        if getattr(cfg, name) != getattr(base_cfg, name):
            raise ConfigError(f"video config field {name!r} differs from the image model")
    video = copy.deepcopy(image_model)
    video.cfg = cfg
    video.video = True
    attach_adapters(video, cfg)
    video.to(next(image_model.parameters()).dtype)
    return video


def _linear(i: int, o: int, bias: bool = True) -> int:
    return i * o + (o if bias else 0)


def _conv(i: int, o: int, k: int) -> int:
    return i * o * k * k + o


def analytic_param_count(cfg: DenoiserConfig, video: bool = False) -> dict[str, int]:
    """Closed-form parameter counts ``{"base", "adapters", "total"}`` for a config."""
    td, e = cfg.time_dim, cfg.text_dim
    base = 2 * _linear(td, td)
    if cfg.noise_level_cond:
        base += 2 * _linear(td, td)
    base += _conv(cfg.in_channels, cfg.widths[0], 3)
    adapters = 0

    def res(cin: int, cout: int) -> int:
        n = 2 * cin + _conv(cin, cout, 3) + _linear(td, cout) + 2 * cout + _conv(cout, cout, 3)
        return n + (_conv(cin, cout, 1) if cin != cout else 0)

    def xf(d: int) -> int:
        n = 2 * d + _linear(d, d) + 3 * 2 * d          # group norm, proj_in, three layer norms
        n += 3 * d * d + _linear(d, d)                 # self-attention
        n += d * d + 2 * e * d + _linear(d, d)         # cross-attention
        n += _linear(d, cfg.ff_mult * d) + _linear(cfg.ff_mult * d, d)
        return n + _linear(d, d)                       # proj_out

    def ta(d: int) -> int:
        width = d // cfg.adapter_ratio
        kt, kh, kw = cfg.temporal_kernel
        return _linear(d, width) + width * kt * kh * kw + _linear(width, d)

    def sa(d: int) -> int:
        width = d // cfg.adapter_ratio
        return _linear(d, width) + _linear(width, d)

    sites: list[tuple[int, int]] = []  # (cin, cout) per residual block
    prev = cfg.widths[0]
    for i, w in enumerate(cfg.widths):
        for b in range(cfg.blocks_per_res):
            sites.append((prev if b == 0 else w, w))
        prev = w
        if i + 1 < len(cfg.widths):
            base += _conv(w, w, 3)
    for i in reversed(range(len(cfg.widths) - 1)):
        w = cfg.widths[i]
        base += _conv(cfg.widths[i + 1], w, 3)
        for b in range(cfg.blocks_per_res):
            sites.append((2 * w if b == 0 else w, w))
    for cin, cout in sites:
        base += res(cin, cout) + xf(cout)
        if video:
            adapters += ta(cout) * cfg.temporal_adapter
            adapters += sa(cout) * (cfg.attn_adapter + cfg.ffn_adapter)
    base += 2 * cfg.widths[0] + _conv(cfg.widths[0], cfg.latent_channels, 3)
    return {"base": base, "adapters": adapters, "total": base + adapters}


def with_overrides(cfg: DenoiserConfig, **kw) -> DenoiserConfig:
    return replace(cfg, **kw)
