"""Latent-shift attention: keys/values from the current frame plus a composite
frame whose tokens are pulled from preceding frames.

Token tensors are laid out ``[..., L, N, d]`` (frames, tokens, channels).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, DimensionError
from .numerics import softmax


@dataclass(frozen=True)
class ShiftSpec:
    window: int = 2

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError(f"shift window must be >= 1, got {self.window}")

    def offset(self, p: int) -> int:
        """Frames to look back for spatial token ``p``; cycles through 1..window."""
        return 1 + p % self.window

    def offsets(self, n_tokens: int) -> torch.Tensor:
        return 1 + torch.arange(n_tokens) % self.window


def shift_source_index(L: int, N: int, spec: ShiftSpec) -> torch.Tensor:
    """``[L, N]`` table of source frames: max(i - off(p), 0)."""
    i = torch.arange(L).unsqueeze(1)
    return (i - spec.offsets(N).unsqueeze(0)).clamp(min=0)


def temporal_shift_compose(x: torch.Tensor, spec: ShiftSpec) -> torch.Tensor:
    """out[i, p] = x[max(i - off(p), 0), p] along the frame axis (-3)."""
    if x.ndim < 3:
        raise DimensionError(f"expected [..., L, N, d], got {tuple(x.shape)}")
    L, N, d = x.shape[-3:]
    src = shift_source_index(L, N, spec)
    idx = src.reshape(*([1] * (x.ndim - 3)), L, N, 1).expand(*x.shape[:-3], L, N, d)
    return torch.gather(x, -3, idx)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Multi-head attention over the token axis; q ``[..., Nq, d]``, k/v ``[..., Nk, d]``."""
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    qh = q.unflatten(-1, (heads, dh)).transpose(-3, -2)
    kh = k.unflatten(-1, (heads, dh)).transpose(-3, -2)
    vh = v.unflatten(-1, (heads, dh)).transpose(-3, -2)
    w = softmax(qh @ kh.transpose(-1, -2) * dh ** -0.5, axis=-1)
    return (w @ vh).transpose(-3, -2).flatten(-2)


class SelfAttention(nn.Module):
    """Q/K/V/output projections shared by every attention variant.

    ``mode`` picks how keys and values are formed; switching it never adds
    parameters.
    """

    MODES = ("framewise", "lsa", "global_st")

    def __init__(self, d: int, heads: int = 1, mode: str = "framewise",
                 spec: ShiftSpec | None = None):
        super().__init__()
        self.d, self.heads = d, heads
        self.to_q = nn.Linear(d, d, bias=False)
        self.to_k = nn.Linear(d, d, bias=False)
        self.to_v = nn.Linear(d, d, bias=False)
        self.to_out = nn.Linear(d, d)
        self.spec = spec or ShiftSpec()
        self.set_mode(mode)

    def set_mode(self, mode: str, spec: ShiftSpec | None = None) -> None:
        if mode not in self.MODES:
            raise ConfigError(f"unknown attention mode {mode!r}")
        self.mode = mode
        if spec is not None:
            self.spec = spec

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.d:
            raise DimensionError(f"expected width {self.d}, got {tuple(x.shape)}")
        if self.mode == "framewise":
            return framewise_attention(x, self)
        if self.mode == "lsa":
            return lsa_forward(x, self, self.spec)
        return global_attention(x, self)


def framewise_attention(x: torch.Tensor, w: SelfAttention) -> torch.Tensor:
    """Plain self-attention within each frame (``[..., N, d]``)."""
    out = scaled_dot_attention(w.to_q(x), w.to_k(x), w.to_v(x), w.heads)
    return w.to_out(out)


def lsa_forward(x: torch.Tensor, w: SelfAttention, spec: ShiftSpec) -> torch.Tensor:
    """Each frame attends over [own tokens || shifted composite tokens] (2N keys)."""
    if x.ndim < 3:
        raise DimensionError(f"latent-shift attention needs [..., L, N, d], got {tuple(x.shape)}")
    kv = torch.cat([x, temporal_shift_compose(x, spec)], dim=-2)
    out = scaled_dot_attention(w.to_q(x), w.to_k(kv), w.to_v(kv), w.heads)
    return w.to_out(out)


def global_attention(x: torch.Tensor, w: SelfAttention) -> torch.Tensor:
    """Joint space-time attention over all L*N tokens."""
    L, N, d = x.shape[-3:]
    flat = x.reshape(*x.shape[:-3], L * N, d)
    out = scaled_dot_attention(w.to_q(flat), w.to_k(flat), w.to_v(flat), w.heads)
    return w.to_out(out).reshape(x.shape)


def attention_cost(L: int, N: int, d: int, variant: str) -> int:
    """Multiply-accumulates for attention scores plus value aggregation."""
    if min(L, N, d) < 1:
        raise ConfigError("attention extents must be positive")
    if variant == "global_st":
        return 2 * (L * N) ** 2 * d
    if variant == "framewise":
        return 2 * L * N * N * d
    if variant == "lsa":
        return 2 * L * N * (2 * N) * d
    raise ConfigError(f"unknown attention variant {variant!r}")
