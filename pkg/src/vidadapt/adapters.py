"""Bottleneck adapters and the frozen/trainable parameter ledger."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, DimensionError
from .numerics import depthwise_conv3d, gelu

ADAPTER_TAG = "adapter"


def bottleneck_width(d: int, ratio: int) -> int:
    width = d // ratio
    if width < 1:
        raise ConfigError(f"adapter ratio {ratio} leaves no bottleneck for width {d}")
    return width


def _init_linear(layer: nn.Linear, zero: bool, gen: torch.Generator | None) -> None:
    with torch.no_grad():
        if zero:
            layer.weight.zero_()
        else:
            bound = layer.in_features ** -0.5
            layer.weight.copy_(torch.empty_like(layer.weight).uniform_(-bound, bound, generator=gen))
        layer.bias.zero_()


def _channel_map(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor, axis: int) -> torch.Tensor:
    """Pointwise linear map along ``axis`` done as one 2D matmul.

    ``torch.matmul`` picks its batching strategy from ``requires_grad``, which
    changes the rounding; a flat 2D product keeps results independent of it.
    """
    h = x.movedim(axis, -1)
    lead = h.shape[:-1]
    out = h.reshape(-1, h.shape[-1]) @ w.T + b
    return out.reshape(*lead, w.shape[0]).movedim(-1, axis)


def spatial_adapter_apply(x: torch.Tensor, w_down: torch.Tensor, b_down: torch.Tensor,
                          w_up: torch.Tensor, b_up: torch.Tensor) -> torch.Tensor:
    """Functional form: X + (GELU(X W_down^T + b_down)) W_up^T + b_up."""
    if x.shape[-1] != w_down.shape[1] or w_up.shape[0] != x.shape[-1]:
        raise DimensionError(f"input width {x.shape[-1]} does not match adapter weights")
    return x + _channel_map(gelu(_channel_map(x, w_down, b_down, -1)), w_up, b_up, -1)


def temporal_adapter_apply(x: torch.Tensor, w_down: torch.Tensor, b_down: torch.Tensor,
                           kernel: torch.Tensor, w_up: torch.Tensor, b_up: torch.Tensor) -> torch.Tensor:
    """Functional form over ``[..., L, d, H, W]`` with pointwise channel maps."""
    if x.ndim < 4 or x.shape[-3] != w_down.shape[1]:
        raise DimensionError(f"input {tuple(x.shape)} does not match adapter width {w_down.shape[1]}")
    h = depthwise_conv3d(_channel_map(x, w_down, b_down, -3), kernel)
    return x + _channel_map(h, w_up, b_up, -3)


class SpatialAdapter(nn.Module):
    """X + up(GELU(down(X))) on the last axis. The output layer starts at zero."""

    def __init__(self, d: int, width: int, gen: torch.Generator | None = None):
        super().__init__()
        if not 1 <= width < d:
            raise ConfigError(f"bottleneck width must satisfy 1 <= l < d, got l={width}, d={d}")
        self.d = d
        self.down = nn.Linear(d, width)
        self.up = nn.Linear(width, d)
        _init_linear(self.down, zero=False, gen=gen)
        _init_linear(self.up, zero=True, gen=gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.d:
            raise DimensionError(f"expected last extent {self.d}, got {tuple(x.shape)}")
        return spatial_adapter_apply(x, self.down.weight, self.down.bias, self.up.weight, self.up.bias)


class TemporalAdapter(nn.Module):
    """X + up(DWConv3d(down(X))) for videos laid out ``[..., L, C, H, W]``.

    The channel maps act pointwise per (frame, pixel); the depthwise kernel
    defaults to 3x1x1 so it mixes along time only.
    """

    def __init__(self, d: int, width: int, kernel: tuple[int, int, int] = (3, 1, 1),
                 gen: torch.Generator | None = None):
        super().__init__()
        if not 1 <= width < d:
            raise ConfigError(f"bottleneck width must satisfy 1 <= l < d, got l={width}, d={d}")
        if any(k % 2 == 0 for k in kernel):
            raise ConfigError(f"temporal kernel extents must be odd, got {kernel}")
        self.d = d
        self.down = nn.Linear(d, width)
        self.up = nn.Linear(width, d)
        self.kernel = nn.Parameter(torch.empty(width, *kernel))
        _init_linear(self.down, zero=False, gen=gen)
        _init_linear(self.up, zero=True, gen=gen)
        with torch.no_grad():
            fan = kernel[0] * kernel[1] * kernel[2]
            self.kernel.copy_(torch.empty_like(self.kernel).uniform_(-1, 1, generator=gen) / fan ** 0.5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim < 4 or x.shape[-3] != self.d:
            raise DimensionError(f"expected [..., L, {self.d}, H, W], got {tuple(x.shape)}")
        return temporal_adapter_apply(x, self.down.weight, self.down.bias, self.kernel,
                                      self.up.weight, self.up.bias)


@dataclass
class ParamSet:
    """Named parameters with an exhaustive frozen/trainable labelling."""

    entries: dict[str, tuple[torch.Tensor, bool]] = field(default_factory=dict)

    def trainable(self) -> dict[str, torch.Tensor]:
        return {k: t for k, (t, tr) in self.entries.items() if tr}

    def frozen(self) -> dict[str, torch.Tensor]:
        return {k: t for k, (t, tr) in self.entries.items() if not tr}

    def apply(self) -> None:
        """Sync ``requires_grad`` on every tensor with its label."""
        for t, tr in self.entries.values():
            t.requires_grad_(tr)

    def snapshot_frozen(self) -> dict[str, bytes]:
        return {k: t.detach().cpu().numpy().tobytes() for k, t in self.frozen().items()}


def partition_params(model: nn.Module, prefix: str = "") -> ParamSet:
    """Label adapter weights trainable and everything inherited frozen, then apply it."""
    pset = ParamSet()
    for name, p in model.named_parameters():
        if not name or name.split(".")[-1] == "":
            raise ConfigError(f"unnamed parameter of shape {tuple(p.shape)}")
        pset.entries[prefix + name] = (p, ADAPTER_TAG in name)
    pset.apply()
    return pset


def count_params(pset: ParamSet) -> dict[str, float]:
    trainable = sum(t.numel() for t in pset.trainable().values())
    frozen = sum(t.numel() for t in pset.frozen().values())
    total = trainable + frozen
    return {
        "frozen": frozen,
        "trainable": trainable,
        "total": total,
        "fraction": trainable / total if total else 0.0,
    }
