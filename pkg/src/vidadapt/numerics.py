"""Dense tensor primitives on top of torch.

Tensors are plain ``torch.Tensor`` objects and the gradient record is torch's
autograd graph. This module pins the handful of ops the rest of the package
relies on to exact, checkable definitions (erf GELU, zero-padded depthwise
3D convolution, stabilized softmax) and adds the precision/threading switches
and the finite-difference checker used by the tests.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, UsageError

Tensor = torch.Tensor

DEFAULT_DTYPE = torch.float32
CHECK_DTYPE = torch.float64


def set_single_threaded() -> None:
    """Force one intra-op thread so results are reproducible bit for bit."""
    torch.set_num_threads(1)


@contextlib.contextmanager
def precision(dtype: torch.dtype) -> Iterator[None]:
    """Temporarily switch the default floating dtype (64-bit for grad checks)."""
    old = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(old)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner extents differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = shifted.exp()
    return e / e.sum(dim=axis, keepdim=True)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf form (no tanh approximation)."""
    return x * 0.5 * (1.0 + torch.erf(x / math.sqrt(2.0)))


def depthwise_conv3d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 3D convolution with zero padding.

    ``x`` is ``[..., L, C, H, W]`` (any number of leading batch dims) and
    ``kernel`` is ``[C, kT, kH, kW]`` with odd extents. The output keeps the
    input shape. This is a cross-correlation, as in every deep-learning
    framework.
    """
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be [C, kT, kH, kW], got {tuple(kernel.shape)}")
    C, kt, kh, kw = kernel.shape
    if any(k % 2 == 0 for k in (kt, kh, kw)):
        raise ConfigError(f"depthwise kernel extents must be odd, got {(kt, kh, kw)}")
    if x.ndim < 4 or x.shape[-3] != C:
        raise DimensionError(f"expected [..., L, {C}, H, W], got {tuple(x.shape)}")
    lead = x.shape[:-4]
    L, _, H, W = x.shape[-4:]
    v = x.reshape(-1, L, C, H, W).transpose(1, 2).contiguous()  # [B, C, L, H, W]
    out = F.conv3d(v, kernel.unsqueeze(1), padding=(kt // 2, kh // 2, kw // 2), groups=C)
    return out.transpose(1, 2).reshape(*lead, L, C, H, W)


def group_norm(x: Tensor, groups: int, eps: float = 1e-5,
               scale: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Group normalization over ``[N, C, *spatial]``."""
    C = x.shape[1]
    if groups < 1 or C % groups:
        raise ConfigError(f"{C} channels not divisible into {groups} groups")
    return F.group_norm(x, groups, scale, bias, eps)


def backward(loss: Tensor) -> None:
    if loss.numel() != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def finite_difference_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
                            h: float = 1e-3, max_entries: int | None = 24,
                            generator: torch.Generator | None = None) -> float:
    """Compare autograd gradients of scalar ``fn()`` against central differences.

    ``params`` must be leaf tensors with ``requires_grad``; they should be
    64-bit for the comparison to be meaningful. At most ``max_entries``
    randomly chosen coordinates per tensor are probed. Returns the worst
    relative error ``|g_fd - g_ad| / max(|g_fd|, |g_ad|, 1e-6)`` where the
    floor keeps near-zero components from dominating.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            n = flat.numel()
            if max_entries is None or n <= max_entries:
                idx: Iterable[int] = range(n)
            else:
                idx = torch.randperm(n, generator=generator)[:max_entries].tolist()
            gflat = g.view(-1)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                ad = gflat[i].item()
                denom = max(abs(fd), abs(ad), 1e-6)
                worst = max(worst, abs(fd - ad) / denom)
    return worst
