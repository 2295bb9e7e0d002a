import math

import numpy as np
import pytest
import torch

from vidadapt.adapters import (ADAPTER_TAG, ParamSet, SpatialAdapter, TemporalAdapter, count_params,
                               partition_params, spatial_adapter_apply, temporal_adapter_apply)
from vidadapt.denoiser import DenoiserConfig, analytic_param_count, build_image_denoiser, inflate_to_video
from vidadapt.errors import ConfigError, DimensionError
from vidadapt.numerics import gelu

from conftest import TINY


def nested_temporal_conv(x, kernel):
    """Direct summation along time with zero padding; x [L, C, H, W], kernel [C, kT]."""
    L, C, H, W = x.shape
    kt = kernel.shape[1]
    out = np.zeros_like(x)
    for l in range(L):
        for c in range(C):
            for j in range(kt):
                src = l + j - kt // 2
                if 0 <= src < L:
                    out[l, c] += kernel[c, j] * x[src, c]
    return out


class TestSpatialAdapter:
    def test_zero_init_is_identity(self):
        a = SpatialAdapter(32, 4, torch.Generator().manual_seed(0))
        x = torch.randn(10, 32)
        assert torch.equal(a(x), x)
        assert torch.count_nonzero(a.up.weight) == 0 and torch.count_nonzero(a.up.bias) == 0

    def test_degenerate_scalar_case(self):
        one = torch.ones(1, 1, dtype=torch.float64)
        zero = torch.zeros(1, dtype=torch.float64)
        out = spatial_adapter_apply(torch.ones(1, 1, dtype=torch.float64), one, zero, one, zero)
        expected = 1 + 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert out.item() == pytest.approx(expected, abs=1e-12)
        assert out.item() == pytest.approx(1.841345, abs=1e-6)

    def test_branch_decomposition(self):
        a = SpatialAdapter(16, 4, torch.Generator().manual_seed(1))
        with torch.no_grad():
            a.up.weight.normal_()
            a.up.bias.normal_()
        x = torch.randn(7, 16, dtype=torch.float32)
        hidden = gelu(x @ a.down.weight.T + a.down.bias)
        branch = hidden @ a.up.weight.T + a.up.bias
        assert torch.allclose(torch.linalg.norm(a(x) - x), torch.linalg.norm(branch), rtol=1e-5)

    def test_width_constraints(self):
        with pytest.raises(ConfigError):
            SpatialAdapter(8, 8)
        with pytest.raises(DimensionError):
            SpatialAdapter(8, 2)(torch.zeros(3, 7))


class TestTemporalAdapter:
    def test_zero_init_is_identity(self):
        a = TemporalAdapter(32, 4, gen=torch.Generator().manual_seed(0))
        x = torch.randn(2, 5, 32, 3, 3)
        assert torch.equal(a(x), x)

    def test_single_frame_center_tap(self):
        d = 3
        x = torch.randn(1, d, 4, 4, dtype=torch.float64)
        eye, zero = torch.eye(d, dtype=torch.float64), torch.zeros(d, dtype=torch.float64)
        for taps in ([0.0, 1.0, 0.0], [1.0, 1.0, 1.0]):
            k = torch.tensor(taps, dtype=torch.float64).repeat(d, 1).reshape(d, 3, 1, 1)
            out = temporal_adapter_apply(x, eye, zero, k, eye, zero)
            assert torch.allclose(out - x, x, atol=1e-12)  # branch reproduces the frame

    def test_linear_motion_against_nested_loop(self):
        L, d, H, W = 6, 4, 5, 5
        x = np.zeros((L, d, H, W))
        for l in range(L):
            x[l, :, 2, min(l, W - 1)] = 1.0  # a dot sliding right
        x += np.linspace(0, 1, d)[None, :, None, None]
        rng = np.random.default_rng(2)
        w_down, w_up = rng.standard_normal((2, d)), rng.standard_normal((d, 2))
        b_down, b_up = rng.standard_normal(2), rng.standard_normal(d)
        kernel = np.full((2, 3), 1 / 3)
        h = np.einsum("lchw,kc->lkhw", x, w_down) + b_down[None, :, None, None]
        h = nested_temporal_conv(h, kernel)
        expected = x + np.einsum("lkhw,ck->lchw", h, w_up) + b_up[None, :, None, None]
        f = lambda a: torch.tensor(a, dtype=torch.float32)
        got = temporal_adapter_apply(f(x), f(w_down), f(b_down), f(kernel).reshape(2, 3, 1, 1), f(w_up), f(b_up))
        np.testing.assert_allclose(got.numpy(), expected, atol=1e-5)
        got64 = temporal_adapter_apply(*(torch.tensor(a) for a in (x, w_down, b_down)),
                                       torch.tensor(kernel).reshape(2, 3, 1, 1), torch.tensor(w_up),
                                       torch.tensor(b_up))
        np.testing.assert_allclose(got64.numpy(), expected, atol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            TemporalAdapter(8, 2, kernel=(2, 1, 1))


class TestPartition:
    def test_default_budget(self):
        video = inflate_to_video(build_image_denoiser(DenoiserConfig()))
        counts = count_params(partition_params(video))
        assert 0.005 <= counts["fraction"] <= 0.05

    def test_no_adapters_no_trainables(self):
        cfg = DenoiserConfig(temporal_adapter=False, attn_adapter=False, ffn_adapter=False)
        video = inflate_to_video(build_image_denoiser(cfg), cfg)
        assert partition_params(video).trainable() == {}

    def test_naming_contract(self):
        pset = partition_params(inflate_to_video(build_image_denoiser(TINY)))
        assert all(ADAPTER_TAG in k for k in pset.trainable())
        assert all(ADAPTER_TAG not in k for k in pset.frozen())
        assert set(pset.trainable()) | set(pset.frozen()) == set(pset.entries)
        assert not set(pset.trainable()) & set(pset.frozen())
        for k, (t, tr) in pset.entries.items():
            assert t.requires_grad == tr


class TestCount:
    def test_single_matrix(self):
        pset = ParamSet({"adapter.w": (torch.zeros(10, 10), True)})
        assert count_params(pset) == {"frozen": 0, "trainable": 100, "total": 100, "fraction": 1.0}

    def test_empty(self):
        assert count_params(ParamSet()) == {"frozen": 0, "trainable": 0, "total": 0, "fraction": 0.0}

    @pytest.mark.parametrize("cfg", [DenoiserConfig(), TINY, DenoiserConfig(widths=(16, 32, 64), blocks_per_res=2)])
    def test_matches_analytic_formula(self, cfg):
        counts = count_params(partition_params(inflate_to_video(build_image_denoiser(cfg))))
        formula = analytic_param_count(cfg, video=True)
        assert counts["total"] == formula["total"]
        assert counts["trainable"] == formula["adapters"]
        assert counts["frozen"] == formula["base"]


def _train_steps(video, steps):
    pset = partition_params(video)
    opt = torch.optim.AdamW(list(pset.trainable().values()), lr=1e-2)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(2, 3, TINY.latent_channels, 4, 4, generator=g)
    text = torch.randn(2, 5, TINY.text_dim, generator=g)
    grads = []
    for _ in range(steps):
        opt.zero_grad()
        loss = ((video(x, text, torch.tensor([10, 500])) - x) ** 2).mean()
        loss.backward()
        grads.append({k: t.grad.clone() for k, t in pset.trainable().items()})
        opt.step()
    return pset, grads


def test_freeze_integrity_and_gradient_reach():
    video = inflate_to_video(build_image_denoiser(TINY))
    before = partition_params(video).snapshot_frozen()
    pset, grads = _train_steps(video, 3)
    assert pset.snapshot_frozen() == before
    # after the first update the zero output layers are non-zero, so every adapter tensor gets signal
    assert all(torch.linalg.norm(g) > 1e-12 for g in grads[1].values())
