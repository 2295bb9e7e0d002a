import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vidadapt.diffusion import (NoiseSchedule, SamplerConfig, ddim_invert, ddim_inverse_step, ddim_sample,
                                ddim_step, make_schedule, predict_x0, q_sample, timestep_sequence,
                                training_loss)
from vidadapt.errors import ConfigError, ModelContractError, RangeError, UsageError


def custom_schedule(alpha_bars):
    ab = torch.tensor([1.0, *alpha_bars], dtype=torch.float64)
    alpha = torch.cat([torch.ones(1, dtype=torch.float64), ab[1:] / ab[:-1]])
    return NoiseSchedule(len(alpha_bars), 1 - alpha, alpha, ab)


def point_mass_model(target, sched):
    """Exact noise predictor when the data distribution is a single point."""
    def model(x, c, t):
        ab = sched.alpha_bar[t].to(x.dtype).reshape(-1, *([1] * (x.ndim - 1)))
        return (x - ab.sqrt() * target) / (1 - ab).sqrt()
    return model


class TestSchedule:
    def test_single_step(self):
        s = make_schedule(1, 1e-4, 1e-4)
        assert s.alpha_bar[1].item() == pytest.approx(0.9999, abs=1e-15)

    def test_monotone_and_recurrence(self):
        s = make_schedule(200, 1e-4, 0.05)
        assert torch.all(s.alpha_bar[1:] < s.alpha_bar[:-1])
        assert torch.allclose(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:], rtol=0, atol=1e-15)
        assert torch.all((s.beta[1:] > 0) & (s.beta[1:] < 1))

    def test_default_against_product_loop(self):
        s = make_schedule(1000, 1e-4, 0.02)
        prod = 1.0
        for i in range(1000):
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999)
        assert abs(s.alpha_bar[1000].item() - prod) <= 1e-8

    @pytest.mark.parametrize("args", [(10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0), (0, 0.1, 0.2)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            make_schedule(*args)


class TestQSample:
    def test_closed_form(self):
        s = custom_schedule([0.25])
        out = q_sample(torch.tensor([1.0, 0.0], dtype=torch.float64), 1,
                       torch.tensor([0.0, 1.0], dtype=torch.float64), s)
        assert torch.allclose(out, torch.tensor([0.5, math.sqrt(0.75)], dtype=torch.float64))
        assert out[1].item() == pytest.approx(0.866025, abs=1e-6)

    def test_zero_signal(self):
        s = make_schedule()
        eps = torch.randn(5)
        assert torch.allclose(q_sample(torch.zeros(5), 400, eps, s), (1 - s.alpha_bar[400]).sqrt().float() * eps)

    def test_near_clean_limit(self):
        s = custom_schedule([1 - 1e-12])
        x0 = torch.randn(6, dtype=torch.float64)
        assert torch.allclose(q_sample(x0, 1, torch.zeros(6, dtype=torch.float64), s), x0, atol=1e-10)

    def test_out_of_range(self):
        s = make_schedule(10)
        with pytest.raises(RangeError):
            q_sample(torch.zeros(2), 11, torch.zeros(2), s)
        with pytest.raises(RangeError):
            q_sample(torch.zeros(2), 0, torch.zeros(2), s)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 1000), st.floats(-3, 3), st.floats(-3, 3))
    def test_affine_in_both_arguments(self, t, a, b):
        s = make_schedule()
        g = torch.Generator().manual_seed(t)
        x1, x2, e1, e2 = (torch.randn(4, dtype=torch.float64, generator=g) for _ in range(4))
        lhs = q_sample(a * x1 + b * x2, t, a * e1 + b * e2, s)
        rhs = a * q_sample(x1, t, e1, s) + b * q_sample(x2, t, e2, s)
        assert torch.allclose(lhs, rhs, atol=1e-10)
        probe = q_sample(torch.ones(1, dtype=torch.float64), t, torch.zeros(1, dtype=torch.float64), s)
        assert probe.item() == pytest.approx(s.alpha_bar[t].sqrt().item(), abs=1e-12)


class TestTrainingLoss:
    def setup_method(self):
        self.s = make_schedule()
        self.x0 = torch.randn(3, 4, 2, 2, dtype=torch.float64)

    def _eps_from(self, x, t):
        ab = self.s.alpha_bar[t].reshape(-1, 1, 1, 1)
        return (x - ab.sqrt() * self.x0) / (1 - ab).sqrt()

    def test_oracle_model_zero_loss(self):
        loss = training_loss(lambda x, c, t: self._eps_from(x, t), self.x0, None, self.s,
                             torch.Generator().manual_seed(0))
        assert loss.item() < 1e-20

    def test_constant_offset(self):
        loss = training_loss(lambda x, c, t: self._eps_from(x, t) + 0.3, self.x0, None, self.s,
                             torch.Generator().manual_seed(0))
        assert loss.item() == pytest.approx(0.09, abs=1e-10)

    def test_zero_model_monte_carlo(self):
        x0 = torch.zeros(10000, 1)
        loss = training_loss(lambda x, c, t: torch.zeros_like(x), x0, None, self.s,
                             torch.Generator().manual_seed(1))
        assert abs(loss.item() - 1.0) <= 0.05

    def test_shape_contract(self):
        with pytest.raises(ModelContractError):
            training_loss(lambda x, c, t: x[:, :1], self.x0, None, self.s, torch.Generator())


class TestDDIMStep:
    def test_exact_eps_recovers_x0(self):
        s = make_schedule()
        x0, eps = torch.randn(8, dtype=torch.float64), torch.randn(8, dtype=torch.float64)
        x_t = q_sample(x0, 700, eps, s)
        assert torch.allclose(predict_x0(x_t, eps, s.alpha_bar[700]), x0, atol=1e-12)
        assert torch.allclose(ddim_step(x_t, eps, 700, 0, s), x0, atol=1e-12)

    def test_degenerate_step(self):
        s = custom_schedule([0.5, 0.5])
        x = torch.randn(5, dtype=torch.float64)
        assert torch.allclose(ddim_step(x, torch.randn(5, dtype=torch.float64), 2, 1, s), x, atol=1e-12)

    def test_inverse_step(self):
        s = make_schedule()
        x_t, eps = torch.randn(16), torch.randn(16)
        x_prev = ddim_step(x_t, eps, 600, 580, s)
        assert torch.allclose(ddim_inverse_step(x_prev, eps, 580, 600, s), x_t, atol=1e-5)

    def test_order_enforced(self):
        s = make_schedule()
        with pytest.raises(UsageError):
            ddim_step(torch.zeros(1), torch.zeros(1), 10, 10, s)

    def test_stochastic_needs_noise(self):
        s = make_schedule()
        with pytest.raises(UsageError):
            ddim_step(torch.zeros(1), torch.zeros(1), 10, 5, s, eta=1.0)


def linear_model(x, c, t):
    return 0.3 * x + 0.01 * t.to(x.dtype).reshape(-1, *([1] * (x.ndim - 1))) / 1000


class TestSampling:
    def test_timesteps(self):
        assert timestep_sequence(4, 1000) == [1000, 750, 500, 250]
        assert timestep_sequence(10, 10) == list(range(10, 0, -1))

    def test_bitwise_determinism(self):
        s = make_schedule()
        cfg = SamplerConfig(50, 0.0, 7)
        a = ddim_sample(linear_model, (2, 3, 4), None, cfg, s)
        b = ddim_sample(linear_model, (2, 3, 4), None, cfg, s)
        assert torch.equal(a, b)
        c = ddim_sample(linear_model, (2, 3, 4), None, SamplerConfig(50, 0.5, 7), s)
        d = ddim_sample(linear_model, (2, 3, 4), None, SamplerConfig(50, 0.5, 7), s)
        assert torch.equal(c, d)

    def test_full_stride_is_dense_trajectory(self):
        s = make_schedule(20, 1e-3, 0.2)
        x = torch.randn((1, 3), generator=torch.Generator().manual_seed(3))
        for t in range(20, 0, -1):
            x = ddim_step(x, linear_model(x, None, torch.tensor([t])), t, t - 1, s)
        out = ddim_sample(linear_model, (1, 3), None, SamplerConfig(20, 0.0, 3), s)
        assert torch.equal(out, x)

    def test_point_mass_oracle_converges(self):
        s = make_schedule()
        target = torch.tensor([[0.5, -0.25, 1.0]])
        out = ddim_sample(point_mass_model(target, s), (1, 3), None, SamplerConfig(50, 0.0, 0), s)
        mae = (out - target).abs().mean().item()
        print(f"point-mass sampling MAE {mae:.2e}")
        assert mae < 1e-4

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            ddim_sample(linear_model, (1,), None, SamplerConfig(2000), make_schedule())


class TestInversion:
    def test_zero_steps_identity(self):
        x0 = torch.randn(2, 3)
        assert torch.equal(ddim_invert(linear_model, x0, None, SamplerConfig(), make_schedule(), num_steps=0), x0)

    def test_eta_rejected(self):
        with pytest.raises(UsageError):
            ddim_invert(linear_model, torch.zeros(1), None, SamplerConfig(eta=0.5), make_schedule())

    def test_round_trip_point_mass(self):
        s = make_schedule()
        target = torch.tensor([[0.3, -0.7, 0.1, 0.9]])
        model = point_mass_model(target, s)
        cfg = SamplerConfig(50, 0.0, 0)
        x_T = ddim_invert(model, target, None, cfg, s)
        back = ddim_sample(model, target.shape, None, cfg, s, x_T=x_T)
        assert (back - target).abs().mean().item() < 1e-4
