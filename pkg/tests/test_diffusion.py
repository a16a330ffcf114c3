import numpy as np
import pytest

from sdtl import tensor as T
from sdtl.diffusion import (
    ddim_sample, ddim_timesteps, ddpm_step, make_linear_schedule, q_sample, training_loss,
)
from sdtl.errors import ConfigError, ContractError

SCHED = make_linear_schedule(200, 1e-4, 2e-2)


def oracle_model(x0, sched):
    """An eps-model that knows x0 and returns the noise implied by x_t."""
    x0 = np.asarray(x0, dtype=np.float64)

    def model(x_in, t, s2):
        t = int(np.asarray(t).reshape(-1)[0])
        xt = x_in.data[..., :3, :, :].astype(np.float64)
        eps = (xt - sched.sqrt_alpha_bars[t] * x0) / sched.sqrt_one_minus_alpha_bars[t]
        return T.tensor(eps, dtype=x_in.dtype)

    return model


def zero_model(x_in, t, s2):
    return T.zeros_like(x_in[..., :3, :, :])


class TestSchedule:
    def test_endpoints(self):
        assert SCHED.betas[0] == pytest.approx(1e-4, abs=1e-15)
        assert SCHED.betas[-1] == pytest.approx(2e-2, abs=1e-15)
        assert SCHED.T == 200

    def test_alpha_bar_monotone_in_range(self):
        ab = SCHED.alpha_bars
        assert np.all(np.diff(ab) < 0)
        assert np.all((ab > 0) & (ab < 1))

    def test_first_alpha_bar(self):
        assert SCHED.alpha_bars[0] == pytest.approx(1 - 1e-4, abs=1e-15)

    @pytest.mark.parametrize("args", [(0, 1e-4, 2e-2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            make_linear_schedule(*args)


class TestQSample:
    def test_noise_free(self, rng):
        x0 = rng.standard_normal((3, 4, 4))
        out = q_sample(T.tensor(x0, dtype=np.float64), 37, np.zeros_like(x0), SCHED).data
        np.testing.assert_allclose(out, SCHED.sqrt_alpha_bars[37] * x0, rtol=1e-12)

    def test_last_step_dominated_by_noise(self, rng):
        # abar at the last step: 1 - beta product; sqrt(abar) ~ 0.36 for this schedule
        ab_last = np.prod(1 - np.linspace(1e-4, 2e-2, 200))
        assert SCHED.alpha_bars[-1] == pytest.approx(ab_last, rel=1e-12)
        x0 = rng.standard_normal(768)
        x0 /= np.linalg.norm(x0)
        eps = rng.standard_normal(768)
        xt = q_sample(T.tensor(x0, dtype=np.float64), 199, eps, SCHED).data
        assert np.linalg.norm(xt - eps) < np.linalg.norm(xt - x0)

    def test_monte_carlo_moments(self):
        r = np.random.default_rng(0)
        x0 = np.linspace(-1, 1, 12).reshape(3, 2, 2)
        n = 10_000
        for t in (0, 50, 199):
            eps = r.standard_normal((n,) + x0.shape)
            xt = q_sample(T.tensor(np.broadcast_to(x0, eps.shape).copy(), dtype=np.float64),
                          np.full(n, t), eps, SCHED).data
            sigma = SCHED.sqrt_one_minus_alpha_bars[t]
            assert np.all(np.abs(xt.mean(0) - SCHED.sqrt_alpha_bars[t] * x0) <= 3 * sigma / 100)
            assert np.all(np.abs(xt.var(0) / (1 - SCHED.alpha_bars[t]) - 1) <= 0.05)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            q_sample(T.zeros((1, 2, 2)), 200, np.zeros((1, 2, 2)), SCHED)

    def test_per_item_timesteps(self, rng):
        x0 = rng.standard_normal((2, 3, 2, 2))
        eps = rng.standard_normal(x0.shape)
        out = q_sample(T.tensor(x0, dtype=np.float64), np.array([3, 150]), eps, SCHED).data
        for i, t in enumerate((3, 150)):
            np.testing.assert_allclose(out[i], SCHED.sqrt_alpha_bars[t] * x0[i]
                                       + SCHED.sqrt_one_minus_alpha_bars[t] * eps[i], rtol=1e-12)


class TestLoss:
    def test_zero_model_loss_near_one(self):
        r = np.random.default_rng(1)
        x0 = T.tensor(r.uniform(-1, 1, (4, 3, 16, 16)))
        loss, _, eps = training_loss(zero_model, x0, T.zeros(x0.shape), None, SCHED, r)
        assert loss.item() == pytest.approx(float(np.mean(eps.data ** 2)), rel=1e-5)
        assert abs(loss.item() - 1.0) < 0.05

    def test_oracle_model_zero_loss(self, rng):
        x0 = rng.uniform(-1, 1, (3, 8, 8))
        loss, _, _ = training_loss(oracle_model(x0, SCHED), T.tensor(x0), T.zeros((3, 8, 8)), None, SCHED, rng)
        assert loss.item() < 1e-8

    def test_shape_mismatch(self, rng):
        with pytest.raises(ContractError):
            training_loss(zero_model, T.zeros((3, 4, 4)), T.zeros((3, 8, 8)), None, SCHED, rng)


class TestDDPM:
    def test_deterministic_at_zero(self, rng):
        x = T.tensor(rng.standard_normal((3, 4, 4)))
        a = ddpm_step(zero_model, x, 0, T.zeros((3, 4, 4)), None, SCHED, np.random.default_rng(1)).data
        b = ddpm_step(zero_model, x, 0, T.zeros((3, 4, 4)), None, SCHED, np.random.default_rng(2)).data
        np.testing.assert_array_equal(a, b)
        assert a.shape == x.shape

    def test_mean_matches_formula(self, rng):
        x0 = rng.uniform(-1, 1, (3, 4, 4))
        eps = rng.standard_normal(x0.shape)
        t = 120
        with T.precision("float64"):
            xt = q_sample(T.tensor(x0), t, eps, SCHED)
            z = np.random.default_rng(5).standard_normal(x0.shape)
            out = ddpm_step(oracle_model(x0, SCHED), xt, t, T.zeros(x0.shape), None, SCHED,
                            np.random.default_rng(5)).data
        beta = 1e-4 + (2e-2 - 1e-4) * t / 199
        abar = np.prod(1 - np.linspace(1e-4, 2e-2, 200)[:t + 1])
        mu = (xt.data - beta / np.sqrt(1 - abar) * eps) / np.sqrt(1 - beta)
        np.testing.assert_allclose(out, mu + np.sqrt(beta) * z, rtol=1e-9, atol=1e-12)


class TestDDIM:
    def test_timesteps(self):
        seq = ddim_timesteps(200, 10)
        assert seq[0] == 199 and seq[-1] == 0 and len(seq) == 10
        assert np.all(np.diff(seq) < 0)
        np.testing.assert_array_equal(ddim_timesteps(200, 200), np.arange(199, -1, -1))

    def test_too_many_steps(self):
        with pytest.raises(ConfigError):
            ddim_timesteps(200, 300)

    def test_first_step_recovers_x0(self, rng):
        x0 = rng.uniform(-0.9, 0.9, (3, 8, 8))
        trace = []
        with T.precision("float64"):
            out = ddim_sample(oracle_model(x0, SCHED), T.zeros((3, 8, 8)), None, SCHED, 10,
                              np.random.default_rng(0), trace=trace)
        t0, first = trace[0]
        assert t0 == 199
        assert np.max(np.abs(first - x0)) <= 1e-5
        assert np.max(np.abs(out.data - x0)) <= 1e-5
        assert out.shape == (3, 8, 8)

    def test_full_trajectory_deterministic(self, rng):
        cond = T.tensor(rng.standard_normal((3, 4, 4)))
        model = lambda x, t, s: T.scale(x[..., 3:, :, :], 0.1)
        a = ddim_sample(model, cond, None, SCHED, 200, np.random.default_rng(3)).data
        b = ddim_sample(model, cond, None, SCHED, 200, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 1.0)
