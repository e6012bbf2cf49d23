import math

import numpy as np
import pytest
import torch

from hiermotion.diffusion import (DenoiserData, DenoiserTransformer, make_schedule, posterior_coefficients,
                                  posterior_step, predict_length, q_sample, sample, train_denoiser, x0_loss)
from hiermotion.nn import grad_check_module

D = torch.float64


def tiny(data_dim=3, cond=None, frame=0, n_max=0, max_len=8, dim=16, blocks=1):
    cond = {"a": 4, "b": 2} if cond is None else cond
    return DenoiserTransformer(data_dim, cond, frame, max_len, dim=dim, heads=2, blocks=blocks, n_max=n_max)


def test_schedule_single_step():
    s = make_schedule(1, 0.5, 0.5)
    assert s.alpha_bars[0] == 0.5


def test_schedule_small_beta_limit():
    s = make_schedule(10, 1e-12, 1e-12)
    np.testing.assert_allclose(s.alpha_bars, 1.0, atol=1e-10)


def test_schedule_direct_product_oracle():
    s = make_schedule(100, 1e-4, 0.02)
    direct = 1.0
    for t in range(100):
        direct *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 99)
    assert abs(s.alpha_bars[-1] - direct) < 1e-14


def test_default_schedule_invariants():
    s = make_schedule()
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[-1] < 0.05


@pytest.mark.parametrize("args", [(0, 1e-3, 0.2), (10, 0.0, 0.1), (10, 0.3, 0.2), (10, 0.1, 1.0)])
def test_schedule_rejects_bad_bounds(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_q_sample_limits():
    s = make_schedule(10, 1e-12, 1e-12)
    x0 = np.random.default_rng(0).normal(size=(4, 3))
    eps = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_allclose(q_sample(x0, 1, eps, s), x0, atol=1e-5)
    s = make_schedule()
    out = q_sample(np.zeros((4, 3)), 50, eps, s)
    np.testing.assert_allclose(out, math.sqrt(1 - s.alpha_bar(50)) * eps, atol=1e-15)


def test_q_sample_rejects_bad_t():
    s = make_schedule()
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), 0, np.zeros(3), s)
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), 101, np.zeros(3), s)


def test_q_sample_moments():
    s = make_schedule()
    rng = np.random.default_rng(3)
    n = 100_000
    for t in (1, 50, 100):
        x = q_sample(np.full(n, 0.7), t, rng.standard_normal(n), s)
        ab = s.alpha_bar(t)
        se_mean = math.sqrt((1 - ab) / n)
        se_var = (1 - ab) * math.sqrt(2 / (n - 1))
        assert abs(x.mean() - math.sqrt(ab) * 0.7) < 3 * se_mean
        assert abs(x.var(ddof=1) - (1 - ab)) < 3 * se_var


def test_posterior_t1_is_mean():
    s = make_schedule(10)
    x_t, x0 = torch.randn(2, 3, dtype=D), torch.randn(2, 3, dtype=D)
    a = posterior_step(x_t, x0, 1, s, np.random.default_rng(0))
    b = posterior_step(x_t, x0, 1, s, np.random.default_rng(99))
    assert torch.equal(a, b)
    c0, ct, _ = posterior_coefficients(1.0, s.alpha_bar(1), s.betas[0])
    np.testing.assert_allclose(a, c0 * x0 + ct * x_t, atol=1e-15)
    # at t = 1 the posterior mean is exactly x0
    np.testing.assert_allclose(a, x0, atol=1e-12)


def test_posterior_fixed_point():
    # alpha_bar_{t-1} = alpha_bar_t means beta_t -> 0
    c0, ct, var = posterior_coefficients(0.5, 0.5, 0.0)
    assert c0 == 0 and ct == 1 and var == 0


def test_posterior_coefficients_symbolic_oracle():
    import sympy as sp

    T = 10
    s = make_schedule(T, 1e-3, 0.2)
    betas = [sp.Rational(1, 1000) + (sp.Rational(1, 5) - sp.Rational(1, 1000)) * sp.Rational(i, T - 1)
             for i in range(T)]
    for t in range(2, T + 1):
        ab_t = sp.prod([1 - b for b in betas[:t]])
        ab_p = sp.prod([1 - b for b in betas[:t - 1]])
        bt = betas[t - 1]
        c0 = sp.sqrt(ab_p) * bt / (1 - ab_t)
        ct = sp.sqrt(1 - bt) * (1 - ab_p) / (1 - ab_t)
        var = (1 - ab_p) / (1 - ab_t) * bt
        got = posterior_coefficients(s.alpha_bar(t - 1), s.alpha_bar(t), s.betas[t - 1])
        for g, ref in zip(got, (c0, ct, var)):
            assert abs(float(g) - float(sp.N(ref, 30))) < 1e-13


def test_posterior_step_rejects_bad_t():
    s = make_schedule(10)
    with pytest.raises(ValueError):
        posterior_step(torch.zeros(1), torch.zeros(1), 11, s, np.random.default_rng(0))


def test_denoiser_shapes_and_frame_condition_count():
    m = tiny(frame=5)
    cond = {"a": torch.randn(2, 4), "b": torch.randn(2, 2)}
    out = m(torch.randn(2, 7, 3), torch.tensor([3, 4]), cond, torch.randn(2, 7, 5))
    assert out.shape == (2, 7, 3)
    with pytest.raises(ValueError):
        m(torch.randn(2, 7, 3), torch.tensor([3, 4]), cond, torch.randn(2, 6, 5))
    with pytest.raises(ValueError):
        m(torch.randn(2, 9, 3), torch.tensor([3, 4]), cond, torch.randn(2, 9, 5))


def test_x0_loss_zero_for_perfect_model():
    class Echo(torch.nn.Module):
        def __init__(self, target):
            super().__init__()
            self.target = target

        def forward(self, x_t, t, cond, fc=None, km=None):
            return self.target

    x0 = torch.randn(2, 4, 3, dtype=D)
    s = make_schedule()
    loss = x0_loss(Echo(x0), x0, {}, np.array([5, 80]), torch.randn_like(x0), s)
    assert loss.item() == 0.0


def test_x0_loss_grad_check():
    m = tiny(frame=2, dim=8).to(D)
    s = make_schedule()
    x0 = torch.randn(2, 5, 3, dtype=D)
    cond = {"a": torch.randn(2, 4, dtype=D), "b": torch.randn(2, 2, dtype=D)}
    fc = torch.randn(2, 5, 2, dtype=D)
    eps = torch.randn_like(x0)
    t = np.array([7, 60])

    def loss(call):
        pred = call(q_sample(x0, t, eps, s), torch.as_tensor(t), cond, fc)
        return ((pred - x0) ** 2).mean()

    with torch.no_grad():
        ref = x0_loss(m, x0, cond, t, eps, s, fc)
    assert abs(loss(m).item() - ref.item()) < 1e-12
    errs = grad_check_module(m, loss)
    assert max(errs.values()) < 1e-4, errs


def test_x0_loss_nan_aborts():
    m = tiny()
    x0 = torch.full((1, 4, 3), float("nan"))
    with pytest.raises(FloatingPointError):
        x0_loss(m, x0, {"a": torch.zeros(1, 4), "b": torch.zeros(1, 2)}, 3, torch.zeros_like(x0), make_schedule())


def _constant_data(n=16, length=6, value=(0.5, -1.0, 2.0)):
    x = np.tile(np.asarray(value, dtype=np.float32), (n, length, 1))
    rng = np.random.default_rng(0)
    return DenoiserData(x, {"a": rng.normal(size=(n, 4)).astype(np.float32),
                            "b": rng.normal(size=(n, 2)).astype(np.float32)})


def test_overfit_constant_sequence():
    data = _constant_data()
    m = tiny(dim=32)
    s = make_schedule()
    curve = train_denoiser(m, data, s, 400, 16, 3e-3, np.random.default_rng(0))
    assert np.mean([r["x0_loss"] for r in curve[-20:]]) < 1e-3
    m.eval()
    out = sample(m, {k: v[:3] for k, v in data.cond.items()}, 6, s, np.random.default_rng(1))
    assert np.abs(out - np.array([0.5, -1.0, 2.0])).max() < 0.1


def test_sample_shapes_and_determinism():
    m = tiny(max_len=61).eval()
    s = make_schedule(20)
    cond = {"a": np.ones((1, 4)), "b": np.zeros((1, 2))}
    for length in (1, 7, 61):
        assert sample(m, cond, length, s, np.random.default_rng(0)).shape == (1, length, 3)
    a = sample(m, cond, 7, s, np.random.default_rng(5))
    b = sample(m, cond, 7, s, np.random.default_rng(5))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample(m, cond, 0, s, np.random.default_rng(0))


def test_sample_progress_callback():
    m = tiny().eval()
    s = make_schedule(5)
    seen = []
    sample(m, {"a": np.ones((1, 4)), "b": np.zeros((1, 2))}, 3, s, np.random.default_rng(0),
           progress=lambda i, n: seen.append((i, n)))
    assert seen == [(i, 5) for i in range(1, 6)]


def test_predict_length_uniform_logits():
    m = tiny(n_max=12)
    last = m.len_head[-1]
    torch.nn.init.zeros_(last.weight)
    torch.nn.init.zeros_(last.bias)
    from hiermotion.diffusion import length_distribution

    p = length_distribution(m, {"a": np.ones((2, 4)), "b": np.ones((2, 2))})
    np.testing.assert_allclose(p, 1 / 12, atol=1e-12)


def test_predict_length_support():
    m = tiny(n_max=12)
    cond = {"a": np.random.default_rng(0).normal(size=(500, 4)), "b": np.zeros((500, 2))}
    n = predict_length(m, cond, np.random.default_rng(1))
    assert n.min() >= 1 and n.max() <= 12
    with pytest.raises(ValueError):
        predict_length(tiny(), cond, np.random.default_rng(1))
    with pytest.raises(ValueError):
        predict_length(m, cond, np.random.default_rng(1), mode="mode")


def test_length_head_learns_constant():
    n = 32
    rng = np.random.default_rng(0)
    data = DenoiserData(rng.normal(size=(n, 12, 3)).astype(np.float32),
                        {"a": rng.normal(size=(n, 4)).astype(np.float32), "b": rng.normal(size=(n, 2)).astype(np.float32)},
                        lengths=np.full(n, 4), length_targets=np.full(n, 4))
    m = tiny(n_max=12, max_len=12)
    train_denoiser(m, data, make_schedule(), 150, 16, 3e-3, rng)
    m.eval()
    cond = {"a": rng.normal(size=(50, 4)), "b": rng.normal(size=(50, 2))}
    assert np.all(predict_length(m, cond, mode="argmax") == 4)


def test_training_rejects_empty():
    with pytest.raises(ValueError):
        train_denoiser(tiny(), DenoiserData(np.zeros((0, 4, 3)), {"a": np.zeros((0, 4)), "b": np.zeros((0, 2))}),
                       make_schedule(), 1, 1, 1e-3, np.random.default_rng(0))


def test_sampling_never_nan_over_seeds():
    data = _constant_data()
    m = tiny(dim=16)
    s = make_schedule()
    train_denoiser(m, data, s, 50, 8, 1e-3, np.random.default_rng(0))
    m.eval()
    cond = {k: np.repeat(v[:1], 100, 0) for k, v in data.cond.items()}
    out = sample(m, cond, 6, s, np.random.default_rng(7))
    assert np.all(np.isfinite(out))
