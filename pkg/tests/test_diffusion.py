import numpy as np
import pytest

from pliant import diffusion as dif
from pliant.errors import StepOrderViolation, StepOutOfRange, UnknownScheduleKind


class OracleModel:
    """Denoiser stub that always returns a fixed clean chunk."""

    def __init__(self, chunk):
        self.chunk = np.asarray(chunk, dtype=np.float64)
        self.horizon, self.action_dim = self.chunk.shape

    def predict_clean_chunk(self, noisy, n, tokens):
        return self.chunk


def test_alpha_bar_boundary_convention():
    for kind in dif.SCHEDULE_KINDS:
        sched = dif.build_schedule(kind, 50)
        assert sched.alpha_bar[0] == 1.0


def test_squared_cosine_matches_direct_formula_evaluation():
    # independent oracle: evaluate the clamped-cosine construction directly
    n = 100
    s = 0.008
    f = np.cos((np.arange(n + 1) / n + s) / (1 + s) * np.pi / 2) ** 2
    betas = np.minimum(1 - f[1:] / f[:-1], 0.999)
    want = np.concatenate([[1.0], np.cumprod(1 - betas)])
    sched = dif.build_schedule("squared_cosine", n)
    np.testing.assert_allclose(sched.alpha_bar, want, rtol=1e-12)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[-1] < 0.01


def test_linear_schedule_invariants():
    for n in (2, 10, 100, 1000):
        sched = dif.build_schedule("linear", n)
        assert sched.alpha_bar.shape == (n + 1,)
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert 0 < sched.alpha_bar[-1] < 0.01


def test_minimal_two_step_schedule():
    sched = dif.build_schedule("squared_cosine", 2)
    assert sched.alpha_bar.shape == (3,)
    assert sched.alpha_bar[0] == 1.0


def test_unknown_kind():
    with pytest.raises(UnknownScheduleKind):
        dif.build_schedule("exponential", 10)


# ---------------------------------------------------------------------------
# forward noising


def test_forward_noise_step_zero_is_identity():
    sched = dif.build_schedule("squared_cosine", 10)
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(4, 16))
    eps = rng.normal(size=(4, 16))
    np.testing.assert_array_equal(dif.forward_noise(a0, 0, eps, sched), a0)


def test_forward_noise_terminal_step_is_mostly_noise():
    sched = dif.build_schedule("squared_cosine", 100)
    rng = np.random.default_rng(1)
    a0 = rng.normal(size=(8, 16))
    eps = rng.normal(size=(8, 16))
    out = dif.forward_noise(a0, 100, eps, sched)
    bound = np.sqrt(sched.alpha_bar[-1]) * np.linalg.norm(a0) + 1e-12
    diff = np.linalg.norm(out - np.sqrt(1 - sched.alpha_bar[-1]) * eps)
    assert diff <= bound


def test_forward_noise_step_out_of_range():
    sched = dif.build_schedule("squared_cosine", 10)
    with pytest.raises(StepOutOfRange):
        dif.forward_noise(np.zeros((2, 16)), 11, np.zeros((2, 16)), sched)


def test_forward_noise_variance_monte_carlo():
    # MC oracle: Var(a^n) = ab_n Var(a0) + (1 - ab_n) for unit-variance eps
    sched = dif.build_schedule("squared_cosine", 100)
    rng = np.random.default_rng(2)
    n_samples = 100_000
    sigma0 = 1.7
    for n in (25, 50, 90):
        a0 = rng.normal(scale=sigma0, size=n_samples)
        eps = rng.normal(size=n_samples)
        out = dif.forward_noise(a0, n, eps, sched)
        want = sched.alpha_bar[n] * sigma0 ** 2 + (1 - sched.alpha_bar[n])
        assert abs(out.var() / want - 1.0) < 0.02


# ---------------------------------------------------------------------------
# training loss


def test_loss_zero_for_perfect_oracle():
    sched = dif.build_schedule("squared_cosine", 10)
    rng = np.random.default_rng(3)
    a0 = rng.normal(size=(4, 16))
    model = OracleModel(a0)
    loss = dif.training_loss(a0, 5, rng.normal(size=(4, 16)), None, model, sched)
    assert loss.item() == 0.0


def test_loss_constant_offset_is_c_squared():
    sched = dif.build_schedule("squared_cosine", 10)
    rng = np.random.default_rng(4)
    a0 = rng.normal(size=(4, 16))
    c = 0.37
    model = OracleModel(a0 + c)
    loss = dif.training_loss(a0, 3, rng.normal(size=(4, 16)), None, model, sched)
    assert abs(loss.item() - c * c) < 1e-12


def test_loss_matches_independent_mse():
    sched = dif.build_schedule("squared_cosine", 10)
    rng = np.random.default_rng(5)
    a0 = rng.normal(size=(4, 16))
    pred = rng.normal(size=(4, 16))
    model = OracleModel(pred)
    loss = dif.training_loss(a0, 7, rng.normal(size=(4, 16)), None, model, sched)
    want = float(np.mean((a0 - pred) ** 2))  # second implementation
    assert abs(loss.item() - want) < 1e-12


# ---------------------------------------------------------------------------
# ddim updates


def test_ddim_to_zero_returns_estimate_exactly():
    sched = dif.build_schedule("squared_cosine", 100)
    rng = np.random.default_rng(6)
    a_n = rng.normal(size=(4, 16))
    a0_hat = rng.normal(size=(4, 16))
    out = dif.ddim_step(a_n, a0_hat, 40, 0, sched)
    np.testing.assert_array_equal(out, a0_hat)


def test_ddim_oracle_identity_with_forward_noise():
    # with a perfect estimate, stepping to n_prev equals re-noising the true
    # chunk with the recovered eps
    sched = dif.build_schedule("squared_cosine", 100)
    rng = np.random.default_rng(7)
    for _ in range(50):
        a0 = rng.normal(size=(3, 16))
        eps = rng.normal(size=(3, 16))
        n = int(rng.integers(2, 101))
        n_prev = int(rng.integers(1, n))
        a_n = dif.forward_noise(a0, n, eps, sched)
        out = dif.ddim_step(a_n, a0, n, n_prev, sched)
        want = dif.forward_noise(a0, n_prev, eps, sched)
        np.testing.assert_allclose(out, want, atol=1e-9)


def test_forward_then_ddim_to_zero_recovers_clean_chunk_for_all_n():
    sched = dif.build_schedule("squared_cosine", 100)
    rng = np.random.default_rng(12)
    a0 = rng.normal(size=(4, 16))
    eps = rng.normal(size=(4, 16))
    for n in range(1, 101):
        a_n = dif.forward_noise(a0, n, eps, sched)
        out = dif.ddim_step(a_n, a0, n, 0, sched)
        np.testing.assert_allclose(out, a0, atol=1e-9)


def test_ddim_fixed_point_when_alpha_bars_equal():
    # pure-algebra case on a hand-made schedule with equal entries
    sched = dif.NoiseSchedule(2, np.array([1.0, 0.5, 0.5]))
    rng = np.random.default_rng(8)
    a_n = rng.normal(size=(2, 16))
    out = dif.ddim_step(a_n, a_n, 2, 1, sched)
    np.testing.assert_allclose(out, a_n, atol=1e-12)


def test_ddim_step_order_violation():
    sched = dif.build_schedule("squared_cosine", 10)
    z = np.zeros((2, 16))
    with pytest.raises(StepOrderViolation):
        dif.ddim_step(z, z, 3, 3, sched)
    with pytest.raises(StepOrderViolation):
        dif.ddim_step(z, z, 3, 5, sched)
    with pytest.raises(StepOrderViolation):
        dif.ddim_step(z, z, 11, 2, sched)


# ---------------------------------------------------------------------------
# sampler


def test_sample_with_fixed_oracle_returns_chunk_any_step_count():
    sched = dif.build_schedule("squared_cosine", 100)
    chunk = np.random.default_rng(9).normal(size=(48, 16))
    model = OracleModel(chunk)
    for k in (1, 2, 10, 100):
        out = dif.sample(model, None, sched, k, rng=123)
        np.testing.assert_allclose(out, chunk, atol=1e-9)


def test_sample_deterministic_given_seed():
    sched = dif.build_schedule("squared_cosine", 50)
    chunk = np.random.default_rng(10).normal(size=(8, 16))

    class NoisyOracle(OracleModel):
        def predict_clean_chunk(self, noisy, n, tokens):
            return 0.5 * self.chunk + 0.1 * noisy

    model = NoisyOracle(chunk)
    a = dif.sample(model, None, sched, 10, rng=7)
    b = dif.sample(model, None, sched, 10, rng=7)
    np.testing.assert_array_equal(a, b)
    c = dif.sample(model, None, sched, 10, rng=8)
    assert np.abs(a - c).max() > 1e-6


def test_sample_step_count_bounds():
    sched = dif.build_schedule("squared_cosine", 10)
    model = OracleModel(np.zeros((2, 16)))
    with pytest.raises(StepOutOfRange):
        dif.sample(model, None, sched, 0, rng=0)
    with pytest.raises(StepOutOfRange):
        dif.sample(model, None, sched, 11, rng=0)
