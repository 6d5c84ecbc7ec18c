"""Mixture test bed and denoiser checks.

The posterior-mean formula is cross-checked two independent ways: against
self-normalized importance sampling (proposals from the prior, likelihood
weights) and against the score identity
xhat0 = (x_t + sigma_t^2 grad log p_t(x_t)) / alpha_t.
"""

import numpy as np
import pytest

from guidefit.denoisers import (AnalyticDenoiser, CorruptedDenoiser, CorruptionSpec,
                                DenoiserTrainConfig, MogSpec, corrupt_mog,
                                log_responsibilities, mixture_log_density,
                                mixture_score, posterior_mean,
                                train_neural_denoiser)
from guidefit.nn import flatten_params
from guidefit.rng import stream
from guidefit.schedule import NoiseSchedule


def is_posterior_mean(spec, x_t, t, c, n, rng):
    """Importance-sampling estimate of E[x0 | x_t, c] with a delta-method SE.

    Proposals come from the prior (component c, or the full mixture when c is
    None), weighted by the forward likelihood N(x_t; alpha_t x0, sigma_t^2 I).
    """
    sched = NoiseSchedule()
    alpha, sigma = sched.alpha_sigma(t)
    if c is None:
        x0, _ = spec.sample_joint(n, rng)
    else:
        x0 = spec.means[c] + np.sqrt(spec.variances[c]) * rng.standard_normal((n, spec.dim))
    log_w = -0.5 * np.sum((x_t - alpha * x0) ** 2, axis=1) / sigma**2
    w = np.exp(log_w - log_w.max())
    w = w / w.sum()
    mean = w @ x0
    se = np.sqrt(np.sum(w[:, None] ** 2 * (x0 - mean) ** 2, axis=0))
    return mean, se


def test_mog_spec_validation():
    with pytest.raises(ValueError):
        MogSpec(means=np.zeros((2, 2)), variances=np.array([1.0]), weights=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        MogSpec(means=np.zeros((2, 2)), variances=np.array([1.0, -1.0]),
                weights=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        MogSpec(means=np.zeros((2, 2)), variances=np.array([1.0, 1.0]),
                weights=np.array([0.5, 0.6]))


def test_default_mixture_layout(mog):
    assert mog.n_classes == 4
    assert mog.dim == 2
    assert mog.variances[0] == 5.0
    assert np.all(np.abs(mog.means) == 10.0)


def test_sample_joint_class_frequencies(mog):
    n = 20_000
    _, c = mog.sample_joint(n, stream(0, "test/joint"))
    freq = np.bincount(c, minlength=4) / n
    tol = 4.0 * np.sqrt(0.25 * 0.75 / n)
    assert np.max(np.abs(freq - 0.25)) < tol


def test_log_responsibilities_normalized(mog):
    x = stream(1, "test/resp").uniform(-15.0, 15.0, size=(50, 2))
    logr = log_responsibilities(mog, NoiseSchedule(), x, 0.5)
    assert logr.shape == (50, 4)
    assert np.allclose(np.exp(logr).sum(axis=1), 1.0, atol=1e-12)


def test_mixture_log_density_matches_direct_sum(mog):
    x = stream(2, "test/dens").uniform(-12.0, 12.0, size=(20, 2))
    direct = np.zeros(20)
    for k in range(4):
        var = mog.variances[k]
        sq = np.sum((x - mog.means[k]) ** 2, axis=1)
        direct += mog.weights[k] * np.exp(-0.5 * sq / var) / (2.0 * np.pi * var)
    assert np.allclose(mixture_log_density(mog, x), np.log(direct), atol=1e-10)


def test_mixture_score_matches_finite_differences(mog):
    x = stream(3, "test/score").uniform(-12.0, 12.0, size=(10, 2))
    for t in (0.0, 0.4, 0.8):
        score = mixture_score(mog, x, t)
        h = 1e-6
        for j in range(2):
            xp = x.copy()
            xp[:, j] += h
            xm = x.copy()
            xm[:, j] -= h
            fd = (mixture_log_density(mog, xp, t) - mixture_log_density(mog, xm, t)) / (2.0 * h)
            assert np.max(np.abs(score[:, j] - fd)) < 1e-6


def test_posterior_mean_matches_importance_sampling(mog):
    rng = stream(4, "test/is")
    for trial in range(2):
        x0, c = mog.sample_joint(1, rng)
        t = rng.uniform(0.45, 0.9)
        x_t = (1.0 - t) * x0[0] + t * rng.standard_normal(2)
        for cond in (int(c[0]), None):
            est, se = is_posterior_mean(mog, x_t, t, cond, 200_000, rng)
            exact = posterior_mean(mog, x_t, t, cond)
            assert np.all(np.abs(est - exact) < 4.0 * se + 1e-12)


def test_posterior_mean_score_identity(mog):
    # xhat0 = (x + sigma^2 score) / alpha on a grid of points and times
    sched = NoiseSchedule()
    grid = np.linspace(-14.0, 14.0, 7)
    x = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
    for t in (0.1, 0.3, 0.5, 0.7, 0.9):
        alpha, sigma = sched.alpha_sigma(t)
        tweedie = (x + sigma**2 * mixture_score(mog, x, t)) / alpha
        assert np.max(np.abs(posterior_mean(mog, x, t) - tweedie)) < 1e-8


def test_posterior_mean_single_point_and_scalar_class(mog):
    x = np.array([3.0, -2.0])
    out = posterior_mean(mog, x, 0.6, 2)
    assert out.shape == (2,)
    batch = posterior_mean(mog, x[None], 0.6, np.array([2]))
    assert np.array_equal(out, batch[0])


def test_posterior_mean_collapses_to_data_at_small_noise(mog):
    # at t -> 0 the conditional posterior mean approaches x_t itself
    x0, c = mog.sample_joint(20, stream(5, "test/small_t"))
    out = posterior_mean(mog, x0, 1e-6, c)
    assert np.max(np.abs(out - x0)) < 1e-3


def test_corrupt_mog_scales_means_and_renormalizes(mog):
    corr = CorruptionSpec(mean_shrink=0.5, weight_skew=0.3, seed=7)
    bad = corrupt_mog(mog, corr)
    assert np.allclose(bad.means, 0.5 * mog.means, atol=1e-15)
    assert bad.weights.sum() == pytest.approx(1.0)
    assert not np.allclose(bad.weights, mog.weights)


def test_corrupted_denoiser_zero_field_is_analytic_of_corrupted_spec(mog):
    corr = CorruptionSpec(mean_shrink=0.7, weight_skew=0.2, noise_scale=0.0, seed=3)
    den = CorruptedDenoiser(mog, corr)
    ref = AnalyticDenoiser(corrupt_mog(mog, corr))
    x = stream(6, "test/corr").uniform(-10.0, 10.0, size=(30, 2))
    assert np.array_equal(den.denoise(x, 0.5, None), ref.denoise(x, 0.5, None))
    c = np.tile(np.arange(4), 8)[:30]
    assert np.array_equal(den.denoise(x, 0.5, c), ref.denoise(x, 0.5, c))


def test_corrupted_denoiser_field_is_deterministic_and_bounded(mog):
    corr = CorruptionSpec(mean_shrink=1.0, weight_skew=0.0, noise_scale=0.4, seed=3)
    den1 = CorruptedDenoiser(mog, corr)
    den2 = CorruptedDenoiser(mog, corr)
    clean = AnalyticDenoiser(mog)
    x = stream(7, "test/field").uniform(-10.0, 10.0, size=(30, 2))
    out1 = den1.denoise(x, 0.5, None)
    assert np.array_equal(out1, den2.denoise(x, 0.5, None))
    # sinusoidal field stays within noise_scale per coordinate
    assert np.max(np.abs(out1 - clean.denoise(x, 0.5, None))) <= 0.4 + 1e-12


def test_denoiser_train_config_validation():
    with pytest.raises(ValueError):
        DenoiserTrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        DenoiserTrainConfig(cond_dropout=1.5)


def test_neural_denoiser_training_reduces_loss(mog):
    model, losses = train_neural_denoiser(
        mog, DenoiserTrainConfig(iterations=120, batch_size=64, learning_rate=1e-3, seed=0))
    assert losses.shape == (120,)
    assert losses[-10:].mean() < losses[:10].mean()
    out = model.denoise(np.zeros((3, 2)), 0.5, np.array([0, 1, 2]))
    assert out.shape == (3, 2)
    assert np.all(np.isfinite(out))
    single = model.denoise(np.zeros(2), 0.5, 1)
    assert single.shape == (2,)


def test_neural_denoiser_training_is_deterministic(mog):
    config = DenoiserTrainConfig(iterations=20, batch_size=32, seed=5)
    m1, l1 = train_neural_denoiser(mog, config)
    m2, l2 = train_neural_denoiser(mog, config)
    assert np.array_equal(l1, l2)
    assert np.array_equal(flatten_params(m1.net.parameters()),
                          flatten_params(m2.net.parameters()))
