"""Gaussian-mixture test bed and the denoisers defined on it.

A denoiser estimates E[x0 | x_t, c] (or E[x0 | x_t] when c is None). Three
implementations share that interface:

  * AnalyticDenoiser: the exact posterior mean of an isotropic Gaussian
    mixture under the forward process, conditional or marginal.
  * CorruptedDenoiser: the analytic denoiser of a deliberately perturbed
    mixture plus a smooth error field, standing in for an under-trained model.
  * NeuralDenoiser: a small MLP trained by denoising score matching with
    conditioning dropout, so one net serves both conditional and
    unconditional queries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import nn
from .rng import stream
from .schedule import NoiseSchedule, noise_sample


@dataclass(frozen=True)
class MogSpec:
    """Isotropic Gaussian mixture: p0(x) = sum_c weights[c] N(x; means[c], variances[c] I)."""

    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K,)
    weights: np.ndarray    # (K,), sums to 1

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.asarray(self.variances, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)
        k = means.shape[0]
        if variances.shape != (k,) or weights.shape != (k,):
            raise ValueError("means, variances, weights must agree on component count")
        if np.any(variances <= 0.0):
            raise ValueError("variances must be positive")
        if np.any(weights < 0.0) or not np.isclose(weights.sum(), 1.0):
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def default_2d(cls) -> "MogSpec":
        """Four well-separated components; the first is broader than the rest."""
        means = np.array([[10.0, 10.0], [-10.0, 10.0], [10.0, -10.0], [-10.0, -10.0]])
        return cls(means=means, variances=np.array([5.0, 1.0, 1.0, 1.0]),
                   weights=np.full(4, 0.25))

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample_joint(self, n: int, rng):
        """Draw (x0, c) with c ~ weights and x0 | c ~ N(means[c], variances[c] I)."""
        c = rng.choice(self.n_classes, size=n, p=self.weights)
        x0 = self.means[c] + np.sqrt(self.variances[c])[:, None] * rng.standard_normal((n, self.dim))
        return x0, c


def _noised_component_stats(spec: MogSpec, schedule: NoiseSchedule, t):
    """Per-component mean alpha_t mu_c and variance alpha_t^2 s_c^2 + sigma_t^2 at time t."""
    alpha, sigma = schedule.alpha_sigma(t)
    alpha = np.asarray(alpha, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    means = np.expand_dims(alpha, (-2, -1)) * spec.means          # (..., K, d)
    var = np.expand_dims(alpha**2, -1) * spec.variances + np.expand_dims(sigma**2, -1)
    return means, var


def log_responsibilities(spec: MogSpec, schedule: NoiseSchedule, x, t):
    """log p(c | x_t) for the noised mixture, shape (n, K). Stable in log space."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    comp_means, comp_var = _noised_component_stats(spec, schedule, t)
    if comp_means.ndim == 2:
        comp_means = comp_means[None]
    if comp_var.ndim == 1:
        comp_var = comp_var[None]
    diff = x[:, None, :] - comp_means                              # (n, K, d)
    sq = np.sum(diff * diff, axis=-1)
    log_joint = (np.log(spec.weights) - 0.5 * sq / comp_var
                 - 0.5 * spec.dim * np.log(2.0 * np.pi * comp_var))
    return log_joint - logsumexp(log_joint, axis=-1, keepdims=True)


def mixture_log_density(spec: MogSpec, x, t=0.0, schedule: NoiseSchedule | None = None):
    """log p_t(x) of the noised mixture; t = 0 gives the data density."""
    schedule = schedule or NoiseSchedule()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    comp_means, comp_var = _noised_component_stats(spec, schedule, t)
    if comp_means.ndim == 2:
        comp_means = comp_means[None]
    if comp_var.ndim == 1:
        comp_var = comp_var[None]
    diff = x[:, None, :] - comp_means
    sq = np.sum(diff * diff, axis=-1)
    log_joint = (np.log(spec.weights) - 0.5 * sq / comp_var
                 - 0.5 * spec.dim * np.log(2.0 * np.pi * comp_var))
    return logsumexp(log_joint, axis=-1)


def mixture_score(spec: MogSpec, x, t=0.0, schedule: NoiseSchedule | None = None):
    """grad_x log p_t(x): responsibility-weighted pull toward the noised means."""
    schedule = schedule or NoiseSchedule()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    resp = np.exp(log_responsibilities(spec, schedule, x, t))      # (n, K)
    comp_means, comp_var = _noised_component_stats(spec, schedule, t)
    if comp_means.ndim == 2:
        comp_means = comp_means[None]
    if comp_var.ndim == 1:
        comp_var = comp_var[None]
    pull = (comp_means - x[:, None, :]) / comp_var[..., None]      # (n, K, d)
    return np.sum(resp[..., None] * pull, axis=1)


def posterior_mean(spec: MogSpec, x_t, t, c=None, schedule: NoiseSchedule | None = None):
    """E[x0 | x_t, c] in closed form; c = None marginalizes over components.

    Per component, the posterior is the Gaussian product
        m_c = (sigma_t^2 mu_c + alpha_t s_c^2 x_t) / (alpha_t^2 s_c^2 + sigma_t^2);
    the marginal mean mixes the m_c with the responsibilities p(c | x_t).

    Args:
        x_t: points of shape (n, d) (a single (d,) point is promoted).
        t: scalar or (n,) array.
        c: None, an int, or an int array of shape (n,).

    Returns:
        array of shape (n, d), or (d,) when a single point was given.
    """
    schedule = schedule or NoiseSchedule()
    x_t = np.asarray(x_t, dtype=float)
    single = x_t.ndim == 1
    x = np.atleast_2d(x_t)
    alpha, sigma = schedule.alpha_sigma(t)
    alpha = np.asarray(alpha, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    comp_var = np.expand_dims(alpha**2, -1) * spec.variances + np.expand_dims(sigma**2, -1)
    if comp_var.ndim == 1:
        comp_var = comp_var[None]
    num = (np.expand_dims(sigma**2, (-2, -1)) * spec.means
           + np.expand_dims(alpha, (-2, -1)) * spec.variances[:, None] * x[:, None, :])
    comp_post = num / comp_var[..., None]                          # (n, K, d)
    if c is None:
        resp = np.exp(log_responsibilities(spec, schedule, x, t))
        out = np.sum(resp[..., None] * comp_post, axis=1)
    else:
        c = np.asarray(c)
        if c.ndim == 0:
            c = np.full(x.shape[0], int(c))
        out = comp_post[np.arange(x.shape[0]), c]
    return out[0] if single else out


class AnalyticDenoiser:
    """Exact posterior-mean denoiser of a Gaussian mixture."""

    def __init__(self, spec: MogSpec, schedule: NoiseSchedule | None = None):
        self.spec = spec
        self.schedule = schedule or NoiseSchedule()

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def dim(self) -> int:
        return self.spec.dim

    def denoise(self, x_t, t, c=None):
        return posterior_mean(self.spec, x_t, t, c, self.schedule)


@dataclass(frozen=True)
class CorruptionSpec:
    """Controlled damage applied to an analytic denoiser.

    mean_shrink pulls component means toward the origin, weight_skew tilts the
    mixture weights by exp(weight_skew * u_c) with u_c drawn once from seed,
    and noise_scale adds a smooth class-dependent sinusoidal error field.
    """

    mean_shrink: float = 1.0
    weight_skew: float = 0.0
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mean_shrink <= 0.0:
            raise ValueError("mean_shrink must be positive")
        if self.noise_scale < 0.0:
            raise ValueError("noise_scale must be nonnegative")


def corrupt_mog(spec: MogSpec, corruption: CorruptionSpec) -> MogSpec:
    """The damaged mixture the corrupted denoiser believes in."""
    rng = stream(corruption.seed, "corruption/weights")
    u = rng.standard_normal(spec.n_classes)
    weights = spec.weights * np.exp(corruption.weight_skew * u)
    weights = weights / weights.sum()
    return replace(spec, means=corruption.mean_shrink * spec.means, weights=weights)


class CorruptedDenoiser:
    """Analytic denoiser of the corrupted mixture plus a smooth error field."""

    def __init__(self, spec: MogSpec, corruption: CorruptionSpec,
                 schedule: NoiseSchedule | None = None):
        self.base_spec = spec
        self.corruption = corruption
        self.spec = corrupt_mog(spec, corruption)
        self.schedule = schedule or NoiseSchedule()
        rng = stream(corruption.seed, "corruption/field")
        n_in = spec.dim + 1 + spec.n_classes
        self._proj = 0.3 * rng.standard_normal((spec.dim, n_in))
        self._phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.dim)

    @property
    def n_classes(self) -> int:
        return self.base_spec.n_classes

    @property
    def dim(self) -> int:
        return self.base_spec.dim

    def denoise(self, x_t, t, c=None):
        x_t = np.asarray(x_t, dtype=float)
        single = x_t.ndim == 1
        x = np.atleast_2d(x_t)
        out = posterior_mean(self.spec, x, t, c, self.schedule)
        if self.corruption.noise_scale > 0.0:
            t_col = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))[:, None]
            onehot = nn.class_onehot(c, self.n_classes, n=x.shape[0])
            feats = np.concatenate([x, t_col, onehot], axis=1)
            out = out + self.corruption.noise_scale * np.sin(feats @ self._proj.T + self._phase)
        return out[0] if single else out


class NeuralDenoiser:
    """MLP denoiser: input [x_t, sinusoidal(logSNR t), one-hot c], output xhat0.

    The null token is the all-zeros one-hot row, so the same net answers
    conditional and unconditional queries.
    """

    def __init__(self, net: nn.Mlp, n_classes: int, time_embed_dim: int = 128,
                 schedule: NoiseSchedule | None = None, logsnr_clip: float = 13.8):
        self.net = net
        self.n_classes = n_classes
        self.time_embed_dim = time_embed_dim
        self.schedule = schedule or NoiseSchedule()
        self.logsnr_clip = logsnr_clip

    @property
    def dim(self) -> int:
        return self.net.sizes[-1]

    def _features(self, x, t, onehot):
        snr = np.clip(self.schedule.logsnr(t), -self.logsnr_clip, self.logsnr_clip)
        snr = np.broadcast_to(np.asarray(snr, dtype=float), (x.shape[0],))
        emb = nn.sinusoidal_embedding(snr, self.time_embed_dim)
        return np.concatenate([x, emb, onehot], axis=1)

    def denoise(self, x_t, t, c=None):
        x_t = np.asarray(x_t, dtype=float)
        single = x_t.ndim == 1
        x = np.atleast_2d(x_t)
        onehot = nn.class_onehot(c, self.n_classes, n=x.shape[0])
        out, _ = self.net.forward(self._features(x, t, onehot))
        return out[0] if single else out


@dataclass(frozen=True)
class DenoiserTrainConfig:
    iterations: int = 10_000
    batch_size: int = 128
    learning_rate: float = 1e-4
    clip_norm: float = 1.0
    hidden: int = 64
    layers: int = 4
    time_embed_dim: int = 128
    cond_dropout: float = 0.1
    time_clamp: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size <= 0:
            raise ValueError("iterations must be >= 0 and batch_size > 0")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError("cond_dropout must lie in [0, 1]")


def train_neural_denoiser(spec: MogSpec, config: DenoiserTrainConfig,
                          schedule: NoiseSchedule | None = None):
    """Fit a NeuralDenoiser by denoising regression on mixture draws.

    Each step draws (x0, c), a time t ~ U[clamp, 1 - clamp], noises x0 to x_t,
    drops the conditioning on a cond_dropout fraction of rows, and regresses
    the net output onto x0 with Adam under global-norm clipping.

    Returns:
        (denoiser, losses) with one loss per iteration.
    """
    schedule = schedule or NoiseSchedule()
    d = spec.dim
    sizes = ([d + config.time_embed_dim + spec.n_classes]
             + [config.hidden] * config.layers + [d])
    net = nn.Mlp.create(sizes, stream(config.seed, "denoiser/init"))
    model = NeuralDenoiser(net, spec.n_classes, config.time_embed_dim, schedule)

    data_rng = stream(config.seed, "denoiser/data")
    time_rng = stream(config.seed, "denoiser/time")
    noise_rng = stream(config.seed, "denoiser/noise")
    drop_rng = stream(config.seed, "denoiser/drop")
    params = net.parameters()
    adam = nn.AdamState.for_params(params, lr=config.learning_rate)

    losses = np.zeros(config.iterations)
    lo, hi = config.time_clamp, 1.0 - config.time_clamp
    for it in range(config.iterations):
        x0, c = spec.sample_joint(config.batch_size, data_rng)
        t = time_rng.uniform(lo, hi, size=config.batch_size)
        x_t, _ = noise_sample(schedule, x0, t, noise_rng)
        onehot = nn.class_onehot(c, spec.n_classes)
        if config.cond_dropout > 0.0:
            onehot[drop_rng.random(config.batch_size) < config.cond_dropout] = 0.0
        pred, tape = net.forward(model._features(x_t, t, onehot))
        resid = pred - x0
        losses[it] = float(np.mean(np.sum(resid * resid, axis=1)))
        grads, _ = net.backward(tape, 2.0 * resid / config.batch_size)
        grads, _ = nn.clip_global_norm(grads, config.clip_norm)
        nn.adam_step(adam, params, grads)
    return model, losses
