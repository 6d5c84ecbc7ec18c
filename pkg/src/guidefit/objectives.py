"""Training objectives for guidance weights, with analytic omega-gradients.

The self-consistency objective compares, for each batch item (x0, c, s, t),
two ways of reaching time s: target particles noised directly from x0, and
proposal particles noised to time t and then pushed back to s by one guided
transition step. Per item with m particles,

    loss = (1/m) sum_j ||xprop_j - xtgt_j||^beta
         - (lam/2) (1/(m(m-1))) sum_{j != k} ||xprop_j - xprop_k||^beta.

The pairing of proposal j with target j in the cross term keeps the estimator
cheap; the dropped target-target term is constant in omega. Proposals are
affine in omega,

    xprop_j(omega) = A xnoisy_j + B (xhat_c_j + omega delta_j) + sqrt(Sigma) xi_j,

so every loss here reports an exact d loss / d omega alongside its value, and
a ParticleBatch caches all draws so losses can be replayed at any omega.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import MogSpec, mixture_log_density, mixture_score
from .schedule import NoiseSchedule, ddim_transition, noise_sample


@dataclass(frozen=True)
class MmdParams:
    """Energy-kernel exponent beta in (0, 2] and repulsion weight lam >= 0."""

    beta: float = 1.75
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 2.0:
            raise ValueError(f"beta must lie in (0, 2], got {self.beta}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class TimePairSampler:
    """Draw training time pairs: s ~ U[s_min, 1 - zeta - delta], t = s + U[delta, 1 - zeta - s]."""

    s_min: float = 0.2
    zeta: float = 1e-2
    delta: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.zeta < 0.5:
            raise ValueError("zeta must lie in (0, 0.5)")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if not self.zeta <= self.s_min:
            raise ValueError("s_min must be at least zeta")
        if self.s_min + self.delta >= 1.0 - self.zeta:
            raise ValueError("need s_min + delta < 1 - zeta")

    def sample(self, n: int, rng):
        s = rng.uniform(self.s_min, 1.0 - self.zeta - self.delta, size=n)
        dt = rng.uniform(self.delta, 1.0 - self.zeta - s)
        return s, s + dt


@dataclass
class ParticleBatch:
    """Cached draws for n batch items with m particles each.

    All m target and m proposal particles of item i share (x0[i], c[i], s[i],
    t[i]). proposals(omega) replays the guided transition at any weight; the
    stored omega is the one the weight function produced at build time.
    """

    x0: np.ndarray          # (n, d)
    c: np.ndarray           # (n,)
    s: np.ndarray           # (n,)
    t: np.ndarray           # (n,)
    targets: np.ndarray     # (n, m, d), x0 noised to s
    prop_noisy: np.ndarray  # (n, m, d), x0 noised to t
    xhat_c: np.ndarray      # (n, m, d), conditional denoiser at prop_noisy
    delta: np.ndarray       # (n, m, d), conditional minus unconditional
    coeff_xt: np.ndarray    # (n,), transition A
    coeff_x0: np.ndarray    # (n,), transition B
    cov_scale: np.ndarray   # (n,), transition Sigma
    trans_noise: np.ndarray  # (n, m, d), xi of the transition
    omega: np.ndarray       # (n,)

    @property
    def n_items(self) -> int:
        return self.x0.shape[0]

    @property
    def n_particles(self) -> int:
        return self.targets.shape[1]

    def _omega(self, omega):
        if omega is None:
            return self.omega
        return np.broadcast_to(np.asarray(omega, dtype=float), (self.n_items,))

    def guided_estimates(self, omega=None):
        """Guided denoiser outputs xhat_c + omega delta at the proposal points."""
        w = self._omega(omega)[:, None, None]
        return self.xhat_c + w * self.delta

    def proposals(self, omega=None):
        """Proposal particles at the stored omega, or at an override."""
        guided = self.guided_estimates(omega)
        mean = self.coeff_xt[:, None, None] * self.prop_noisy + self.coeff_x0[:, None, None] * guided
        return mean + np.sqrt(self.cov_scale)[:, None, None] * self.trans_noise

    def slope(self):
        """d proposals / d omega = B delta, shape (n, m, d)."""
        return self.coeff_x0[:, None, None] * self.delta


def build_particles(x0, c, s, t, m: int, cond, uncond, weight_fn, churn: float,
                    rng, schedule: NoiseSchedule | None = None) -> ParticleBatch:
    """Draw targets, proposals, and the transition pieces for a training batch.

    Args:
        x0: clean points (n, d); a single (d,) point is promoted to n = 1.
        c: class labels (n,) or an int.
        s, t: time pairs, scalars or (n,) arrays with s < t elementwise.
        m: particles per item.
        cond, uncond: denoisers evaluated at the proposal noisy points.
        weight_fn: guidance weight function evaluated at (s, t, c).
        churn: transition noise level in [0, 1].
        rng: all draws (target noise, proposal noise, transition noise, in
            that order) come from this generator.
    """
    if m < 1:
        raise ValueError("need at least one particle")
    schedule = schedule or NoiseSchedule()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    c = np.broadcast_to(np.asarray(c), (n,))
    s = np.broadcast_to(np.asarray(s, dtype=float), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))

    trans = ddim_transition(schedule, s, t, churn)
    targets, _ = noise_sample(schedule, x0[:, None, :], s, noise=rng.standard_normal((n, m, d)))
    prop_noisy, _ = noise_sample(schedule, x0[:, None, :], t, noise=rng.standard_normal((n, m, d)))

    flat = prop_noisy.reshape(n * m, d)
    t_flat = np.repeat(t, m)
    xc = cond.denoise(flat, t_flat, np.repeat(c, m)).reshape(n, m, d)
    xu = uncond.denoise(flat, t_flat, None).reshape(n, m, d)

    omega = np.broadcast_to(np.asarray(weight_fn.weight(s, t, c), dtype=float), (n,))
    return ParticleBatch(
        x0=x0, c=c, s=s, t=t,
        targets=targets, prop_noisy=prop_noisy,
        xhat_c=xc, delta=xc - xu,
        coeff_xt=np.broadcast_to(trans.mean_coeff_xt, (n,)),
        coeff_x0=np.broadcast_to(trans.mean_coeff_x0, (n,)),
        cov_scale=np.broadcast_to(trans.cov_scale, (n,)),
        trans_noise=rng.standard_normal((n, m, d)),
        omega=np.array(omega),
    )


def _pow_and_factor(diff, beta):
    """||diff||^beta and the chain factor beta ||diff||^(beta-2), 0 at diff = 0."""
    sq = np.sum(diff * diff, axis=-1)
    norm = np.sqrt(sq)
    out_pow = norm**beta
    factor = np.zeros_like(norm)
    nz = norm > 0.0
    factor[nz] = beta * norm[nz] ** (beta - 2.0)
    return out_pow, factor


def mmd_loss(batch: ParticleBatch, params: MmdParams, omega=None):
    """Per-item self-consistency loss and d loss / d omega, both shape (n,).

    omega overrides the stored weights (scalar or (n,)); the cached draws are
    reused, so the map omega -> loss is smooth and exactly replayable.
    """
    m = batch.n_particles
    props = batch.proposals(omega)
    slope = batch.slope()

    u = props - batch.targets
    cross_pow, cross_fac = _pow_and_factor(u, params.beta)
    loss = cross_pow.mean(axis=-1)
    dloss = (cross_fac * np.sum(u * slope, axis=-1)).mean(axis=-1)

    if params.lam > 0.0 and m > 1:
        v = props[:, :, None, :] - props[:, None, :, :]
        v_pow, v_fac = _pow_and_factor(v, params.beta)
        dv = slope[:, :, None, :] - slope[:, None, :, :]
        norm = 1.0 / (m * (m - 1))
        loss = loss - 0.5 * params.lam * v_pow.sum(axis=(-2, -1)) * norm
        dloss = dloss - 0.5 * params.lam * norm * (
            v_fac * np.sum(v * dv, axis=-1)).sum(axis=(-2, -1))
    return loss, dloss


def l2_loss(batch: ParticleBatch, omega=None):
    """Single-particle squared-error objective: ||xprop - xtgt||^2 per item.

    Requires m = 1. Written directly (not via mmd_loss) so the equivalence
    with the beta = 2, lam = 0 energy loss is a real cross-check.
    """
    if batch.n_particles != 1:
        raise ValueError("the squared-error objective uses exactly one particle")
    u = batch.proposals(omega)[:, 0, :] - batch.targets[:, 0, :]
    residual_slope = batch.slope()[:, 0, :]
    loss = np.sum(u * u, axis=-1)
    return loss, 2.0 * np.sum(u * residual_slope, axis=-1)


def pairwise_energy(points, beta: float) -> float:
    """Unbiased within-set energy sum (1/(m(m-1))) sum_{j != k} ||p_j - p_k||^beta."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    if m < 2:
        raise ValueError("need at least two points")
    diff = points[:, None, :] - points[None, :, :]
    pow_, _ = _pow_and_factor(diff, beta)
    return float(pow_.sum() / (m * (m - 1)))


class DistanceToMeanReward:
    """R(x, c) = -||x - mu_c||^2: pulls samples toward their class mean."""

    def __init__(self, means):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))

    def value_and_grad(self, x, c):
        x = np.asarray(x, dtype=float)
        mu = self.means[np.asarray(c)]
        diff = x - mu
        return -np.sum(diff * diff, axis=-1), -2.0 * diff


class MixtureLogDensityReward:
    """R(x, c) = log p0(x) under the data mixture (class-independent)."""

    def __init__(self, spec: MogSpec):
        self.spec = spec

    def value_and_grad(self, x, c=None):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        val = mixture_log_density(self.spec, flat).reshape(x.shape[:-1])
        grad = mixture_score(self.spec, flat).reshape(x.shape)
        return val, grad


def reward_loss(batch: ParticleBatch, reward_fn, omega=None, sign: float = -1.0):
    """Per-item reward term sign * (1/m) sum_j R(xhat_j(omega), c) and its omega-gradient.

    The reward acts on the guided denoiser outputs, so d xhat / d omega is the
    raw conditional-minus-unconditional difference. The default sign = -1
    makes minimizing this maximize the expected reward; sign = +1 flips the
    convention.
    """
    est = batch.guided_estimates(omega)
    c_rep = np.repeat(batch.c, batch.n_particles)
    val, grad = reward_fn.value_and_grad(est.reshape(-1, est.shape[-1]), c_rep)
    val = val.reshape(est.shape[:2])
    grad = grad.reshape(est.shape)
    loss = sign * val.mean(axis=-1)
    dloss = sign * np.sum(grad * batch.delta, axis=-1).mean(axis=-1)
    return loss, dloss


@dataclass
class GsmBatch:
    """Cached pieces of the guided-score-matching objective.

    The loss regresses the guided estimate onto the clean point at a single
    noised location per item: ||x0 - (xhat_c + omega delta)||^2. The s values
    only exist so weight functions see their usual (s, t) input distribution.
    """

    x0: np.ndarray      # (n, d)
    c: np.ndarray       # (n,)
    s: np.ndarray       # (n,)
    t: np.ndarray       # (n,)
    x_t: np.ndarray     # (n, d)
    xhat_c: np.ndarray  # (n, d)
    delta: np.ndarray   # (n, d)
    omega: np.ndarray   # (n,)

    @property
    def n_items(self) -> int:
        return self.x0.shape[0]

    def _omega(self, omega):
        if omega is None:
            return self.omega
        return np.broadcast_to(np.asarray(omega, dtype=float), (self.n_items,))


def build_gsm(x0, c, s, t, cond, uncond, weight_fn, rng,
              schedule: NoiseSchedule | None = None) -> GsmBatch:
    """Noise each item to its t and cache the denoiser pair there."""
    schedule = schedule or NoiseSchedule()
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    c = np.broadcast_to(np.asarray(c), (n,))
    s = np.broadcast_to(np.asarray(s, dtype=float), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    x_t, _ = noise_sample(schedule, x0, t, rng)
    xc = cond.denoise(x_t, t, c)
    xu = uncond.denoise(x_t, t, None)
    omega = np.broadcast_to(np.asarray(weight_fn.weight(s, t, c), dtype=float), (n,))
    return GsmBatch(x0=x0, c=c, s=s, t=t, x_t=x_t, xhat_c=xc, delta=xc - xu,
                    omega=np.array(omega))


def guided_score_matching_loss(batch: GsmBatch, omega=None):
    """Per-item ||x0 - guided estimate||^2 and d loss / d omega, shape (n,)."""
    w = batch._omega(omega)[:, None]
    u = batch.x0 - batch.xhat_c - w * batch.delta
    loss = np.sum(u * u, axis=-1)
    return loss, -2.0 * np.sum(u * batch.delta, axis=-1)
