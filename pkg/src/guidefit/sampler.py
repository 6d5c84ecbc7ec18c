"""Guided ancestral sampler.

Chains start from the schedule's prior at 1 - zeta and take steps steps down
a uniform time grid to zeta. Each step queries the conditional and
unconditional denoisers once, combines them at omega(s, t, c), and applies
the reverse transition at the configured churn (0 by default, the
deterministic velocity step).

Randomness is per chain: chain i draws from substream (seed, "sample/chain",
i), so results for chain i do not depend on how many chains run, and a
trajectory recorded for one chain reproduces that chain of a full run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .guidance import guided_denoise
from .rng import stream
from .schedule import DEFAULT_CLAMP, NoiseSchedule, ddim_transition


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 10
    count: int = 4096
    churn: float = 0.0
    conditioning: int | None = None  # None samples classes from class_weights
    zeta: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.steps < 1 or self.count < 1:
            raise ValueError("steps and count must be positive")
        if not 0.0 <= self.churn <= 1.0:
            raise ValueError("churn must lie in [0, 1]")
        if not 0.0 < self.zeta < 0.5:
            raise ValueError("zeta must lie in (0, 0.5)")

    def grid(self):
        """Uniform time grid t_0 = zeta < ... < t_steps = 1 - zeta."""
        return np.linspace(self.zeta, 1.0 - self.zeta, self.steps + 1)


def _chain_draws(config: SampleConfig, dim: int, seed: int):
    """Per-chain class uniforms, initial noise, and step noise."""
    u = np.empty(config.count)
    x_init = np.empty((config.count, dim))
    z = np.empty((config.count, config.steps, dim))
    for i in range(config.count):
        g = stream(seed, "sample/chain", i)
        if config.conditioning is None:
            u[i] = g.random()
        x_init[i] = g.standard_normal(dim)
        z[i] = g.standard_normal((config.steps, dim))
    return u, x_init, z


def _run(config: SampleConfig, cond, uncond, weight_fn, class_weights, seed: int,
         schedule: NoiseSchedule, keep_trajectory: bool):
    n_classes = cond.n_classes
    if class_weights is None:
        class_weights = np.full(n_classes, 1.0 / n_classes)
    class_weights = np.asarray(class_weights, dtype=float)
    dim = cond.dim
    grid = config.grid()

    u, x_init, z = _chain_draws(config, dim, seed)
    if config.conditioning is None:
        c = np.searchsorted(np.cumsum(class_weights), u).astype(int)
        c = np.minimum(c, n_classes - 1)
    else:
        c = np.full(config.count, int(config.conditioning))

    _, sigma_top = schedule.alpha_sigma(grid[-1])
    x = sigma_top * x_init
    traj = [x.copy()] if keep_trajectory else None
    omegas = []
    for k in range(config.steps - 1, -1, -1):
        s, t = grid[k], grid[k + 1]
        omega = weight_fn.weight(s, t, c)
        guided, _ = guided_denoise(cond, uncond, x, t, c, omega)
        trans = ddim_transition(schedule, s, t, config.churn)
        x = trans.mean(guided, x) + np.sqrt(trans.cov_scale) * z[:, k]
        if keep_trajectory:
            traj.append(x.copy())
            omegas.append(np.asarray(omega, dtype=float) + np.zeros(config.count))
    return x, c, grid, traj, omegas


def sample(config: SampleConfig, cond, uncond, weight_fn, class_weights=None,
           seed: int = 0, schedule: NoiseSchedule | None = None):
    """Draw config.count guided samples.

    Returns:
        (x, c) with x of shape (count, d) at time zeta and the class labels
        each chain was conditioned on.
    """
    schedule = schedule or NoiseSchedule()
    x, c, _, _, _ = _run(config, cond, uncond, weight_fn, class_weights, seed,
                         schedule, keep_trajectory=False)
    return x, c


def sample_trajectory(config: SampleConfig, cond, uncond, weight_fn,
                      class_weights=None, seed: int = 0, chain: int = 0,
                      schedule: NoiseSchedule | None = None):
    """Record every state of one chain of the corresponding sample() run.

    Returns:
        (times, states, omegas, c): times is the grid in visit order, from
        1 - zeta down to zeta; states[j] is the chain's point at times[j];
        omegas[j] is the weight used for the step into states[j + 1]; and
        states[-1] equals the chain's row in sample() under the same seed.
    """
    schedule = schedule or NoiseSchedule()
    one = replace(config, count=chain + 1)
    x, c, grid, traj, omegas = _run(one, cond, uncond, weight_fn, class_weights,
                                    seed, schedule, keep_trajectory=True)
    times = grid[::-1]
    states = np.stack([state[chain] for state in traj])
    omega_path = np.array([w[chain] for w in omegas])
    return times, states, omega_path, int(c[chain])
