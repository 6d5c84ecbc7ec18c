"""Training loop for guidance weight functions.

One step: draw a data batch and time pairs, evaluate the net's weights with a
tape, build the cached particle (or score-matching) batch, get per-item loss
values and omega-gradients from the objective, chain them through the net,
clip, and take an Adam step. The denoisers are frozen teachers; only the
guidance net's parameters move.

Checkpoints are taken every checkpoint_every iterations. When select_best is
on, each checkpoint (and the final iterate) is scored by sampling a small
probe and measuring its energy distance to held-out data draws on a fixed
stream; the best-scoring parameters are restored at the end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .denoisers import MogSpec
from .evaluation import energy_mmd
from .guidance import GuidanceNet
from .objectives import (DistanceToMeanReward, MixtureLogDensityReward, MmdParams,
                         TimePairSampler, build_gsm, build_particles,
                         guided_score_matching_loss, l2_loss, mmd_loss, reward_loss)
from .rng import stream
from .sampler import SampleConfig, sample

MODES = ("self_consistency", "l2", "reward", "guided_sm")
REWARDS = ("distance_to_mean", "mixture_log_density")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; the net holds the last
    good checkpoint when this propagates."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "self_consistency"
    iterations: int = 1000
    batch_size: int = 128
    particles: int = 32
    beta: float = 1.75
    lam: float = 1.0
    churn: float = 1.0
    learning_rate: float = 5e-4
    clip_norm: float = 1.0
    ema_decay: float | None = None
    gamma_reward: float = 0.0
    reward: str | None = None
    reward_sign: float = -1.0
    checkpoint_every: int = 100
    select_best: bool = True
    probe_size: int = 512
    seed: int = 0
    time_sampler: TimePairSampler = field(default_factory=TimePairSampler)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "l2" and self.particles != 1:
            raise ValueError("the l2 objective uses exactly one particle")
        if self.mode == "reward" and self.reward is None:
            raise ValueError("reward mode needs a reward function name")
        if self.reward is not None and self.reward not in REWARDS:
            raise ValueError(f"reward must be one of {REWARDS}, got {self.reward!r}")
        if self.reward_sign not in (-1.0, 1.0):
            raise ValueError("reward_sign must be -1 or +1")
        if self.iterations < 0 or self.batch_size <= 0 or self.particles <= 0:
            raise ValueError("iterations >= 0, batch_size > 0, particles > 0 required")
        MmdParams(self.beta, self.lam)  # validates the pair


@dataclass
class TrainRecord:
    """Per-iteration training trace. reward is NaN when not tracked."""

    iteration: np.ndarray
    loss: np.ndarray
    reward: np.ndarray
    grad_norm: np.ndarray
    mean_abs_omega: np.ndarray

    def write_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["iter", "loss", "reward", "grad_norm", "mean_abs_omega"])
            for i in range(self.iteration.shape[0]):
                r = self.reward[i]
                writer.writerow([int(self.iteration[i]), repr(float(self.loss[i])),
                                 "" if np.isnan(r) else repr(float(r)),
                                 repr(float(self.grad_norm[i])),
                                 repr(float(self.mean_abs_omega[i]))])


@dataclass(frozen=True)
class _FixedWeight:
    """Wraps weights already evaluated by the net, so builders don't re-run it."""

    values: np.ndarray

    def weight(self, s, t, c=None):
        return self.values


def make_reward(name: str, spec: MogSpec):
    if name == "distance_to_mean":
        return DistanceToMeanReward(spec.means)
    if name == "mixture_log_density":
        return MixtureLogDensityReward(spec)
    raise ValueError(f"unknown reward {name!r}")


def _probe_mmd(net: GuidanceNet, cond, uncond, data: MogSpec, config: TrainConfig) -> float:
    probe = SampleConfig(steps=10, count=config.probe_size,
                         churn=0.0, zeta=config.time_sampler.zeta)
    xs, _ = sample(probe, cond, uncond, net, class_weights=data.weights, seed=config.seed)
    ref, _ = data.sample_joint(config.probe_size, stream(config.seed, "probe/reference"))
    return energy_mmd(xs, ref)


def train_guidance(net: GuidanceNet, cond, uncond, data: MogSpec, config: TrainConfig,
                   quiet: bool = True):
    """Run the configured objective for config.iterations steps.

    Returns (net, record). The net is mutated in place; its final parameters
    are the EMA shadow when ema_decay is set, and the best probe checkpoint
    when select_best is on (final iterate included as a candidate).
    """
    params = net.parameters()
    adam = nn.AdamState.for_params(params, lr=config.learning_rate)
    ema = nn.EmaState.for_params(params, config.ema_decay) if config.ema_decay else None
    mmd_params = MmdParams(config.beta, config.lam)
    reward_fn = make_reward(config.reward, data) if config.reward else None
    track_reward = reward_fn is not None and config.mode != "guided_sm"

    data_rng = stream(config.seed, "guidance/data")
    time_rng = stream(config.seed, "guidance/time")
    noise_rng = stream(config.seed, "guidance/noise")
    drop_rng = stream(config.seed, "guidance/dropout")

    n = config.batch_size
    cols = {k: np.zeros(config.iterations) for k in
            ("loss", "reward", "grad_norm", "mean_abs_omega")}
    cols["reward"][:] = np.nan

    def snapshot():
        live = nn.flatten_params(params)
        if ema is None:
            return live
        return nn.flatten_params(ema.shadow)

    def probe_at(flat):
        live = nn.flatten_params(params)
        nn.set_flat_params(params, flat)
        val = _probe_mmd(net, cond, uncond, data, config)
        nn.set_flat_params(params, live)
        return val

    last_good = snapshot()
    candidates = []  # (probe mmd, iteration, flat params)

    for it in range(config.iterations):
        x0, c = data.sample_joint(n, data_rng)
        s, t = config.time_sampler.sample(n, time_rng)
        train_fwd = net.embed.dropout_rate > 0.0 or net.trunk.dropout_rate > 0.0
        omega, tape = net.weight_with_tape(s, t, c, train=train_fwd, rng=drop_rng)
        fixed = _FixedWeight(omega)

        if config.mode == "guided_sm":
            batch = build_gsm(x0, c, s, t, cond, uncond, fixed, noise_rng)
            loss_items, grad_items = guided_score_matching_loss(batch)
        else:
            batch = build_particles(x0, c, s, t, config.particles, cond, uncond,
                                    fixed, config.churn, noise_rng)
            if config.mode == "l2":
                loss_items, grad_items = l2_loss(batch)
            else:
                loss_items, grad_items = mmd_loss(batch, mmd_params)
            if track_reward:
                r_loss, r_grad = reward_loss(batch, reward_fn, sign=config.reward_sign)
                # r_loss = sign * mean R, so sign * r_loss recovers the raw reward
                cols["reward"][it] = float(np.mean(config.reward_sign * r_loss))
                if config.mode == "reward":
                    loss_items = loss_items + config.gamma_reward * r_loss
                    grad_items = grad_items + config.gamma_reward * r_grad

        loss = float(np.mean(loss_items))
        if not np.isfinite(loss):
            nn.set_flat_params(params, last_good)
            raise TrainingDiverged(f"non-finite loss at iteration {it}", it)
        grads = net.backward(tape, grad_items / n)
        grads, pre_norm = nn.clip_global_norm(grads, config.clip_norm)
        if not np.isfinite(pre_norm):
            nn.set_flat_params(params, last_good)
            raise TrainingDiverged(f"non-finite gradient at iteration {it}", it)
        nn.adam_step(adam, params, grads)
        if ema is not None:
            ema.update(params)

        cols["loss"][it] = loss
        cols["grad_norm"][it] = pre_norm
        cols["mean_abs_omega"][it] = float(np.mean(np.abs(omega)))

        if (it + 1) % config.checkpoint_every == 0:
            last_good = snapshot()
            if config.select_best and config.mode != "guided_sm":
                candidates.append((probe_at(last_good), it + 1, last_good))
                if not quiet:
                    print(f"  iter {it + 1}: loss {loss:.4f}, probe mmd {candidates[-1][0]:.4f}")
        elif not quiet and (it + 1) % max(1, config.checkpoint_every // 2) == 0:
            print(f"  iter {it + 1}: loss {loss:.4f}")

    final = snapshot()
    if config.select_best and config.mode != "guided_sm" and config.iterations > 0:
        if not candidates or candidates[-1][1] != config.iterations:
            candidates.append((probe_at(final), config.iterations, final))
        best = min(candidates, key=lambda c: c[0])
        if not quiet:
            print(f"  selected checkpoint at iter {best[1]} (probe mmd {best[0]:.4f})")
        nn.set_flat_params(params, best[2])
    else:
        nn.set_flat_params(params, final)

    record = TrainRecord(iteration=np.arange(config.iterations),
                         loss=cols["loss"], reward=cols["reward"],
                         grad_norm=cols["grad_norm"],
                         mean_abs_omega=cols["mean_abs_omega"])
    return net, record


def loss_param_grad(net: GuidanceNet, cond, uncond, data: MogSpec, x0, c, s, t,
                    config: TrainConfig):
    """Loss and flat d loss / d parameters for one fixed batch (no update).

    The batch draws come from a stream frozen by config.seed, so repeated
    calls with perturbed parameters see identical randomness. Used by the
    gradient checks.
    """
    noise_rng = stream(config.seed, "gradcheck/noise")
    omega, tape = net.weight_with_tape(s, t, c)
    fixed = _FixedWeight(omega)
    n = np.atleast_2d(x0).shape[0]
    if config.mode == "guided_sm":
        batch = build_gsm(x0, c, s, t, cond, uncond, fixed, noise_rng)
        loss_items, grad_items = guided_score_matching_loss(batch)
    else:
        batch = build_particles(x0, c, s, t, config.particles, cond, uncond,
                                fixed, config.churn, noise_rng)
        if config.mode == "l2":
            loss_items, grad_items = l2_loss(batch)
        else:
            loss_items, grad_items = mmd_loss(batch, MmdParams(config.beta, config.lam))
        if config.mode == "reward":
            reward_fn = make_reward(config.reward, data)
            r_loss, r_grad = reward_loss(batch, reward_fn, sign=config.reward_sign)
            loss_items = loss_items + config.gamma_reward * r_loss
            grad_items = grad_items + config.gamma_reward * r_grad
    grads = net.backward(tape, grad_items / n)
    return float(np.mean(loss_items)), nn.flatten_params(grads)
