"""Guidance weight functions omega(s, t, c) and the guided denoiser combination.

The guided estimate is

    xhat(x_t, c; omega) = xhat(x_t, c) + omega * (xhat(x_t, c) - xhat(x_t))

so omega = 0 is the conditional denoiser and omega = -1 the unconditional
one; both endpoints are returned exactly, without arithmetic on the
difference. Weight functions come in four flavors: constant, constant on a
time interval, piecewise-constant on an (s, t, class) grid, and a small
neural net over (logSNR s, logSNR t, one-hot c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .schedule import DEFAULT_CLAMP, NoiseSchedule


def _broadcast_inputs(s, t, c):
    """Common (n,)-shaped views of s, t, c; n = 1 when everything is scalar."""
    arrays = [np.asarray(s, dtype=float), np.asarray(t, dtype=float)]
    scalar = arrays[0].ndim == 0 and arrays[1].ndim == 0
    if c is not None:
        c = np.asarray(c)
        scalar = scalar and c.ndim == 0
    shape = np.broadcast_shapes(*(a.shape for a in arrays),
                                *(() if c is None else (c.shape,)))
    n = int(np.prod(shape)) if shape else 1
    s_b = np.broadcast_to(arrays[0], shape).reshape(n)
    t_b = np.broadcast_to(arrays[1], shape).reshape(n)
    c_b = None if c is None else np.broadcast_to(c, shape).reshape(n)
    return s_b, t_b, c_b, scalar


@dataclass(frozen=True)
class ConstantWeight:
    """omega(s, t, c) = omega everywhere."""

    omega: float = 0.0

    def weight(self, s, t, c=None):
        s_b, _, _, scalar = _broadcast_inputs(s, t, c)
        out = np.full(s_b.shape, float(self.omega))
        return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LimitedIntervalWeight:
    """Constant omega while the transition's source time t lies in [t_lo, t_hi]."""

    omega: float
    t_lo: float
    t_hi: float

    def __post_init__(self):
        if not self.t_lo <= self.t_hi:
            raise ValueError("need t_lo <= t_hi")

    def weight(self, s, t, c=None):
        _, t_b, _, scalar = _broadcast_inputs(s, t, c)
        out = np.where((t_b >= self.t_lo) & (t_b <= self.t_hi), float(self.omega), 0.0)
        return float(out[0]) if scalar else out


class TableWeight:
    """Piecewise-constant omega on a regular (s, t, class) grid over [zeta, 1 - zeta]."""

    def __init__(self, values, zeta: float = DEFAULT_CLAMP):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3:
            raise ValueError("values must have shape (s bins, t bins, classes)")
        self.values = values
        self.zeta = zeta

    def _bin(self, x, n_bins):
        span = 1.0 - 2.0 * self.zeta
        idx = np.floor((np.asarray(x) - self.zeta) / span * n_bins).astype(int)
        return np.clip(idx, 0, n_bins - 1)

    def bin_centers(self):
        """(s centers, t centers) of the grid cells."""
        span = 1.0 - 2.0 * self.zeta
        ns, nt, _ = self.values.shape
        s = self.zeta + span * (np.arange(ns) + 0.5) / ns
        t = self.zeta + span * (np.arange(nt) + 0.5) / nt
        return s, t

    def weight(self, s, t, c=None):
        s_b, t_b, c_b, scalar = _broadcast_inputs(s, t, c)
        if c_b is None:
            raise ValueError("table lookup needs a class")
        ns, nt, _ = self.values.shape
        out = self.values[self._bin(s_b, ns), self._bin(t_b, nt), c_b]
        return float(out[0]) if scalar else out


class GuidanceNet:
    """Neural omega(s, t, c).

    Both times are mapped to logSNR, clamped to +/- logsnr_clip, embedded by a
    shared two-layer MLP, concatenated with the one-hot class, and fed to a
    GeLU trunk with a scalar linear head. With allow_negative=False the head
    output is passed through ReLU instead.
    """

    def __init__(self, embed: nn.Mlp, trunk: nn.Mlp, n_classes: int,
                 allow_negative: bool = True, logsnr_clip: float = 13.8,
                 schedule: NoiseSchedule | None = None):
        self.embed = embed
        self.trunk = trunk
        self.n_classes = n_classes
        self.allow_negative = allow_negative
        self.logsnr_clip = logsnr_clip
        self.schedule = schedule or NoiseSchedule()

    @classmethod
    def create(cls, n_classes: int, rng, embed_hidden: int = 256, embed_dim: int = 512,
               trunk_hidden: int = 64, trunk_layers: int = 6, dropout: float = 0.3,
               allow_negative: bool = True, logsnr_clip: float = 13.8,
               schedule: NoiseSchedule | None = None, zero_init: bool = True):
        """Build the default architecture; zero_init starts the net at omega == 0."""
        embed = nn.Mlp.create([2, embed_hidden, embed_dim], rng,
                              output_activation="gelu", dropout_rate=dropout)
        head = "identity" if allow_negative else "relu"
        trunk = nn.Mlp.create([embed_dim + n_classes] + [trunk_hidden] * trunk_layers + [1],
                              rng, output_activation=head, zero_final=zero_init)
        return cls(embed, trunk, n_classes, allow_negative, logsnr_clip, schedule)

    def parameters(self):
        return self.embed.parameters() + self.trunk.parameters()

    def _time_features(self, s_b, t_b):
        clip = self.logsnr_clip
        snr_s = np.clip(self.schedule.logsnr(s_b), -clip, clip)
        snr_t = np.clip(self.schedule.logsnr(t_b), -clip, clip)
        return np.stack([snr_s, snr_t], axis=-1)

    def weight_with_tape(self, s, t, c, train=False, rng=None):
        """omega values (n,) plus the tape needed for backward()."""
        s_b, t_b, c_b, _ = _broadcast_inputs(s, t, c)
        feats = self._time_features(s_b, t_b)
        emb, tape_e = self.embed.forward(feats, train=train, rng=rng)
        onehot = nn.class_onehot(c_b, self.n_classes, n=s_b.shape[0])
        out, tape_t = self.trunk.forward(np.concatenate([emb, onehot], axis=1),
                                         train=train, rng=rng)
        return out[:, 0], {"embed": tape_e, "trunk": tape_t}

    def backward(self, tape, d_omega):
        """Parameter gradients (embed blocks then trunk blocks) for cotangent d_omega (n,)."""
        gt, d_in = self.trunk.backward(tape["trunk"], np.asarray(d_omega)[:, None])
        ge, _ = self.embed.backward(tape["embed"], d_in[:, :-self.n_classes])
        return ge + gt

    def weight(self, s, t, c=None):
        _, _, _, scalar = _broadcast_inputs(s, t, c)
        out, _ = self.weight_with_tape(s, t, c)
        return float(out[0]) if scalar else out


def guided_denoise(cond, uncond, x_t, t, c, omega):
    """Combine conditional and unconditional denoisers at guidance weight omega.

    Args:
        cond, uncond: denoisers; uncond is queried with c = None.
        omega: scalar or (n,) array of per-row weights.

    Returns:
        (guided, delta) where delta = xhat_c - xhat_uncond. Scalar omega 0
        and -1 return the conditional and unconditional estimates exactly.
    """
    xc = cond.denoise(x_t, t, c)
    xu = uncond.denoise(x_t, t, None)
    delta = xc - xu
    omega_arr = np.asarray(omega, dtype=float)
    if omega_arr.ndim > 0 and omega_arr.size > 0 and np.all(omega_arr == omega_arr.flat[0]):
        omega_arr = omega_arr.flat[0]  # uniform weights take the scalar path
    if omega_arr.ndim == 0:
        w = float(omega_arr)
        if w == 0.0:
            return xc, delta
        if w == -1.0:
            return xu, delta
        return xc + w * delta, delta
    return xc + omega_arr[:, None] * delta, delta


def weight_grid_times(dt: float = 0.01, zeta: float = DEFAULT_CLAMP):
    """Destination/source time pairs (s, t) with s = t - dt covering [zeta, 1 - zeta]."""
    n = int(np.floor((1.0 - 2.0 * zeta) / dt + 1e-9))
    t = zeta + dt * np.arange(1, n + 1)
    return t - dt, t


def export_weight_grid(fn, n_classes: int, dt: float = 0.01, zeta: float = DEFAULT_CLAMP):
    """Tabulate omega(t - dt, t, c) for every class on the standard time grid.

    Returns:
        (t, omegas) with t of shape (n,) and omegas of shape (n_classes, n).
    """
    s, t = weight_grid_times(dt, zeta)
    omegas = np.stack([np.asarray(fn.weight(s, t, np.full(t.shape[0], c)))
                       for c in range(n_classes)])
    return t, omegas


def mean_abs_weight(fn, n_classes: int, dt: float = 0.01, zeta: float = DEFAULT_CLAMP) -> float:
    """Mean |omega| over the standard probe grid; the 'how guided is it' scalar."""
    _, omegas = export_weight_grid(fn, n_classes, dt, zeta)
    return float(np.mean(np.abs(omegas)))
