"""Versioned JSON checkpoints for denoisers and guidance weight functions.

A checkpoint is a single JSON object:

    {"format_version": 1, "kind": "<family>/<variant>",
     "architecture": {...}, "params": [...], "metadata": {...}}

params is the flat parameter vector in canonical order (see nn.Mlp); analytic
objects carry their defining arrays inside architecture instead. JSON floats
round-trip exactly (repr precision), so save/load is bit-stable.
"""

from __future__ import annotations

import json

import numpy as np

from . import nn
from .denoisers import (AnalyticDenoiser, CorruptedDenoiser, CorruptionSpec,
                        MogSpec, NeuralDenoiser)
from .guidance import (ConstantWeight, GuidanceNet, LimitedIntervalWeight,
                       TableWeight)

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _mog_to_dict(spec: MogSpec) -> dict:
    return {"means": spec.means.tolist(), "variances": spec.variances.tolist(),
            "weights": spec.weights.tolist()}


def _mog_from_dict(d: dict) -> MogSpec:
    return MogSpec(means=np.array(d["means"]), variances=np.array(d["variances"]),
                   weights=np.array(d["weights"]))


def _mlp_arch(net: nn.Mlp) -> dict:
    return {"sizes": net.sizes, "hidden_activation": net.hidden_activation,
            "output_activation": net.output_activation,
            "dropout_rate": net.dropout_rate}


def _mlp_from_arch(arch: dict, flat, offset: int):
    sizes = arch["sizes"]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(np.zeros((fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    net = nn.Mlp(weights, biases, arch["hidden_activation"],
                 arch["output_activation"], arch["dropout_rate"])
    params = net.parameters()
    size = sum(p.size for p in params)
    nn.set_flat_params(params, np.asarray(flat[offset:offset + size]))
    return net, offset + size


def _write(path, kind: str, architecture: dict, params, metadata: dict | None):
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "architecture": architecture,
        "params": [float(v) for v in np.asarray(params, dtype=float).ravel()],
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def _read(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    for key in ("kind", "architecture", "params"):
        if key not in payload:
            raise CheckpointError(f"checkpoint missing field {key!r}")
    return payload


def save_denoiser(path, denoiser, metadata: dict | None = None):
    if isinstance(denoiser, AnalyticDenoiser):
        _write(path, "denoiser/analytic", {"mog": _mog_to_dict(denoiser.spec)},
               [], metadata)
    elif isinstance(denoiser, CorruptedDenoiser):
        corr = denoiser.corruption
        arch = {"mog": _mog_to_dict(denoiser.base_spec),
                "corruption": {"mean_shrink": corr.mean_shrink,
                               "weight_skew": corr.weight_skew,
                               "noise_scale": corr.noise_scale, "seed": corr.seed}}
        _write(path, "denoiser/corrupted", arch, [], metadata)
    elif isinstance(denoiser, NeuralDenoiser):
        arch = {"net": _mlp_arch(denoiser.net), "n_classes": denoiser.n_classes,
                "time_embed_dim": denoiser.time_embed_dim,
                "logsnr_clip": denoiser.logsnr_clip}
        _write(path, "denoiser/neural", arch,
               nn.flatten_params(denoiser.net.parameters()), metadata)
    else:
        raise CheckpointError(f"cannot checkpoint denoiser type {type(denoiser).__name__}")


def load_denoiser(path):
    payload = _read(path)
    kind, arch = payload["kind"], payload["architecture"]
    if kind == "denoiser/analytic":
        return AnalyticDenoiser(_mog_from_dict(arch["mog"]))
    if kind == "denoiser/corrupted":
        c = arch["corruption"]
        return CorruptedDenoiser(_mog_from_dict(arch["mog"]),
                                 CorruptionSpec(mean_shrink=c["mean_shrink"],
                                                weight_skew=c["weight_skew"],
                                                noise_scale=c["noise_scale"],
                                                seed=c["seed"]))
    if kind == "denoiser/neural":
        net, _ = _mlp_from_arch(arch["net"], payload["params"], 0)
        return NeuralDenoiser(net, arch["n_classes"], arch["time_embed_dim"],
                              logsnr_clip=arch["logsnr_clip"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_weight_fn(path, fn, metadata: dict | None = None):
    if isinstance(fn, ConstantWeight):
        _write(path, "guidance/constant", {"omega": fn.omega}, [], metadata)
    elif isinstance(fn, LimitedIntervalWeight):
        _write(path, "guidance/limited_interval",
               {"omega": fn.omega, "t_lo": fn.t_lo, "t_hi": fn.t_hi}, [], metadata)
    elif isinstance(fn, TableWeight):
        _write(path, "guidance/table",
               {"shape": list(fn.values.shape), "zeta": fn.zeta},
               fn.values.ravel(), metadata)
    elif isinstance(fn, GuidanceNet):
        arch = {"embed": _mlp_arch(fn.embed), "trunk": _mlp_arch(fn.trunk),
                "n_classes": fn.n_classes, "allow_negative": fn.allow_negative,
                "logsnr_clip": fn.logsnr_clip}
        _write(path, "guidance/net", arch, nn.flatten_params(fn.parameters()),
               metadata)
    else:
        raise CheckpointError(f"cannot checkpoint weight function type {type(fn).__name__}")


def load_weight_fn(path):
    payload = _read(path)
    kind, arch = payload["kind"], payload["architecture"]
    if kind == "guidance/constant":
        return ConstantWeight(arch["omega"])
    if kind == "guidance/limited_interval":
        return LimitedIntervalWeight(arch["omega"], arch["t_lo"], arch["t_hi"])
    if kind == "guidance/table":
        values = np.array(payload["params"]).reshape(arch["shape"])
        return TableWeight(values, zeta=arch["zeta"])
    if kind == "guidance/net":
        embed, offset = _mlp_from_arch(arch["embed"], payload["params"], 0)
        trunk, _ = _mlp_from_arch(arch["trunk"], payload["params"], offset)
        return GuidanceNet(embed, trunk, arch["n_classes"],
                           allow_negative=arch["allow_negative"],
                           logsnr_clip=arch["logsnr_clip"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def read_metadata(path) -> dict:
    return _read(path).get("metadata", {})
