"""Command-line interface.

Every command reads one JSON experiment config and writes its artifacts into
an output directory. Outputs are byte-deterministic given (config, seed):
float fields are written at full precision and each artifact carries the
config digest and seed in its header or metadata instead of timestamps.

Commands:
    pretrain-denoiser  build or train the denoiser, write denoiser.json
    train-guidance     fit guidance weights, write guidance.json + train_record.csv
    sample             draw samples (samples.csv), optionally a trajectory
    eval-mmd           score one sample CSV against another
    sweep              constant-weight sweep (optionally + learned), sweep.csv/json
    export-weights     tabulate a weight function over the time grid

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .checkpoints import (CheckpointError, load_denoiser, load_weight_fn,
                          save_denoiser, save_weight_fn)
from .config import (ConfigError, ExperimentConfig, build_denoiser,
                     build_guidance_net, config_digest, load_config)
from .evaluation import EvalReport, EvalRow, mmd_with_se, run_figure_protocol
from .guidance import ConstantWeight, export_weight_grid
from .sampler import sample, sample_trajectory
from .trainer import TrainingDiverged, train_guidance


def _add_common(parser):
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidefit",
                                     description="learned guidance weights for diffusion samplers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-denoiser", help="build or train the config's denoiser")
    _add_common(p)

    p = sub.add_parser("train-guidance", help="fit the guidance weight net")
    _add_common(p)
    p.add_argument("--denoiser", default=None,
                   help="denoiser checkpoint (default <out>/denoiser.json, else built from config)")

    p = sub.add_parser("sample", help="draw samples from the guided sampler")
    _add_common(p)
    p.add_argument("--denoiser", default=None)
    p.add_argument("--guidance", default=None,
                   help="weight checkpoint (default <out>/guidance.json if present, else omega=0)")
    p.add_argument("--from-data", action="store_true",
                   help="draw from the data mixture instead of the sampler")
    p.add_argument("--trajectory", type=int, default=None, metavar="CHAIN",
                   help="also record chain CHAIN's full trajectory")
    p.add_argument("--output", default=None, help="samples CSV path (default <out>/samples.csv)")

    p = sub.add_parser("eval-mmd", help="energy MMD between two sample CSVs")
    _add_common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)

    p = sub.add_parser("sweep", help="constant guidance sweep over the config's grid")
    _add_common(p)
    p.add_argument("--denoiser", default=None)
    p.add_argument("--guidance", default=None,
                   help="optional learned weights to append as a 'learned' row")

    p = sub.add_parser("export-weights", help="tabulate omega(t - 1/100, t, c)")
    _add_common(p)
    p.add_argument("--guidance", default=None)
    return parser


def _load_setup(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    return config, config_digest(config)


def _get_denoiser(args, config: ExperimentConfig, quiet: bool):
    path = args.denoiser or os.path.join(args.out, "denoiser.json")
    if os.path.exists(path):
        if not quiet:
            print(f"loading denoiser from {path}")
        return load_denoiser(path)
    if args.denoiser is not None:
        raise ConfigError(f"denoiser checkpoint {path} not found")
    if not quiet:
        print("no denoiser checkpoint, building from config")
    return build_denoiser(config, quiet=quiet)


def _get_weight_fn(args, quiet: bool):
    path = getattr(args, "guidance", None) or os.path.join(args.out, "guidance.json")
    if os.path.exists(path):
        if not quiet:
            print(f"loading guidance weights from {path}")
        return load_weight_fn(path)
    if getattr(args, "guidance", None) is not None:
        raise ConfigError(f"guidance checkpoint {path} not found")
    if not quiet:
        print("no guidance checkpoint, sampling unguided (omega = 0)")
    return ConstantWeight(0.0)


def _write_samples(path, x, c, header: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(["c", "x", "y"])
        for i in range(x.shape[0]):
            writer.writerow([int(c[i]), repr(float(x[i, 0])), repr(float(x[i, 1]))])


def _read_samples(path):
    xs, cs = [], []
    with open(path) as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            if row[0] == "c":
                continue
            cs.append(int(row[0]))
            xs.append([float(v) for v in row[1:]])
    if not xs:
        raise ConfigError(f"{path} contains no samples")
    return np.array(xs), np.array(cs)


def cmd_pretrain_denoiser(args) -> int:
    config, digest = _load_setup(args)
    denoiser = build_denoiser(config, quiet=args.quiet)
    path = os.path.join(args.out, "denoiser.json")
    save_denoiser(path, denoiser,
                  {"seed": config.seed, "config_digest": digest,
                   "kind": config.denoiser.kind})
    if not args.quiet:
        print(f"wrote {path}")
    return 0


def cmd_train_guidance(args) -> int:
    config, digest = _load_setup(args)
    denoiser = _get_denoiser(args, config, args.quiet)
    net = build_guidance_net(config)
    if not args.quiet:
        print(f"training guidance ({config.train.mode}, {config.train.iterations} iterations)")
    net, record = train_guidance(net, denoiser, denoiser, config.mog, config.train,
                                 quiet=args.quiet)
    header = f"seed={config.seed} config_digest={digest}"
    record.write_csv(os.path.join(args.out, "train_record.csv"), header)
    path = os.path.join(args.out, "guidance.json")
    save_weight_fn(path, net, {"seed": config.seed, "config_digest": digest,
                               "mode": config.train.mode,
                               "iterations": config.train.iterations})
    if not args.quiet:
        print(f"wrote {path} and train_record.csv")
    return 0


def cmd_sample(args) -> int:
    config, digest = _load_setup(args)
    header = f"seed={config.seed} config_digest={digest}"
    out_path = args.output or os.path.join(args.out, "samples.csv")
    if args.from_data:
        from .rng import stream
        x, c = config.mog.sample_joint(config.sample.count,
                                       stream(config.seed, "sample/data"))
        _write_samples(out_path, x, c, header + " source=data")
        if not args.quiet:
            print(f"wrote {out_path} ({x.shape[0]} data draws)")
        return 0
    denoiser = _get_denoiser(args, config, args.quiet)
    weight_fn = _get_weight_fn(args, args.quiet)
    x, c = sample(config.sample, denoiser, denoiser, weight_fn,
                  class_weights=config.mog.weights, seed=config.seed)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("sampler produced non-finite values")
    _write_samples(out_path, x, c, header + " source=model")
    if not args.quiet:
        print(f"wrote {out_path} ({x.shape[0]} samples)")
    if args.trajectory is not None:
        times, states, omegas, cls = sample_trajectory(
            config.sample, denoiser, denoiser, weight_fn,
            class_weights=config.mog.weights, seed=config.seed,
            chain=args.trajectory)
        traj_path = os.path.join(args.out, "trajectory.csv")
        with open(traj_path, "w", newline="") as fh:
            fh.write(f"# {header} chain={args.trajectory} class={cls}\n")
            writer = csv.writer(fh)
            writer.writerow(["k", "t_k", "x", "y", "omega"])
            n = times.shape[0] - 1
            for j in range(times.shape[0]):
                omega = "" if j == 0 else repr(float(omegas[j - 1]))
                writer.writerow([n - j, repr(float(times[j])),
                                 repr(float(states[j, 0])), repr(float(states[j, 1])),
                                 omega])
        if not args.quiet:
            print(f"wrote {traj_path}")
    return 0


def cmd_eval_mmd(args) -> int:
    config, digest = _load_setup(args)
    gen, _ = _read_samples(args.generated)
    ref, _ = _read_samples(args.reference)
    mmd, se = mmd_with_se(gen, ref, beta=config.eval.beta, lam=config.eval.lam,
                          n_resamples=config.eval.resamples, seed=config.seed)
    if not np.isfinite(mmd):
        raise FloatingPointError("MMD evaluation produced a non-finite value")
    report = EvalReport(rows=[EvalRow(label="eval", omega=None, mmd=mmd, se=se,
                                      count=gen.shape[0])],
                        beta=config.eval.beta, lam=config.eval.lam,
                        seed=config.seed, config_digest=digest)
    report.write_json(os.path.join(args.out, "eval.json"))
    print(f"mmd {mmd!r} se {se!r} (beta={config.eval.beta:g}, lam={config.eval.lam:g}, "
          f"n={gen.shape[0]} vs {ref.shape[0]})")
    return 0


def cmd_sweep(args) -> int:
    config, digest = _load_setup(args)
    denoiser = _get_denoiser(args, config, args.quiet)
    learned = None
    if args.guidance is not None:
        learned = load_weight_fn(args.guidance)
    report = run_figure_protocol(
        denoiser, denoiser, config.mog, config.sample,
        config.eval.omega_grid, learned_fn=learned,
        beta=config.eval.beta, lam=config.eval.lam,
        n_resamples=config.eval.resamples, seed=config.seed,
        config_digest=digest, quiet=args.quiet)
    header = f"seed={config.seed} config_digest={digest}"
    report.write_csv(os.path.join(args.out, "sweep.csv"), header)
    report.write_json(os.path.join(args.out, "sweep.json"))
    if not args.quiet:
        print(f"wrote sweep.csv and sweep.json ({len(report.rows)} rows)")
    return 0


def cmd_export_weights(args) -> int:
    config, digest = _load_setup(args)
    weight_fn = _get_weight_fn(args, args.quiet)
    t, omegas = export_weight_grid(weight_fn, config.mog.n_classes,
                                   dt=0.01, zeta=config.sample.zeta)
    path = os.path.join(args.out, "weights.csv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={config.seed} config_digest={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["class", "t", "omega"])
        for cls in range(omegas.shape[0]):
            for j in range(t.shape[0]):
                writer.writerow([cls, repr(float(t[j])), repr(float(omegas[cls, j]))])
    if not args.quiet:
        print(f"wrote {path} ({omegas.size} rows)")
    return 0


_COMMANDS = {
    "pretrain-denoiser": cmd_pretrain_denoiser,
    "train-guidance": cmd_train_guidance,
    "sample": cmd_sample,
    "eval-mmd": cmd_eval_mmd,
    "sweep": cmd_sweep,
    "export-weights": cmd_export_weights,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
