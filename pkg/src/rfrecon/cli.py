"""Command-line interface.

Subcommands cover the full pipeline: gen-data, train, reconstruct, evaluate,
hermite, sweep, and export-images. Each stage reads and writes the package's
file formats, so the steps compose on disk:

    rfrecon gen-data --kind synthetic --d 30 --n 4 --seed 0 --out data.bin
    rfrecon train --data data.bin --p 600 --activation tanh --seed 1 --out model.bin
    rfrecon reconstruct --model model.bin --n 4 --seed 2 --out xhat.bin
    rfrecon evaluate --data data.bin --model model.bin --recon xhat.bin
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .activations import assumption_check, get_activation, hermite_coefficients
from .data import (Dataset, build_cifar_subset, image_grid, load_dataset,
                   noisy_linear_labels, one_hot_labels, read_cifar_dir, row_to_rgb,
                   save_dataset, sphere_uniform, write_ppm)
from .linalg import RngStream, gaussian_matrix
from .metrics import assignment_rho, metrics_report
from .modelio import load_model, save_model
from .models import RFModel, TwoLayerModel, train_rf, train_two_layer
from .recon import ReconConfig, ReconProblem, reconstruct, write_trace_csv
from .sweep import SweepConfig, run_sweep


def _build_parser():
    parser = argparse.ArgumentParser(prog="rfrecon")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset file")
    p.add_argument("--kind", choices=["synthetic", "cifar-binary", "cifar-onehot"],
                   default="synthetic")
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cifar-dir", default="")
    p.add_argument("--classes", default="6,9",
                   help="comma-separated class ids (cifar sources)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model-kind", choices=["rf", "two-layer"], default="rf")
    p.add_argument("--activation", choices=["relu", "tanh", "relu+tanh", "identity"],
                   default="relu")
    p.add_argument("--p", type=int, required=True,
                   help="feature count (rf) or last-layer parameter count (two-layer)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gd-step", type=float, default=1e-5)
    p.add_argument("--gd-steps", type=int, default=1_000_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct candidates from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True, help="number of candidate rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=20.0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--max-iters", type=int, default=500_000)
    p.add_argument("--threshold", type=float, default=1e-7)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default="")

    p = sub.add_parser("evaluate", help="score a reconstruction against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--flips", choices=["auto", "on", "off"], default="auto")

    p = sub.add_parser("hermite", help="print an activation's Hermite profile")
    p.add_argument("--activation", choices=["relu", "tanh", "relu+tanh", "identity"],
                   required=True)
    p.add_argument("--max-order", type=int, default=8)

    p = sub.add_parser("sweep", help="run a (p, seed) sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--jobs", type=int, default=0)
    p.add_argument("--p-grid", default="",
                   help="comma-separated grid override, e.g. 1n,2n,10dn")
    p.add_argument("--activation", default="",
                   choices=["", "relu", "tanh", "relu+tanh", "identity"])
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="seed override; repeat for several seeds")

    p = sub.add_parser("export-images",
                       help="PPM grid of originals (odd rows) vs reconstructions")
    p.add_argument("--data", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--columns", type=int, default=10)
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen_data(args):
    if args.kind == "synthetic":
        rng = RngStream(args.seed)
        X = sphere_uniform(rng, args.n, args.d)
        Y = noisy_linear_labels(rng, X)
        ds = Dataset(X=X, Y=Y, meta={"source": "synthetic", "seed": args.seed})
    else:
        records = read_cifar_dir(args.cifar_dir)
        classes = [int(c) for c in args.classes.split(",") if c.strip()]
        if args.kind == "cifar-binary":
            ds = build_cifar_subset(records, classes[0], classes[1], args.n)
        else:
            ds = one_hot_labels(records, classes, args.n // len(classes))
    save_dataset(args.out, ds)
    print(f"wrote {args.out}: n={ds.n} d={ds.d} k={ds.k}")
    return 0


def _cmd_train(args):
    ds = load_dataset(args.data)
    activation = get_activation(args.activation)
    rng = RngStream(args.seed)
    if args.model_kind == "rf":
        V = gaussian_matrix(rng, args.p, ds.d, 1.0 / np.sqrt(ds.d))
        model = train_rf(V, activation, ds.X, ds.Y)
    else:
        h = max(1, args.p // ds.k)
        theta1 = gaussian_matrix(rng, h, ds.d, 1.0 / np.sqrt(ds.d))
        theta2 = gaussian_matrix(rng, ds.k, h, 1.0 / np.sqrt(h))
        init = TwoLayerModel(theta1, theta2, theta2.copy(), activation)
        model = train_two_layer(init, ds.X, ds.Y, step=args.gd_step, steps=args.gd_steps)
    save_model(args.out, model)
    from .metrics import training_mse
    print(f"wrote {args.out}: train_mse={training_mse(model, ds.X, ds.Y):.3e}")
    return 0


def _cmd_reconstruct(args):
    model = load_model(args.model)
    if isinstance(model, RFModel):
        problem = ReconProblem.from_rf(model, args.n)
    else:
        problem = ReconProblem.from_two_layer(model, args.n)
    config = ReconConfig(step=args.step, momentum=args.momentum,
                         max_iters=args.max_iters, threshold=args.threshold)
    result = reconstruct(problem, config, RngStream(args.seed))
    ds = Dataset(X=result.x_hat, Y=np.zeros((args.n, 1)),
                 meta={"source": "reconstruction", "converged": result.converged,
                       "iterations": result.iterations,
                       "normalized_loss": result.normalized_loss})
    save_dataset(args.out, ds)
    if args.trace:
        write_trace_csv(args.trace, result.trace)
    print(f"wrote {args.out}: converged={result.converged} "
          f"iterations={result.iterations} loss={result.normalized_loss:.3e}")
    return 0


def _cmd_evaluate(args):
    ds = load_dataset(args.data)
    model = load_model(args.model)
    recon_ds = load_dataset(args.recon)
    if args.flips == "auto":
        profile = hermite_coefficients(model.activation)
        flips = assumption_check(profile).sign_ambiguity
    else:
        flips = args.flips == "on"
    report = metrics_report(model, ds.X, ds.Y, recon_ds.X, allow_sign_flips=flips)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_hermite(args):
    activation = get_activation(args.activation)
    profile = hermite_coefficients(activation, max_order=args.max_order)
    report = assumption_check(profile)
    out = {
        "activation": activation.name,
        "coefficients": [float(c) for c in profile.coefficients],
        "mixed_parity_order_ge_3": profile.mixed_parity_order_ge_3,
        "sum_sq_order_ge_3": profile.sum_sq_order_ge_3,
        "checks": report.to_dict(),
    }
    print(json.dumps(out, indent=2))
    return 0


def _cmd_sweep(args):
    config = SweepConfig.from_json_file(args.config)
    if args.out:
        config.out_dir = args.out
    if args.jobs:
        config.jobs = args.jobs
    if args.p_grid:
        config.p_grid = [entry for entry in args.p_grid.split(",") if entry]
    if args.activation:
        config.activation = args.activation
    if args.seed:
        config.seeds = list(args.seed)
    records, aggregates = run_sweep(config)
    failed = [rec for rec in records if rec.error]
    for row in aggregates:
        print(f"p={row['p']}: rho={row['rho_mean']:.4f}+-{row['rho_std']:.4f} "
              f"mse={row['mse_mean']:.3e} residual={row['residual_mean']:.3e} "
              f"({row['n_seeds']} seeds)")
    for rec in failed:
        print(f"FAILED p={rec.p} seed={rec.seed}: {rec.error}", file=sys.stderr)
    return 1 if failed else 0


def _cmd_export_images(args):
    ds = load_dataset(args.data)
    recon_ds = load_dataset(args.recon)
    assignment = assignment_rho(ds.X, recon_ds.X, allow_sign_flips=True)
    row_norms = (ds.meta.get("normalization") or {}).get("row_norms")
    tiles = []
    columns = max(1, args.columns)
    for start in range(0, ds.n, columns):
        block = range(start, min(start + columns, ds.n))
        for i in block:
            scale = row_norms[i] if row_norms else None
            tiles.append(row_to_rgb(ds.X[i], ds.meta, row_scale=scale))
        tiles.extend(
            row_to_rgb(
                assignment.sign_flips[i] * recon_ds.X[assignment.permutation[i]],
                ds.meta,
                row_scale=row_norms[i] if row_norms else None,
            )
            for i in block
        )
        # pad the last block so originals stay on odd rows
        for _ in range(columns - len(block)):
            tiles.insert(len(tiles) - len(block), np.zeros_like(tiles[-1]))
            tiles.append(np.zeros_like(tiles[-1]))
    write_ppm(args.out, image_grid(tiles, columns))
    print(f"wrote {args.out}: rho={assignment.rho:.4f}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "hermite": _cmd_hermite,
    "sweep": _cmd_sweep,
    "export-images": _cmd_export_images,
}


def cli_dispatch(argv):
    """Parse argv and run a subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
