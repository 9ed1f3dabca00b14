"""Sweep orchestration: run (p, seed) grids end to end and aggregate.

A cell = generate data, train, reconstruct, evaluate, all driven by RNG
streams derived from (seed, p) so results are independent of execution order
and of the worker count. Records and per-p aggregates land in CSV files
whose columns are part of the public interface.
"""

from __future__ import annotations

import csv
import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .activations import assumption_check, get_activation, hermite_coefficients
from .data import (build_cifar_subset, noisy_linear_labels, one_hot_labels,
                   read_cifar_dir, sphere_uniform)
from .linalg import RngStream, gaussian_matrix
from .metrics import assignment_rho, span_residual, training_mse
from .models import TwoLayerModel, train_rf, train_two_layer
from .recon import ReconConfig, ReconProblem, reconstruct

RECORD_COLUMNS = ["d", "n", "p", "seed", "train_mse", "rho", "residual",
                  "converged", "recon_iters", "train_ms", "recon_ms"]
AGGREGATE_COLUMNS = ["p", "rho_mean", "rho_std", "mse_mean", "mse_std",
                     "residual_mean", "residual_std", "n_seeds"]

_GRID_ENTRY = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(dn|n)\s*$")


def resolve_p_grid(raw_grid, d, n):
    """Resolve symbolic grid entries ("2n", "10dn", plain ints) to sorted ints."""
    if not raw_grid:
        raise ValueError("p grid must be non-empty")
    resolved = []
    for entry in raw_grid:
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            value = int(round(entry))
        else:
            match = _GRID_ENTRY.match(str(entry))
            if match:
                factor = float(match.group(1))
                base = d * n if match.group(2) == "dn" else n
                value = int(round(factor * base))
            else:
                try:
                    value = int(str(entry).strip())
                except ValueError:
                    raise ValueError(f"cannot parse p-grid entry {entry!r}") from None
        if value < 1:
            raise ValueError(f"p-grid entry {entry!r} resolves to {value} < 1")
        resolved.append(value)
    return sorted(set(resolved))


@dataclass
class SweepConfig:
    """Everything needed to run a sweep, loadable from a JSON document."""

    source: str = "synthetic"          # synthetic | cifar-binary | cifar-onehot
    d: int = 100
    n: int = 20
    k: int = 1
    activation: str = "relu"
    model: str = "rf"                  # rf | two-layer
    p_grid: list = field(default_factory=lambda: ["1n", "2n", "10dn"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    recon: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)   # two-layer: step, steps
    cifar_dir: str = ""
    cifar_classes: list = field(default_factory=lambda: [6, 9])
    out_dir: str = "sweep-out"
    jobs: int = 0                      # 0 = use available cores

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar-binary", "cifar-onehot"):
            raise ValueError(f"unknown data source {self.source!r}")
        if self.model not in ("rf", "two-layer"):
            raise ValueError(f"unknown model kind {self.model!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.seeds:
            raise ValueError("need at least one seed")
        get_activation(self.activation)
        resolve_p_grid(self.p_grid, self.d, self.n)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def resolved_grid(self):
        return resolve_p_grid(self.p_grid, self.d, self.n)

    def recon_config(self):
        return ReconConfig(**self.recon) if self.recon else ReconConfig()


@dataclass
class SweepRecord:
    """One (d, n, p, seed) cell's results."""

    d: int
    n: int
    p: int
    seed: int
    train_mse: float = float("nan")
    rho: float = float("nan")
    residual: float = float("nan")
    converged: bool = False
    recon_iters: int = 0
    train_ms: float = 0.0
    recon_ms: float = 0.0
    error: str = ""  # "stage: message" for failed cells; not part of the CSV

    def csv_row(self):
        out = []
        for name in RECORD_COLUMNS:
            value = getattr(self, name)
            # repr of a Python float is its shortest exact decimal form, so
            # the CSV round-trips bit-exactly
            out.append(repr(float(value)) if isinstance(value, (float, np.floating))
                       else str(value))
        return out

    def deterministic_fields(self):
        """Record contents minus wall-clock measurements."""
        out = asdict(self)
        out.pop("train_ms")
        out.pop("recon_ms")
        return out


def _generate_data(config, rng):
    if config.source == "synthetic":
        X = sphere_uniform(rng, config.n, config.d)
        Y = noisy_linear_labels(rng, X)
        return X, Y
    records = read_cifar_dir(config.cifar_dir)
    if config.source == "cifar-binary":
        a, b = config.cifar_classes[:2]
        ds = build_cifar_subset(records, a, b, config.n)
    else:
        per_class = config.n // len(config.cifar_classes)
        ds = one_hot_labels(records, config.cifar_classes, per_class)
    return ds.X, ds.Y


def _train_model(config, p, rng, X, Y):
    activation = get_activation(config.activation)
    if config.model == "rf":
        V = gaussian_matrix(rng, p, config.d, 1.0 / np.sqrt(config.d))
        return train_rf(V, activation, X, Y)
    k = Y.shape[1]
    h = max(1, p // k)
    theta1 = gaussian_matrix(rng, h, config.d, 1.0 / np.sqrt(config.d))
    theta2 = gaussian_matrix(rng, k, h, 1.0 / np.sqrt(h))
    init = TwoLayerModel(theta1, theta2, theta2.copy(), activation)
    step = float(config.train.get("step", 1e-5))
    steps = int(config.train.get("steps", 1_000_000))
    return train_two_layer(init, X, Y, step=step, steps=steps)


def run_cell(config, p, seed):
    """Run one sweep cell; failures are recorded, not raised."""
    record = SweepRecord(d=config.d, n=config.n, p=p, seed=seed)
    base = RngStream(seed)
    stage = "data"
    try:
        X, Y = _generate_data(config, base.derive(4 * p))
        stage = "train"
        t0 = time.perf_counter()
        model = _train_model(config, p, base.derive(4 * p + 1), X, Y)
        record.train_ms = (time.perf_counter() - t0) * 1e3
        if config.model == "two-layer":
            record.p = model.p_last
        record.train_mse = training_mse(model, X, Y)
        stage = "reconstruct"
        if config.model == "rf":
            problem = ReconProblem.from_rf(model, config.n)
        else:
            problem = ReconProblem.from_two_layer(model, config.n)
        t0 = time.perf_counter()
        result = reconstruct(problem, config.recon_config(), base.derive(4 * p + 2))
        record.recon_ms = (time.perf_counter() - t0) * 1e3
        record.converged = result.converged
        record.recon_iters = result.iterations
        stage = "evaluate"
        profile = hermite_coefficients(get_activation(config.activation))
        flips = assumption_check(profile).sign_ambiguity
        record.rho = assignment_rho(X, result.x_hat, allow_sign_flips=flips).rho
        record.residual = span_residual(model, X, result.x_hat)
    except Exception as exc:  # cell failures must not kill the sweep
        record.error = f"{stage}: {exc}"
    return record


def _cell_worker(args):
    config_dict, p, seed = args
    return run_cell(SweepConfig(**config_dict), p, seed)


def aggregate_records(records):
    """Per-p mean and population std of rho / train_mse / residual."""
    by_p = {}
    for rec in records:
        by_p.setdefault(rec.p, []).append(rec)
    rows = []
    for p in sorted(by_p):
        cells = by_p[p]
        rhos = np.array([c.rho for c in cells])
        mses = np.array([c.train_mse for c in cells])
        residuals = np.array([c.residual for c in cells])
        rows.append({
            "p": p,
            "rho_mean": float(np.mean(rhos)),
            "rho_std": float(np.std(rhos)),
            "mse_mean": float(np.mean(mses)),
            "mse_std": float(np.std(mses)),
            "residual_mean": float(np.mean(residuals)),
            "residual_std": float(np.std(residuals)),
            "n_seeds": len(cells),
        })
    return rows


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_records_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(SweepRecord(
                d=int(row["d"]), n=int(row["n"]), p=int(row["p"]),
                seed=int(row["seed"]), train_mse=float(row["train_mse"]),
                rho=float(row["rho"]), residual=float(row["residual"]),
                converged=row["converged"] == "True",
                recon_iters=int(row["recon_iters"]),
                train_ms=float(row["train_ms"]), recon_ms=float(row["recon_ms"]),
            ))
    return records


def write_aggregates_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([
                row["p"],
                *(repr(row[c]) for c in AGGREGATE_COLUMNS[1:-1]),
                row["n_seeds"],
            ])


def run_sweep(config, progress=None):
    """Run every (p, seed) cell, write records/aggregates CSV, return both.

    Cells execute on a process pool when jobs != 1; per-cell RNG streams are
    derived from (seed, p) so the worker count never changes the results.
    """
    out_dir = os.environ.get("RFRECON_OUT", config.out_dir)
    jobs = config.jobs or int(os.environ.get("RFRECON_JOBS", "0")) or os.cpu_count() or 1
    cells = [(p, seed) for p in config.resolved_grid() for seed in config.seeds]
    config_dict = asdict(config)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(
                _cell_worker, [(config_dict, p, seed) for p, seed in cells]
            ))
    else:
        records = [run_cell(config, p, seed) for p, seed in cells]
    if progress is not None:
        for rec in records:
            progress(rec)
    aggregates = aggregate_records(records)
    os.makedirs(out_dir, exist_ok=True)
    write_records_csv(os.path.join(out_dir, "records.csv"), records)
    write_aggregates_csv(os.path.join(out_dir, "aggregates.csv"), aggregates)
    failures = [rec for rec in records if rec.error]
    summary = {
        "cells": len(records),
        "failed": len(failures),
        "failures": [
            {"p": rec.p, "seed": rec.seed, "error": rec.error} for rec in failures
        ],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return records, aggregates
