"""Experiment runners behind the CLI.

Each runner takes a typed config and an output directory, fans (width, seed)
tasks over an optional process pool, and writes plot-ready CSV plus a
manifest that echoes the full configuration, seeds, dataset digests, and
library versions (enough to reproduce the outputs byte-for-byte on the same
platform).
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data_io import LabeledDataset, circle_dataset, gaussian_dataset, load_idx, sphere_dataset
from .finite_net import (
    Architecture,
    TrainingDirection,
    empirical_ntk,
    forward,
    init,
    network_function,
    train,
)
from .function_space import (
    FunctionOnData,
    PiOperator,
    decompose_along,
    kernel_gd_exact_at,
    kernel_pca,
    regression_limit,
    zero_function,
)
from .limit_kernel import EmpiricalMeasure, cross_kernel, min_eigenvalue, ntk_stack
from .nonlinearity import from_name, pd_certificate
from .numerics import RngStream

# deviation of the 10th/90th Gaussian percentiles from the mean, in sigmas
Z_10_90 = 1.2815515655446004

# stream ids carve one seed into independent draws
_STREAM_NET = 0
_STREAM_TRAIN_DATA = 1
_STREAM_BATCH = 2


def _parse_scalar(text: str, typ):
    text = text.strip()
    if typ is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    return typ(text)


def parse_config_file(path) -> dict:
    """Flat key-value config: one `key = value` per line, '#' comments."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply_mapping(cfg, mapping: dict):
    """Overlay string key-values onto a config dataclass, with conversions."""
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for key, value in mapping.items():
        if key not in fields:
            raise ValueError(
                f"unknown config key {key!r} for {type(cfg).__name__} "
                f"(known: {', '.join(sorted(fields))})"
            )
        current = getattr(cfg, key)
        if isinstance(current, tuple):
            elem = int if all(isinstance(v, int) for v in current) and current else float
            parsed = tuple(_parse_scalar(tok, elem) for tok in str(value).split(",") if tok.strip())
        elif isinstance(current, bool):
            parsed = _parse_scalar(str(value), bool)
        elif isinstance(current, int):
            parsed = _parse_scalar(str(value), int)
        elif isinstance(current, float):
            parsed = _parse_scalar(str(value), float)
        else:
            parsed = str(value).strip()
        setattr(cfg, key, parsed)
    return cfg


def _seed_list(cfg) -> list:
    return list(cfg.seeds) if cfg.seeds else list(range(cfg.seed, cfg.seed + cfg.n_seeds))


def _dtype(cfg):
    if cfg.dtype == "f32":
        return np.float32
    if cfg.dtype == "f64":
        return np.float64
    raise ValueError(f"dtype must be f32 or f64, got {cfg.dtype!r}")


def _mlp(depth: int, width: int, n0: int, beta: float, nl) -> Architecture:
    widths = (n0,) + (width,) * (depth - 1) + (1,)
    return Architecture(widths, beta, nl)


def product_targets(points: np.ndarray) -> np.ndarray:
    return (points[:, 0] * points[:, 1])[:, None]


def _target_table(name: str, points: np.ndarray) -> np.ndarray:
    if name == "product":
        return product_targets(points)
    if name == "zero":
        return np.zeros((points.shape[0], 1))
    raise ValueError(f"unknown target {name!r} (known: product, zero)")


def _versions() -> dict:
    return {
        "ntk_lab": __version__,
        "numpy": np.__version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
    }


def _write_manifest(out_dir: Path, command: str, cfg, seeds, datasets: dict,
                    outputs: list, extra: Optional[dict] = None):
    manifest = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "seeds": list(seeds),
        "datasets": datasets,
        "outputs": outputs,
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fan_out(worker, payloads, jobs: int):
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# tangent-kernel convergence (wide nets on the circle, before/after training)
# ---------------------------------------------------------------------------


@dataclass
class NtkConvergenceConfig:
    depth: int = 4
    beta: float = 0.1
    nonlinearity: str = "relu"
    widths: tuple = (500, 4000)
    seed: int = 0
    n_seeds: int = 10
    seeds: tuple = ()
    train_count: int = 16  # training-set size (not pinned by the source task)
    target: str = "product"
    steps: int = 200
    lr: float = 1.0
    gamma_count: int = 128
    dtype: str = "f64"

    def resolve_full(self):
        self.widths = (500, 10000)


def _gamma_grid(count: int) -> np.ndarray:
    gammas = 2.0 * math.pi * np.arange(count) / count
    return gammas


def _ntk_convergence_worker(payload):
    (width, seed, depth, beta, nl_name, gamma_count, train_count, target,
     steps, lr, dtype_name, base_seed) = payload
    nl = from_name(nl_name)
    gammas = _gamma_grid(gamma_count)
    grid = np.column_stack([np.cos(gammas), np.sin(gammas)])
    grid_measure = EmpiricalMeasure(grid)
    train_ds = gaussian_dataset(train_count, 2, RngStream(base_seed, _STREAM_TRAIN_DATA))
    targets = _target_table(target, train_ds.measure.points)

    arch = _mlp(depth, width, 2, beta, nl)
    params = init(arch, RngStream(seed, _STREAM_NET), dtype=np.float32 if dtype_name == "f32" else np.float64)
    curve0 = empirical_ntk(params, grid_measure).block[0].copy()
    train(params, train_ds.measure, TrainingDirection.least_squares(targets),
          step_size=lr, steps=steps)
    curve1 = empirical_ntk(params, grid_measure).block[0].copy()
    return width, seed, gammas, curve0, curve1


def run_ntk_convergence(cfg: NtkConvergenceConfig, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nl = from_name(cfg.nonlinearity)
    seeds = _seed_list(cfg)
    gammas = _gamma_grid(cfg.gamma_count)
    grid = np.column_stack([np.cos(gammas), np.sin(gammas)])
    grid_measure = EmpiricalMeasure(grid)
    limit_curve = ntk_stack(grid_measure, cfg.depth, cfg.beta, nl).theta(cfg.depth)[0]

    payloads = [
        (width, seed, cfg.depth, cfg.beta, cfg.nonlinearity, cfg.gamma_count,
         cfg.train_count, cfg.target, cfg.steps, cfg.lr, cfg.dtype, cfg.seed)
        for width in cfg.widths
        for seed in seeds
    ]
    results = _fan_out(_ntk_convergence_worker, payloads, jobs)

    rows = []
    t_end = cfg.steps * cfg.lr
    for width, seed, gs, curve0, curve1 in results:
        for t, curve in ((0.0, curve0), (t_end, curve1)):
            rows.extend(
                [width, seed, _fmt(t), _fmt(g), _fmt(v), _fmt(lv)]
                for g, v, lv in zip(gs, curve, limit_curve)
            )
    _write_csv(out_dir / "curves.csv",
               ["width", "seed", "t", "gamma", "value", "limit_value"], rows)

    train_ds = gaussian_dataset(cfg.train_count, 2, RngStream(cfg.seed, _STREAM_TRAIN_DATA))
    return _write_manifest(
        out_dir, "ntk-convergence", cfg, seeds,
        datasets={"evaluation_grid": grid_measure.digest,
                  "training_inputs": train_ds.manifest()},
        outputs=["curves.csv"],
    )


# ---------------------------------------------------------------------------
# kernel regression (trained nets vs the limiting Gaussian percentiles)
# ---------------------------------------------------------------------------


@dataclass
class KernelRegressionConfig:
    depth: int = 4
    beta: float = 0.1
    nonlinearity: str = "relu"
    widths: tuple = (50, 1000)
    seed: int = 0
    n_seeds: int = 10
    seeds: tuple = ()
    train_count: int = 4
    angle_offset: float = math.pi / 4
    target: str = "product"
    steps: int = 1000
    lr: float = 1.0
    gamma_count: int = 64
    jitter: float = 0.0
    dtype: str = "f64"

    def resolve_full(self):
        pass  # source experiment already ran at these widths


def _kernel_regression_worker(payload):
    (width, seed, depth, beta, nl_name, train_count, angle_offset, target,
     steps, lr, gamma_count, dtype_name) = payload
    nl = from_name(nl_name)
    ds = circle_dataset(train_count, angle_offset)
    targets = _target_table(target, ds.measure.points)
    gammas = _gamma_grid(gamma_count)
    grid = np.column_stack([np.cos(gammas), np.sin(gammas)])

    arch = _mlp(depth, width, 2, beta, nl)
    params = init(arch, RngStream(seed, _STREAM_NET),
                  dtype=np.float32 if dtype_name == "f32" else np.float64)
    train(params, ds.measure, TrainingDirection.least_squares(targets),
          step_size=lr, steps=steps)
    final_curve = np.asarray(forward(params, grid).output[:, 0], dtype=np.float64)
    final_on_data = network_function(params, ds.measure)[:, 0]
    return width, seed, gammas, final_curve, final_on_data


def run_kernel_regression(cfg: KernelRegressionConfig, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nl = from_name(cfg.nonlinearity)
    seeds = _seed_list(cfg)

    ds = circle_dataset(cfg.train_count, cfg.angle_offset)
    targets = _target_table(cfg.target, ds.measure.points)
    fstar = FunctionOnData(targets, ds.measure)
    stack = ntk_stack(ds.measure, cfg.depth, cfg.beta, nl)
    gammas = _gamma_grid(cfg.gamma_count)
    grid = np.column_stack([np.cos(gammas), np.sin(gammas)])
    cross = cross_kernel(ds.measure, cfg.depth, cfg.beta, nl, grid)

    limit = regression_limit(stack.theta_gram(), stack.sigma_gram(), fstar,
                             jitter=cfg.jitter)
    mean = limit.mean_at(cross.theta[-1])[:, 0]
    std = np.sqrt(limit.variance_at(cross.theta[-1], cross.sigma[-1],
                                    cross.sigma_query_diag[-1]))

    rows = []
    for name, curve in (("p10", mean - Z_10_90 * std), ("p50", mean),
                        ("p90", mean + Z_10_90 * std)):
        rows.extend([name, "", "", _fmt(g), _fmt(v)] for g, v in zip(gammas, curve))

    payloads = [
        (width, seed, cfg.depth, cfg.beta, cfg.nonlinearity, cfg.train_count,
         cfg.angle_offset, cfg.target, cfg.steps, cfg.lr, cfg.gamma_count, cfg.dtype)
        for width in cfg.widths
        for seed in seeds
    ]
    results = _fan_out(_kernel_regression_worker, payloads, jobs)
    fit_errors = {}
    for width, seed, gs, curve, on_data in results:
        rows.extend(["net", width, seed, _fmt(g), _fmt(v)] for g, v in zip(gs, curve))
        fit_errors[f"{width}:{seed}"] = float(np.max(np.abs(on_data - targets[:, 0])))
    _write_csv(out_dir / "curves.csv", ["series", "width", "seed", "gamma", "value"], rows)

    return _write_manifest(
        out_dir, "kernel-regression", cfg, seeds,
        datasets={"training": ds.manifest(), "query_grid_count": cfg.gamma_count},
        outputs=["curves.csv"],
        extra={"fit_errors": fit_errors},
    )


# ---------------------------------------------------------------------------
# principal-component convergence (trajectory along one kernel eigenmode)
# ---------------------------------------------------------------------------


@dataclass
class PcaConvergenceConfig:
    depth: int = 4
    beta: float = 0.1
    nonlinearity: str = "relu"
    widths: tuple = (100, 1000)
    seed: int = 0
    n_seeds: int = 2
    seeds: tuple = ()
    batch: int = 512
    component_count: int = 3
    component_scale: float = 0.5
    steps: int = 500
    lr: float = 1.0
    record_every: int = 10
    dataset: str = "synthetic"  # "synthetic" | "idx:<images>,<labels>"
    input_dim: int = 784
    dtype: str = "f64"

    def resolve_full(self):
        self.widths = (100, 1000, 10000)
        self.steps = 2000


def _pca_dataset(cfg: PcaConvergenceConfig) -> LabeledDataset:
    if cfg.dataset == "synthetic":
        # pixel-like positive inputs with roughly the norm profile of
        # 28x28 grayscale digits
        gen = RngStream(cfg.seed, _STREAM_BATCH).generator()
        pixels = np.clip(np.abs(gen.standard_normal((cfg.batch, cfg.input_dim)) * 0.3), 0.0, 1.0)
        return LabeledDataset(
            measure=EmpiricalMeasure(pixels), targets=None,
            provenance={"kind": "synthetic_pixels", "count": cfg.batch,
                        "n0": cfg.input_dim, "seed": cfg.seed},
        )
    if cfg.dataset.startswith("idx:"):
        spec = cfg.dataset[len("idx:"):]
        images_path, _, labels_path = spec.partition(",")
        full = load_idx(images_path, labels_path or None)
        n = full.measure.count
        if n < cfg.batch:
            raise ValueError(f"dataset holds {n} images, batch needs {cfg.batch}")
        order = RngStream(cfg.seed, _STREAM_BATCH).generator().permutation(n)[: cfg.batch]
        return LabeledDataset(
            measure=EmpiricalMeasure(full.measure.points[np.sort(order)]),
            targets=None,
            provenance={**full.provenance, "batch": cfg.batch, "shuffle_seed": cfg.seed},
        )
    raise ValueError(f"unknown dataset spec {cfg.dataset!r}")


def _pca_net_worker(payload):
    (width, seed, depth, beta, nl_name, steps, lr, record_every, dtype_name,
     points, comp2_values, comp_scale) = payload
    nl = from_name(nl_name)
    measure = EmpiricalMeasure(points)
    comp2 = FunctionOnData(comp2_values, measure)
    arch = _mlp(depth, width, points.shape[1], beta, nl)
    params = init(arch, RngStream(seed, _STREAM_NET),
                  dtype=np.float32 if dtype_name == "f32" else np.float64)
    f0 = network_function(params, measure)
    target = f0 + comp_scale * comp2.values
    samples = []

    def recorder(step, t, _params, f):
        diff = FunctionOnData(f - target, measure)
        g, h = decompose_along(diff, comp2)
        samples.append((step, t, g.norm, h.norm))
        return {}

    train(params, measure, TrainingDirection.least_squares(target),
          step_size=lr, steps=steps, recorders=[recorder], record_every=record_every)
    return width, seed, samples


def run_pca_convergence(cfg: PcaConvergenceConfig, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nl = from_name(cfg.nonlinearity)
    seeds = _seed_list(cfg)

    ds = _pca_dataset(cfg)
    stack = ntk_stack(ds.measure, cfg.depth, cfg.beta, nl)
    op = PiOperator(stack.theta_gram())
    pca = kernel_pca(op, cfg.component_count)
    lam2 = float(pca.eigenvalues[1])
    comp2 = pca.components[1]

    _write_csv(out_dir / "eigenvalues.csv", ["index", "eigenvalue"],
               [[i, _fmt(lam)] for i, lam in enumerate(pca.eigenvalues)])
    pca.to_csv(out_dir / "components.csv")

    rows = []
    # exact function-space trajectory: straight line along the component
    times = cfg.lr * np.arange(0, cfg.steps + 1, cfg.record_every, dtype=float)
    f0 = zero_function(ds.measure)
    target = FunctionOnData(cfg.component_scale * comp2.values, ds.measure)
    for t in times:
        ft = kernel_gd_exact_at(op, f0, target, float(t))
        g, h = decompose_along(ft - target, comp2)
        rows.append(["limit", "", int(round(t / cfg.lr)), _fmt(t), _fmt(g.norm),
                     _fmt(h.norm), _fmt(cfg.component_scale * math.exp(-lam2 * t))])

    payloads = [
        (width, seed, cfg.depth, cfg.beta, cfg.nonlinearity, cfg.steps, cfg.lr,
         cfg.record_every, cfg.dtype, ds.measure.points, comp2.values,
         cfg.component_scale)
        for width in cfg.widths
        for seed in seeds
    ]
    results = _fan_out(_pca_net_worker, payloads, jobs)
    for width, seed, samples in results:
        rows.extend(
            [width, seed, step, _fmt(t), _fmt(g), _fmt(h),
             _fmt(cfg.component_scale * math.exp(-lam2 * t))]
            for step, t, g, h in samples
        )
    _write_csv(out_dir / "trajectories.csv",
               ["width", "seed", "step", "t", "g_norm", "h_norm", "analytic_g"], rows)

    return _write_manifest(
        out_dir, "pca-convergence", cfg, seeds,
        datasets={"batch": ds.manifest()},
        outputs=["eigenvalues.csv", "components.csv", "trajectories.csv"],
        extra={"eigenvalues": [float(v) for v in pca.eigenvalues]},
    )


# ---------------------------------------------------------------------------
# positive-definiteness certificate
# ---------------------------------------------------------------------------


@dataclass
class PdCertificateConfig:
    nonlinearity: str = "relu"
    n0: int = 3
    beta: float = 0.1
    order: int = 40
    threshold: float = 1e-12
    depth: int = 2
    sphere_count: int = 32
    seed: int = 0

    def resolve_full(self):
        pass


def run_pd_certificate(cfg: PdCertificateConfig, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nl = from_name(cfg.nonlinearity)
    cert = pd_certificate(nl, n0=cfg.n0, beta=cfg.beta, order=cfg.order,
                          threshold=cfg.threshold)
    sphere = sphere_dataset(cfg.sphere_count, cfg.n0, RngStream(cfg.seed, _STREAM_BATCH))
    stack = ntk_stack(sphere.measure, cfg.depth, cfg.beta, nl)
    gram = stack.theta_gram()
    report = {
        "nonlinearity": cfg.nonlinearity,
        "verdict": cert.verdict.value,
        "counts": {"even": cert.even_nonzero_count, "odd": cert.odd_nonzero_count},
        "threshold": cert.threshold,
        "order": cfg.order,
        "n0": cfg.n0,
        "beta": cfg.beta,
        "gram_depth": cfg.depth,
        "gram_points": cfg.sphere_count,
        "gram_min_eig": min_eigenvalue(gram),
        "gram_trace": float(np.trace(gram.block)),
        "dataset_digest": sphere.measure.digest,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _write_manifest(out_dir, "pd-certificate", cfg, [cfg.seed],
                    datasets={"sphere": sphere.manifest()},
                    outputs=["report.json"])
    return report
