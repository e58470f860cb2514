"""Command-line pipeline driver.

Every subcommand reads a RunConfig (key=value or JSON), writes its artifacts
into a run directory named by the config hash, and exits 0 on success. On
failure it prints one machine-parseable line to stderr,

    gamla-error: <category>: <message>

with exit code 2 for config errors, 3 for missing files and 4 for numeric
failures. Artifacts are byte-identical across re-runs with the same config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, geometry
from .config import RunConfig, parse_config
from .datasets import (
    Hyperrectangle,
    NoiseSpec,
    PointCloud,
    add_noise,
    gen_cylinder,
    gen_quadric,
    gen_quadric_with_hole,
    gen_swiss_roll,
    load_csv,
    save_csv,
)
from .errors import ConfigError, GamlaError, SchemaError
from .geometry import LevelSetSpec, MlpHead, filter_level_set, fit_implicit_taylor
from .model import (
    PHASE_ROUND1,
    PHASE_ROUND2,
    GamlaArchitecture,
    GamlaModel,
    expand_bottleneck,
    load_model,
    save_model,
    train_round1,
    train_round2,
)
from .nn import TrainConfig, mean_squared_error


class NumericFailure(GamlaError):
    """Training or a downstream solve failed numerically."""


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("GAMLA_THREADS", "1")))
    except ValueError:
        return 1


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    print(f"wrote {path}")


def _write_meta(path: Path, cfg: RunConfig) -> None:
    _write_json(path, cfg.meta())


def _run_dir(cfg: RunConfig) -> Path:
    run_dir = Path(cfg["out_dir"]) / cfg.hash
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.set("seed", args.seed)
        for key in ("dataset.seed", "round1.seed", "round2.seed"):
            cfg.set(key, args.seed)
    if args.out_dir is not None:
        cfg.set("out_dir", args.out_dir)
    return cfg


def _dataset_from_config(cfg: RunConfig) -> PointCloud:
    kind = cfg["dataset.kind"]
    count = cfg["dataset.count"]
    seed = cfg["dataset.seed"]
    if kind == "quadric":
        cloud = gen_quadric(count, seed)
    elif kind == "quadric_hole":
        cloud = gen_quadric_with_hole(
            count,
            seed,
            hole_center=(cfg["dataset.hole_cx"], cfg["dataset.hole_cy"]),
            hole_radius=cfg["dataset.hole_radius"],
        )
    elif kind == "cylinder":
        cloud = gen_cylinder(count, seed)
    elif kind == "swiss_roll":
        cloud = gen_swiss_roll(count, seed)
    elif kind == "csv":
        if not cfg["dataset.path"]:
            raise ConfigError("dataset.kind = csv requires dataset.path")
        cloud = load_csv(cfg["dataset.path"], header=not cfg["dataset.headerless"])
    else:
        raise ConfigError(f"unknown dataset.kind {kind!r}")
    sigma = cfg["dataset.noise_sigma"]
    if sigma > 0:
        cloud = add_noise(cloud, NoiseSpec(sigma), seed=cfg["dataset.noise_seed"])
    return cloud


def _train_config(cfg: RunConfig, section: str) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg[f"{section}.lr"],
        epochs=cfg[f"{section}.epochs"],
        batch_size=cfg[f"{section}.batch_size"],
        seed=cfg[f"{section}.seed"],
    )


def _architecture(cfg: RunConfig, ambient_dim: int) -> GamlaArchitecture:
    return GamlaArchitecture(ambient_dim, cfg["arch.m"], tuple(cfg["arch.hidden"]))


def _load_points_file(path: str, headerless: bool = False) -> PointCloud:
    if not Path(path).exists():
        raise FileNotFoundError(f"points file not found: {path}")
    return load_csv(path, header=not headerless)


def _load_model_file(path: str) -> GamlaModel:
    if not Path(path).exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return load_model(path)


def _check_report(report, what: str) -> None:
    if report.diverged:
        raise NumericFailure(f"{what} diverged; best snapshot kept but run is unusable")


# -- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    cloud = _dataset_from_config(cfg)
    out = run_dir / "dataset.csv"
    save_csv(cloud, out)
    print(f"wrote {out}")
    _write_meta(run_dir / "dataset.meta.json", cfg)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    cloud = _dataset_from_config(cfg)
    arch = _architecture(cfg, cloud.dim)
    model_path = run_dir / "model.json"

    model = None
    if args.full and model_path.exists():
        existing = load_model(model_path)
        if existing.phase == PHASE_ROUND1 and existing.arch == arch:
            model = existing
            print(f"resuming round 2 from {model_path}")
    if model is None:
        model = train_round1(cloud, arch, _train_config(cfg, "round1"), cfg["thresholds.xi"])
        _check_report(model.round1_report, "round 1")
    if args.full:
        cfg2 = _train_config(cfg, "round2")
        if model.phase == PHASE_ROUND1:
            expand_bottleneck(model, seed=cfg2.seed)
        box = Hyperrectangle.from_points(cloud.points, margin=cfg["ambient.margin"])
        count = cfg["round2.ambient_count"] or 2 * len(cloud)
        train_round2(
            model,
            box,
            count,
            cfg2,
            manifold_mix=cfg["round2.manifold_mix"],
            manifold_points=cloud.points,
        )
        _check_report(model.round2_report, "round 2")
    save_model(model, model_path)
    print(f"wrote {model_path} (phase {model.phase})")
    _write_meta(run_dir / "model.meta.json", cfg)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)
    cloud = _load_points_file(args.data)
    X = cloud.points
    stats = {
        "count": len(cloud),
        "mse_full": mean_squared_error(model.forward_batch(X), X),
        "mse_projected": mean_squared_error(model.project_batch(X), X),
        "phase": model.phase,
    }
    if model.phase == PHASE_ROUND2:
        residual = np.abs(model.comp_batch(X)).max(axis=1)
        stats["abs_residual"] = {
            "p50": float(np.percentile(residual, 50)),
            "p95": float(np.percentile(residual, 95)),
            "p99": float(np.percentile(residual, 99)),
            "max": float(residual.max()),
        }
    _write_json(run_dir / "eval.json", {"meta": cfg.meta(), "stats": stats})
    return 0


def cmd_geometry(args) -> int:
    import csv as _csv

    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)
    cloud = _load_points_file(args.points)
    head = model.head()
    n = model.ambient_dim
    with_normals = model.comp_dim == 1
    with_curvature = with_normals and n == 3
    out = run_dir / "geometry.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        header = [f"x{i + 1}" for i in range(n)] + ["abs_residual"]
        if with_normals:
            header += [f"normal{i + 1}" for i in range(n)]
        if with_curvature:
            header += ["gaussian_curvature"]
        w.writerow(header)
        for x in cloud.points:
            residual = float(np.abs(head(x[None, :])).max())
            row = [repr(float(v)) for v in x] + [repr(residual)]
            if with_normals:
                try:
                    normal = geometry.normal_vector(head, x)
                    row += [repr(float(v)) for v in normal]
                except GamlaError:
                    row += ["nan"] * n
            if with_curvature:
                try:
                    row += [repr(geometry.gaussian_curvature(head, x))]
                except GamlaError:
                    row += ["nan"]
            w.writerow(row)
    print(f"wrote {out}")
    _write_meta(run_dir / "geometry.meta.json", cfg)
    return 0


def cmd_taylor(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)

    def guess(x1, x2):
        return float(model.project(np.array([x1, x2, 0.0]))[2])

    poly = fit_implicit_taylor(
        model.head(),
        tau=cfg["taylor.tau"],
        half_width=cfg["taylor.half_width"],
        grid_points=cfg["taylor.grid"],
        x3_guess=guess,
    )
    doc = {
        "meta": cfg.meta(),
        "tau": cfg["taylor.tau"],
        "half_width": cfg["taylor.half_width"],
        "coefficients": poly.to_json_dict(),
        "raw_coefficients": {
            geometry.monomial_name(p, q): c for (p, q), c in sorted(poly.raw_coefficients.items())
        },
    }
    _write_json(run_dir / "taylor.json", doc)
    return 0


def cmd_level_set(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)
    box = model.ambient_box
    if box is None:
        raise NumericFailure("model has no ambient box; run both training rounds first")
    spec = LevelSetSpec(eps=cfg["geometry.eps"], box=box, count=cfg["level_set.count"])
    cloud = filter_level_set(model.head(), spec, seed=cfg["seed"])
    out = run_dir / "levelset.csv"
    save_csv(cloud, out)
    print(f"wrote {out} ({len(cloud)} survivors)")
    _write_meta(run_dir / "levelset.meta.json", cfg)
    return 0


def cmd_dim_scan(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    cloud = _dataset_from_config(cfg)
    report = analysis.dim_scan(
        cloud,
        cfg["dimscan.candidates"],
        tuple(cfg["arch.hidden"]),
        _train_config(cfg, "round1"),
        repeats=cfg["dimscan.repeats"],
        rho=cfg["dimscan.rho"],
    )
    report.write_csv(run_dir / "dimscan.csv")
    print(f"wrote {run_dir / 'dimscan.csv'}")
    _write_json(
        run_dir / "dimscan.json",
        {
            "meta": cfg.meta(),
            "chosen_m": report.chosen_m,
            "elbow_found": report.elbow_found,
            "candidates": report.candidates,
            "mean_errors": report.mean_errors,
        },
    )
    return 0


def cmd_sweep_structure(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    cloud = _dataset_from_config(cfg)
    grid = analysis.sweep_structure(
        cloud,
        cfg["sweep.depths"],
        cfg["sweep.widths"],
        _train_config(cfg, "round1"),
        repeats=cfg["sweep.repeats"],
        intrinsic_dim=cfg["sweep.m"],
        max_workers=_max_workers(),
    )
    grid.write_csv(run_dir / "sweep_structure.csv")
    print(f"wrote {run_dir / 'sweep_structure.csv'}")
    _write_meta(run_dir / "sweep_structure.meta.json", cfg)
    return 0


def cmd_sweep_noise(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    cloud = _dataset_from_config(cfg)
    arch = _architecture(cfg, cloud.dim)
    grid = analysis.sweep_noise(
        cloud,
        cfg["sweep.sigmas"],
        arch,
        _train_config(cfg, "round1"),
        repeats=cfg["sweep.repeats"],
        max_workers=_max_workers(),
    )
    grid.write_csv(run_dir / "sweep_noise.csv")
    print(f"wrote {run_dir / 'sweep_noise.csv'}")
    _write_meta(run_dir / "sweep_noise.meta.json", cfg)
    return 0


def cmd_anomaly(args) -> int:
    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)
    cloud = _load_points_file(args.data)
    threshold = cfg["anomaly.error_threshold"]
    thresholds = None
    if args.normal_data:
        normal = _load_points_file(args.normal_data)
        if threshold == 0.0:
            threshold = analysis.anomaly_threshold(model, normal, cfg["anomaly.percentile"])
        if model.comp_dim > 1:
            thresholds = analysis.component_thresholds(model, normal, cfg["anomaly.percentile"])
    elif threshold == 0.0:
        threshold = analysis.anomaly_threshold(model, cloud, cfg["anomaly.percentile"])
    records = analysis.score_anomalies(model, cloud, threshold, thresholds)
    out = run_dir / "anomaly.csv"
    analysis.write_anomaly_csv(records, out)
    print(f"wrote {out}")
    _write_json(
        run_dir / "anomaly.meta.json",
        {
            "meta": cfg.meta(),
            "error_threshold": threshold,
            "outliers": sum(r.is_outlier for r in records),
        },
    )
    return 0


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad point literal {text!r}: {exc}") from exc


def cmd_interpolate(args) -> int:
    import csv as _csv

    cfg = _load_config(args)
    run_dir = _run_dir(cfg)
    model = _load_model_file(args.model)
    if args.point_a and args.point_b:
        x_a, x_b = _parse_point(args.point_a), _parse_point(args.point_b)
    elif args.data and args.index_a is not None and args.index_b is not None:
        cloud = _load_points_file(args.data)
        x_a, x_b = cloud.points[args.index_a], cloud.points[args.index_b]
    else:
        raise ConfigError("interpolate needs --point-a/--point-b or --data with --index-a/--index-b")
    steps = cfg["interpolate.steps"]
    path_points = analysis.interpolate(model, x_a, x_b, steps)
    out = run_dir / "interpolate.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "blend"] + [f"x{i + 1}" for i in range(model.ambient_dim)])
        for i, row in enumerate(path_points):
            w.writerow([i, repr(i / (steps - 1))] + [repr(float(v)) for v in row])
    print(f"wrote {out}")
    _write_meta(run_dir / "interpolate.meta.json", cfg)
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value or JSON config file")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out-dir", help="override the output directory")

    parser = argparse.ArgumentParser(prog="gamla", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gamla {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="write the configured dataset as CSV")

    p = sub.add_parser("train", parents=[common], help="train the two-round model")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--round1-only", dest="full", action="store_false", help="stop after round 1")
    group.add_argument("--full", dest="full", action="store_true", help="run both rounds (default)")
    p.set_defaults(full=True)

    p = sub.add_parser("eval", parents=[common], help="reconstruction and residual statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("geometry", parents=[common], help="normals and curvature at query points")
    p.add_argument("--model", required=True)
    p.add_argument("--points", required=True)

    p = sub.add_parser("taylor", parents=[common], help="implicit polynomial fit of the constraint")
    p.add_argument("--model", required=True)

    p = sub.add_parser("level-set", parents=[common], help="filter box samples by |R| < eps")
    p.add_argument("--model", required=True)

    sub.add_parser("dim-scan", parents=[common], help="bottleneck-width elbow scan")
    sub.add_parser("sweep-structure", parents=[common], help="(depth, width) error grid")
    sub.add_parser("sweep-noise", parents=[common], help="noise robustness grid")

    p = sub.add_parser("anomaly", parents=[common], help="score and categorize points")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--normal-data", help="reference CSV of normal points for thresholds")

    p = sub.add_parser("interpolate", parents=[common], help="decode a latent segment")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="CSV to take endpoints from")
    p.add_argument("--index-a", type=int)
    p.add_argument("--index-b", type=int)
    p.add_argument("--point-a", help="comma-separated coordinates")
    p.add_argument("--point-b", help="comma-separated coordinates")

    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "geometry": cmd_geometry,
    "taylor": cmd_taylor,
    "level-set": cmd_level_set,
    "dim-scan": cmd_dim_scan,
    "sweep-structure": cmd_sweep_structure,
    "sweep-noise": cmd_sweep_noise,
    "anomaly": cmd_anomaly,
    "interpolate": cmd_interpolate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"gamla-error: config_parse: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"gamla-error: missing_file: {exc}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"gamla-error: bad_file: {exc}", file=sys.stderr)
        return 3
    except (GamlaError, FloatingPointError) as exc:
        print(f"gamla-error: numeric_failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
