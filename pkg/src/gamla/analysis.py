"""Procedures built on trained models: intrinsic-dimension scan, global
coordinate charts, latent interpolation, anomaly scoring and the
structure/noise sweep harnesses.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .datasets import NoiseSpec, PointCloud, add_noise
from .errors import DimensionMismatchError, PhaseError
from .model import (
    PHASE_ROUND2,
    GamlaArchitecture,
    GamlaModel,
    train_round1,
)
from .nn import TrainConfig, mean_squared_error

DEFAULT_ELBOW_RATIO = 0.9


def _cell_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


# -- intrinsic dimension ------------------------------------------------------


@dataclass
class DimScanReport:
    candidates: list[int]
    mean_errors: list[float]
    std_errors: list[float]
    per_run_errors: list[list[float]]
    chosen_m: int
    elbow_found: bool
    failed_candidates: list[int] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "mean_error", "std_error", "runs"])
            for m, mean, std, runs in zip(
                self.candidates, self.mean_errors, self.std_errors, self.per_run_errors
            ):
                w.writerow([m, repr(mean), repr(std), ";".join(repr(e) for e in runs)])


def choose_elbow(candidates: list[int], mean_errors: list[float], rho: float) -> tuple[int, bool]:
    """Smallest m whose successor no longer improves the error by factor rho."""
    for i in range(len(candidates) - 1):
        if mean_errors[i + 1] / mean_errors[i] > rho:
            return candidates[i], True
    return candidates[-1], False


def dim_scan(
    cloud: PointCloud,
    candidate_ms: list[int],
    hidden_dims: tuple[int, ...],
    cfg: TrainConfig,
    repeats: int = 10,
    rho: float = DEFAULT_ELBOW_RATIO,
) -> DimScanReport:
    """Scan bottleneck widths and pick the reconstruction-error elbow.

    Trains round 1 `repeats` times per candidate with distinct seeds and
    averages the final training error. The elbow is the smallest m whose
    successor's mean error exceeds rho times its own; if no candidate
    qualifies the largest one is returned with `elbow_found=False`.
    """
    candidate_ms = list(candidate_ms)
    if sorted(candidate_ms) != candidate_ms or len(set(candidate_ms)) != len(candidate_ms):
        raise ValueError("candidates must be strictly ascending")
    if any(m > cloud.dim for m in candidate_ms):
        raise ValueError("candidate bottleneck widths cannot exceed the ambient dim")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    seeds = _cell_seeds(cfg.seed, len(candidate_ms) * repeats)
    kept_ms, means, stds, all_runs, failed = [], [], [], [], []
    for ci, m in enumerate(candidate_ms):
        errors = []
        for r in range(repeats):
            run_cfg = replace(cfg, seed=seeds[ci * repeats + r])
            arch = GamlaArchitecture(cloud.dim, m, hidden_dims)
            model = train_round1(cloud, arch, run_cfg)
            if not model.round1_report.diverged:
                errors.append(model.round1_report.final_loss)
        if not errors:
            failed.append(m)
            warnings.warn(f"dim_scan: every repeat diverged for m={m}; cell excluded")
            continue
        kept_ms.append(m)
        means.append(float(np.mean(errors)))
        stds.append(float(np.std(errors)))
        all_runs.append(errors)

    if not kept_ms:
        raise ValueError("dim_scan: all candidates failed")
    if len(kept_ms) == 1:
        warnings.warn("dim_scan: single candidate; returning it without an elbow test")
        chosen, found = kept_ms[0], False
    else:
        chosen, found = choose_elbow(kept_ms, means, rho)
    return DimScanReport(
        candidates=kept_ms,
        mean_errors=means,
        std_errors=stds,
        per_run_errors=all_runs,
        chosen_m=chosen,
        elbow_found=found,
        failed_candidates=failed,
    )


# -- global coordinate chart --------------------------------------------------


@dataclass
class GridLine:
    """One character-space grid line decoded into the original space."""

    axis: int
    fixed_z: np.ndarray
    z_values: np.ndarray
    points: np.ndarray  # (points_per_line, n)


def grid_chart(
    model: GamlaModel,
    z_ranges: list[tuple[float, float]],
    lines_per_axis: int = 10,
    points_per_line: int = 50,
) -> list[GridLine]:
    """Decode character-space grid lines back into the original space.

    For each latent axis, one polyline per combination of the other axes'
    line positions, decoded with z_tilde = 0. The decoded lines trace the
    global coordinate chart the character space induces on the manifold.
    """
    m = model.intrinsic_dim
    if len(z_ranges) != m:
        raise DimensionMismatchError(f"need one z-range per character axis ({m})")
    if lines_per_axis < 1 or points_per_line < 2:
        raise ValueError("need >= 1 line per axis and >= 2 points per line")
    axes_positions = [np.linspace(lo, hi, lines_per_axis) for lo, hi in z_ranges]
    lines = []
    for axis in range(m):
        others = [j for j in range(m) if j != axis]
        fixed_grids = (
            np.stack(np.meshgrid(*[axes_positions[j] for j in others], indexing="ij"), axis=-1
                     ).reshape(-1, len(others))
            if others
            else np.zeros((1, 0))
        )
        sweep = np.linspace(*z_ranges[axis], points_per_line)
        for fixed in fixed_grids:
            Z = np.empty((points_per_line, m))
            Z[:, axis] = sweep
            for j, val in zip(others, fixed):
                Z[:, j] = val
            lines.append(
                GridLine(
                    axis=axis,
                    fixed_z=fixed.copy(),
                    z_values=sweep.copy(),
                    points=model.decode_batch(Z, None),
                )
            )
    return lines


def latent_ranges(model: GamlaModel, X: np.ndarray) -> list[tuple[float, float]]:
    """Per-axis range of the character coordinates over a batch."""
    Z, _ = model.encode_batch(X)
    return [(float(lo), float(hi)) for lo, hi in zip(Z.min(axis=0), Z.max(axis=0))]


# -- latent interpolation -----------------------------------------------------


def interpolate(model: GamlaModel, x_a: np.ndarray, x_b: np.ndarray, steps: int) -> np.ndarray:
    """Decode the latent segment between the characters of x_a and x_b.

    Returns `steps` points for blend weights 0, 1/(steps-1), ..., 1 on
    x_a's character; the first row is the projection of x_b, the last the
    projection of x_a (exactly, not just numerically).
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    za = model.encode(np.asarray(x_a, dtype=float)).z
    zb = model.encode(np.asarray(x_b, dtype=float)).z
    out = np.empty((steps, model.ambient_dim))
    for i in range(steps):
        lam = i / (steps - 1)
        if lam == 0.0:
            z = zb
        elif lam == 1.0:
            z = za
        else:
            z = lam * za + (1.0 - lam) * zb
        # Decode row by row so the endpoints follow the exact same code path
        # as project() and match it bit for bit.
        out[i] = model.decode_batch(z[None, :], None)[0]
    return out


# -- anomaly scoring ----------------------------------------------------------


@dataclass
class AnomalyRecord:
    index: int
    reconstruction_error: float
    z_tilde: np.ndarray
    score: float
    category: str
    is_outlier: bool


def categorize(z_tilde: np.ndarray, component_thresholds: np.ndarray | None = None) -> str:
    """Sign-pattern category of a complementary coordinate vector.

    Scalar case: "Type1" for z_tilde >= 0, "Type2" otherwise. Higher
    codimension: one of '+', '-', '0' per component, where '0' marks
    components below their threshold (default 0, i.e. pure signs).
    """
    z = np.atleast_1d(np.asarray(z_tilde, dtype=float))
    if z.shape[0] == 1:
        return "Type1" if z[0] >= 0 else "Type2"
    thr = np.zeros_like(z) if component_thresholds is None else np.asarray(component_thresholds)
    return "".join("0" if abs(v) <= t else ("+" if v > 0 else "-") for v, t in zip(z, thr))


def projection_errors(model: GamlaModel, X: np.ndarray) -> np.ndarray:
    return np.linalg.norm(X - model.project_batch(X), axis=1)


def anomaly_threshold(model: GamlaModel, normal_cloud: PointCloud, percentile: float = 99.0) -> float:
    """Outlier threshold: percentile of projection errors on normal data."""
    return float(np.percentile(projection_errors(model, normal_cloud.points), percentile))


def component_thresholds(
    model: GamlaModel, normal_cloud: PointCloud, percentile: float = 99.0
) -> np.ndarray:
    """Per-component |z_tilde| thresholds from normal data, for categorization."""
    Zt = model.comp_batch(normal_cloud.points)
    return np.percentile(np.abs(Zt), percentile, axis=0)


def score_anomalies(
    model: GamlaModel,
    cloud: PointCloud,
    error_threshold: float,
    thresholds: np.ndarray | None = None,
) -> list[AnomalyRecord]:
    """Score every point: projection error, z_tilde, ||z_tilde||^2 and category."""
    if model.phase != PHASE_ROUND2:
        raise PhaseError("anomaly scoring needs a fully trained model")
    X = cloud.points
    errors = projection_errors(model, X)
    Zt = model.comp_batch(X)
    return [
        AnomalyRecord(
            index=i,
            reconstruction_error=float(errors[i]),
            z_tilde=Zt[i].copy(),
            score=float(Zt[i] @ Zt[i]),
            category=categorize(Zt[i], thresholds),
            is_outlier=bool(errors[i] > error_threshold),
        )
        for i in range(len(X))
    ]


def write_anomaly_csv(records: list[AnomalyRecord], path) -> None:
    if not records:
        raise ValueError("no records to write")
    k = records[0].z_tilde.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["index", "reconstruction_error"]
            + [f"z_tilde{i + 1}" for i in range(k)]
            + ["score", "category", "is_outlier"]
        )
        for r in records:
            w.writerow(
                [r.index, repr(r.reconstruction_error)]
                + [repr(float(v)) for v in r.z_tilde]
                + [repr(r.score), r.category, int(r.is_outlier)]
            )


# -- sweep harnesses ----------------------------------------------------------


@dataclass
class SweepCell:
    params: dict
    errors: list[float]

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std_error(self) -> float:
        return float(np.std(self.errors))


@dataclass
class SweepGrid:
    cells: list[SweepCell]
    repeats: int

    def cell(self, **params) -> SweepCell:
        for c in self.cells:
            if all(c.params.get(k) == v for k, v in params.items()):
                return c
        raise KeyError(f"no sweep cell with params {params}")

    def write_csv(self, path) -> None:
        keys = sorted({k for c in self.cells for k in c.params})
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + ["mean_error", "std_error", "runs"])
            for c in self.cells:
                w.writerow(
                    [c.params.get(k, "") for k in keys]
                    + [repr(c.mean_error), repr(c.std_error), ";".join(repr(e) for e in c.errors)]
                )


def _structure_cell(cloud: PointCloud, m: int, L: int, C: int, cfg: TrainConfig, seeds) -> list[float]:
    arch = GamlaArchitecture.uniform(cloud.dim, m, depth=L, width=C)
    errors = []
    for s in seeds:
        model = train_round1(cloud, arch, replace(cfg, seed=s))
        errors.append(model.round1_report.final_loss)
    return errors


def _noise_cell(
    cloud: PointCloud, sigma: float, arch: GamlaArchitecture, cfg: TrainConfig, seed_pairs
) -> list[float]:
    errors = []
    for noise_seed, train_seed in seed_pairs:
        noisy = add_noise(cloud, NoiseSpec(sigma), seed=noise_seed) if sigma > 0 else cloud
        model = train_round1(noisy, arch, replace(cfg, seed=train_seed))
        errors.append(mean_squared_error(model.forward_batch(cloud.points), cloud.points))
    return errors


def _run_cells(jobs, max_workers: int):
    """Run cell closures, optionally fanning out across processes.

    Each job carries its own derived seeds, so results are identical
    regardless of worker count or scheduling order.
    """
    if max_workers <= 1:
        return [fn(*args) for fn, args in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(fn, *args) for fn, args in jobs]
        return [f.result() for f in futures]


def sweep_structure(
    cloud: PointCloud,
    depths: list[int],
    widths: list[int],
    cfg: TrainConfig,
    repeats: int,
    intrinsic_dim: int = 2,
    max_workers: int = 1,
) -> SweepGrid:
    """Mean round-1 error over a grid of (depth, width) architectures.

    Each cell uses `repeats` runs with distinct derived seeds; the error is
    the final mean per-sample reconstruction norm on the training cloud.
    """
    seeds = _cell_seeds(cfg.seed, len(depths) * len(widths) * repeats)
    jobs, params = [], []
    i = 0
    for L in depths:
        for C in widths:
            jobs.append((_structure_cell, (cloud, intrinsic_dim, L, C, cfg, seeds[i : i + repeats])))
            params.append({"L": L, "C": C})
            i += repeats
    results = _run_cells(jobs, max_workers)
    cells = [SweepCell(params=p, errors=e) for p, e in zip(params, results)]
    return SweepGrid(cells=cells, repeats=repeats)


def sweep_noise(
    cloud: PointCloud,
    sigmas: list[float],
    arch: GamlaArchitecture,
    cfg: TrainConfig,
    repeats: int,
    max_workers: int = 1,
) -> SweepGrid:
    """Train on noisy copies of the cloud; report clean-point squared error.

    For each sigma, Gaussian noise is drawn with a derived seed per repeat,
    round 1 is trained on the noisy cloud, and the cell records the mean
    squared reconstruction error of the original clean points.
    """
    seeds = _cell_seeds(cfg.seed, len(sigmas) * repeats * 2)
    jobs = []
    for j, sigma in enumerate(sigmas):
        pairs = [
            (seeds[2 * (j * repeats + r)], seeds[2 * (j * repeats + r) + 1]) for r in range(repeats)
        ]
        jobs.append((_noise_cell, (cloud, sigma, arch, cfg, pairs)))
    results = _run_cells(jobs, max_workers)
    cells = [SweepCell(params={"sigma": s}, errors=e) for s, e in zip(sigmas, results)]
    return SweepGrid(cells=cells, repeats=repeats)
