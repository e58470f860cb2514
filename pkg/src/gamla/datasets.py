"""Benchmark manifold generators, noise injection, CSV ingestion and splits.

All generators are deterministic under their seed and produce points that
satisfy the defining equations to machine precision.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, SchemaError


@dataclass
class PointCloud:
    """N x n sample matrix with optional per-point labels."""

    points: np.ndarray
    labels: list | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise DimensionMismatchError("points must be an N x n matrix")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite entries")
        if self.labels is not None and len(self.labels) != len(self.points):
            raise DimensionMismatchError("one label per point required")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class NoiseSpec:
    """Isotropic Gaussian noise with per-axis standard deviation sigma."""

    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class Hyperrectangle:
    """Axis-aligned box given by per-axis (low, high) bounds."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        if self.low.shape != self.high.shape or self.low.ndim != 1:
            raise DimensionMismatchError("low/high must be 1-D arrays of equal length")
        if not np.all(self.low < self.high):
            raise ValueError("degenerate box: low must be < high on every axis")

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.low) & (X <= self.high), axis=1)

    def sample(self, count: int, seed: int) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        return rng.uniform(self.low, self.high, size=(count, self.dim))

    @classmethod
    def from_points(cls, X: np.ndarray, margin: float = 0.0) -> "Hyperrectangle":
        """Bounding box of X inflated by `margin` times the per-axis range."""
        X = np.asarray(X, dtype=float)
        low = X.min(axis=0)
        high = X.max(axis=0)
        pad = margin * (high - low)
        return cls(low - pad, high + pad)


_QUADRIC_RANGE = (-1.0, 1.5)


def quadric_height(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Height of the benchmark quadric graph over the (x1, x2) plane."""
    return -0.2 * x1 + 0.5 * x1 ** 2 + 0.2 * x1 * x2


def gen_quadric(count: int, seed: int) -> PointCloud:
    """Quadric surface x3 = -0.2*x1 + 0.5*x1^2 + 0.2*x1*x2, params uniform in (-1, 1.5)^2."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    uv = rng.uniform(*_QUADRIC_RANGE, size=(count, 2))
    pts = np.column_stack([uv[:, 0], uv[:, 1], quadric_height(uv[:, 0], uv[:, 1])])
    return PointCloud(pts, provenance={"generator": "quadric", "count": count, "seed": seed})


def gen_quadric_with_hole(
    count: int, seed: int, hole_center: tuple[float, float] = (0.25, 0.25), hole_radius: float = 0.4
) -> PointCloud:
    """Quadric cloud rejection-sampled outside a disk in the (x1, x2) plane."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if hole_radius < 0:
        raise ValueError("hole_radius must be >= 0")
    lo, hi = _QUADRIC_RANGE
    corners = np.array([[lo, lo], [lo, hi], [hi, lo], [hi, hi]])
    if np.all(np.hypot(*(corners - hole_center).T) <= hole_radius):
        raise ValueError("hole covers the entire sampling domain")
    rng = np.random.default_rng(seed)
    kept = []
    remaining = count
    for _ in range(1000):
        uv = rng.uniform(lo, hi, size=(remaining, 2))
        d2 = (uv[:, 0] - hole_center[0]) ** 2 + (uv[:, 1] - hole_center[1]) ** 2
        uv = uv[d2 >= hole_radius ** 2]
        if len(uv):
            kept.append(uv)
            remaining -= len(uv)
        if remaining == 0:
            break
    else:
        raise ValueError("rejection sampling failed; hole leaves too little area")
    uv = np.vstack(kept)
    pts = np.column_stack([uv[:, 0], uv[:, 1], quadric_height(uv[:, 0], uv[:, 1])])
    return PointCloud(
        pts,
        provenance={
            "generator": "quadric_hole",
            "count": count,
            "seed": seed,
            "hole_center": list(hole_center),
            "hole_radius": hole_radius,
        },
    )


def gen_cylinder(count: int, seed: int) -> PointCloud:
    """Three-quarter cylinder of radius 0.4 centered on (0.4, 0): theta in (0, 1.5*pi), x3 in (-0.4, 0.4)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 1.5 * np.pi, size=count)
    ell = rng.uniform(-0.4, 0.4, size=count)
    pts = np.column_stack([0.4 * np.cos(theta) + 0.4, 0.4 * np.sin(theta), ell])
    return PointCloud(pts, provenance={"generator": "cylinder", "count": count, "seed": seed})


def gen_swiss_roll(count: int, seed: int) -> PointCloud:
    """Swiss roll (x1, x3) = 0.04*t*(cos t, sin t) with t = 1.5*pi*(1+2r), x2 in (0, 0.8)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.0, 1.0, size=count)
    ell = rng.uniform(0.0, 0.8, size=count)
    t = 1.5 * np.pi * (1.0 + 2.0 * r)
    pts = np.column_stack([0.04 * t * np.cos(t), ell, 0.04 * t * np.sin(t)])
    return PointCloud(pts, provenance={"generator": "swiss_roll", "count": count, "seed": seed})


GENERATORS = {
    "quadric": gen_quadric,
    "quadric_hole": gen_quadric_with_hole,
    "cylinder": gen_cylinder,
    "swiss_roll": gen_swiss_roll,
}


def add_noise(cloud: PointCloud, spec: NoiseSpec, seed: int) -> PointCloud:
    """Add i.i.d. N(0, sigma^2) displacement to every coordinate."""
    rng = np.random.default_rng(seed)
    noisy = cloud.points + rng.normal(0.0, spec.sigma, size=cloud.points.shape)
    prov = dict(cloud.provenance)
    prov.update({"noise_sigma": spec.sigma, "noise_seed": seed})
    return PointCloud(noisy, labels=cloud.labels, provenance=prov)


def split(cloud: PointCloud, holdout_fraction: float, seed: int) -> tuple[PointCloud, PointCloud]:
    """Deterministic disjoint train/test split; test gets round(N*fraction) points."""
    if not 0.0 <= holdout_fraction <= 1.0:
        raise ValueError("holdout_fraction must lie in [0, 1]")
    n = len(cloud)
    n_test = int(round(n * holdout_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    def take(idx):
        labels = [cloud.labels[i] for i in idx] if cloud.labels is not None else None
        prov = dict(cloud.provenance)
        prov.update({"split_seed": seed, "split_size": len(idx)})
        return PointCloud(cloud.points[idx], labels=labels, provenance=prov)

    return take(train_idx), take(test_idx)


# -- CSV ingestion -----------------------------------------------------------


def save_csv(cloud: PointCloud, path) -> None:
    """Header "x1,...,xn[,label]", LF endings, full round-trip float precision."""
    header = [f"x{i + 1}" for i in range(cloud.dim)]
    if cloud.labels is not None:
        header.append("label")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(cloud.points):
            out = [repr(float(v)) for v in row]
            if cloud.labels is not None:
                out.append(str(cloud.labels[i]))
            writer.writerow(out)


def load_csv(path, header: bool = True) -> PointCloud:
    """Read a point cloud; a trailing "label" column becomes labels.

    With header=False every column must be numeric.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    has_label = False
    if header:
        head = rows[0]
        if not head or not head[0].startswith("x"):
            raise SchemaError(f"{path}: expected a header row like x1,x2,...")
        has_label = head[-1] == "label"
        rows = rows[1:]
        if not rows:
            raise SchemaError(f"{path}: no data rows")
        width = len(head)
    else:
        width = len(rows[0])
    n_cols = width - 1 if has_label else width
    points = np.empty((len(rows), n_cols))
    labels = [] if has_label else None
    for i, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(f"{path}: ragged row {i + 1} ({len(row)} fields, expected {width})")
        try:
            points[i] = [float(v) for v in row[:n_cols]]
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric cell in row {i + 1}: {exc}") from exc
        if has_label:
            labels.append(row[-1])
    cloud = PointCloud(points, labels=labels, provenance={"source": str(path)})
    return cloud


def empty_warning(name: str) -> None:
    warnings.warn(f"{name}: no points survived filtering", stacklevel=3)
