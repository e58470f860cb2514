"""Analytic geometry of learned implicit constraints.

A constraint head is treated as an analytic map R: R^n -> R^k. Derivatives
come from forward-mode truncated Taylor (jet) propagation, which is exact up
to floating-point rounding: a `Jet` carries (value, gradient, Hessian) and
composes through +, *, affine maps and tanh by the usual truncated rules.

Any object with `input_dim`, `output_dim`, a batched `__call__(X) -> (N, k)`
and `jets(x, order) -> list[Jet]` works as a head; `MlpHead` implements this
for a dense-layer stack and `JetMap` wraps hand-written expressions (useful
for comparing a learned head against a known closed form).

Geometry delivered on top:

  - `normal_vector`: grad R / ||grad R|| for a codimension-1 constraint.
  - `gaussian_curvature`: K = (g^T adj(H) g) / ||g||^4 for a surface R=0
    in R^3, with g = grad R and H the Hessian of R.
  - `filter_level_set`: keep uniform box samples with max_i |R_i| < eps.
  - `fit_implicit_taylor`: solve R(x1, x2, x3) = 0 for x3 on a grid by
    Newton's method and least-squares fit a bivariate cubic, recovering the
    constraint as an explicit polynomial graph near the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import Hyperrectangle, PointCloud, empty_warning
from .errors import (
    DegenerateChartError,
    DimensionMismatchError,
    SingularPointError,
)
from .nn import IDENTITY, TANH, DenseLayer


class Jet:
    """Truncated Taylor expansion: value, gradient and (order 2) Hessian."""

    __slots__ = ("value", "gradient", "hessian")

    def __init__(self, value: float, gradient: np.ndarray, hessian: np.ndarray | None = None):
        self.value = float(value)
        self.gradient = np.asarray(gradient, dtype=float)
        self.hessian = None if hessian is None else np.asarray(hessian, dtype=float)

    @property
    def n(self) -> int:
        return self.gradient.shape[0]

    @property
    def order(self) -> int:
        return 1 if self.hessian is None else 2

    @classmethod
    def variable(cls, value: float, index: int, n: int, order: int = 2) -> "Jet":
        g = np.zeros(n)
        g[index] = 1.0
        return cls(value, g, np.zeros((n, n)) if order >= 2 else None)

    @classmethod
    def constant(cls, value: float, n: int, order: int = 2) -> "Jet":
        return cls(value, np.zeros(n), np.zeros((n, n)) if order >= 2 else None)

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(float(other), self.n, self.order)

    def __add__(self, other) -> "Jet":
        o = self._coerce(other)
        h = None if self.hessian is None else self.hessian + o.hessian
        return Jet(self.value + o.value, self.gradient + o.gradient, h)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.value, -self.gradient, None if self.hessian is None else -self.hessian)

    def __sub__(self, other) -> "Jet":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Jet":
        o = self._coerce(other)
        value = self.value * o.value
        grad = self.value * o.gradient + o.value * self.gradient
        h = None
        if self.hessian is not None:
            cross = np.outer(self.gradient, o.gradient)
            h = self.value * o.hessian + o.value * self.hessian + cross + cross.T
        return Jet(value, grad, h)

    __rmul__ = __mul__

    def tanh(self) -> "Jet":
        t = math.tanh(self.value)
        d1 = 1.0 - t * t
        h = None
        if self.hessian is not None:
            d2 = -2.0 * t * d1
            h = d1 * self.hessian + d2 * np.outer(self.gradient, self.gradient)
        return Jet(t, d1 * self.gradient, h)


def seed_jets(x: np.ndarray, order: int = 2) -> list[Jet]:
    """One variable jet per coordinate of x."""
    x = np.asarray(x, dtype=float)
    return [Jet.variable(x[i], i, x.shape[0], order) for i in range(x.shape[0])]


class MlpHead:
    """Analytic view of a dense-layer stack, with batched values and jets."""

    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatchError("head layers do not chain")
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, X: np.ndarray) -> np.ndarray:
        H = np.atleast_2d(np.asarray(X, dtype=float))
        for layer in self.layers:
            H = layer.apply(H)
        return H

    def jets(self, x: np.ndarray, order: int = 2) -> list[Jet]:
        """Exact jets of every output component at x.

        Propagates (values, Jacobian, Hessian stack) through the layers;
        tanh composes as J -> (1-t^2) J and
        H -> (1-t^2) H - 2 t (1-t^2) J J^T per component.
        """
        x = np.asarray(x, dtype=float)
        n = self.input_dim
        if x.shape != (n,):
            raise DimensionMismatchError(f"expected point of shape ({n},), got {x.shape}")
        V = x.copy()
        J = np.eye(n)
        H = np.zeros((n, n, n)) if order >= 2 else None
        for layer in self.layers:
            W = layer.weights
            V = W @ V + layer.biases
            J = W @ J
            if H is not None:
                H = np.einsum("ij,jab->iab", W, H)
            if layer.activation == TANH:
                t = np.tanh(V)
                d1 = 1.0 - t * t
                if H is not None:
                    d2 = -2.0 * t * d1
                    H = d1[:, None, None] * H + d2[:, None, None] * np.einsum(
                        "ia,ib->iab", J, J
                    )
                J = d1[:, None] * J
                V = t
        return [
            Jet(V[i], J[i], None if H is None else H[i]) for i in range(self.output_dim)
        ]


class JetMap:
    """Wrap a hand-written jet expression as a constraint head.

    `fn` maps a list of input Jets to a Jet or list of Jets. `batch_fn`,
    when given, evaluates plain values on an (N, n) array; otherwise batched
    calls fall back to row-by-row jet evaluation.
    """

    def __init__(self, fn, input_dim: int, output_dim: int = 1, batch_fn=None):
        self.fn = fn
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.batch_fn = batch_fn

    def jets(self, x: np.ndarray, order: int = 2) -> list[Jet]:
        out = self.fn(seed_jets(np.asarray(x, dtype=float), order))
        return list(out) if isinstance(out, (list, tuple)) else [out]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.batch_fn is not None:
            out = np.asarray(self.batch_fn(X), dtype=float)
            return out.reshape(X.shape[0], self.output_dim)
        vals = np.empty((X.shape[0], self.output_dim))
        for i, row in enumerate(X):
            vals[i] = [j.value for j in self.jets(row, order=1)]
        return vals


def eval_with_derivatives(head, x: np.ndarray, order: int = 2) -> list[Jet]:
    """Value, gradient and (order 2) Hessian of every component of the head at x."""
    if order not in (1, 2):
        raise ValueError("only derivative orders 1 and 2 are supported")
    return head.jets(x, order=order)


def normal_vector(head, x: np.ndarray, grad_tol: float = 1e-8) -> np.ndarray:
    """Unit normal of the level set of a scalar constraint at x.

    The orientation is whatever the learned constraint induces; callers that
    need a canonical sign must fix it themselves.
    """
    if head.output_dim != 1:
        raise DimensionMismatchError("normal_vector requires a codimension-1 head")
    (jet,) = head.jets(x, order=1)
    norm = np.linalg.norm(jet.gradient)
    if norm <= grad_tol:
        raise SingularPointError(f"constraint gradient vanishes at {x}")
    return jet.gradient / norm


def _adjugate3(A: np.ndarray) -> np.ndarray:
    (a, b, c), (d, e, f), (g, h, i) = A
    return np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ]
    )


def gaussian_curvature(head, x: np.ndarray, grad_tol: float = 1e-8) -> float:
    """Gaussian curvature of the surface {R = 0} in R^3 at x.

    Uses the implicit-surface identity K = (g^T adj(H) g) / ||g||^4; for a
    sphere head of radius r this gives exactly 1/r^2 and for a cylinder 0.
    """
    if head.output_dim != 1 or head.input_dim != 3:
        raise DimensionMismatchError("gaussian_curvature requires a scalar head on R^3")
    (jet,) = head.jets(x, order=2)
    g = jet.gradient
    norm = np.linalg.norm(g)
    if norm <= grad_tol:
        raise SingularPointError(f"constraint gradient vanishes at {x}")
    return float(g @ _adjugate3(jet.hessian) @ g / norm ** 4)


@dataclass
class LevelSetSpec:
    """Threshold, sampling box and sample count for level-set filtering."""

    eps: float
    box: Hyperrectangle
    count: int = 100_000

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def filter_level_set(head, spec: LevelSetSpec, seed: int) -> PointCloud:
    """Uniform box samples retained where max_i |R_i(x)| < eps."""
    X = spec.box.sample(spec.count, seed)
    residual = np.abs(head(X)).max(axis=1)
    survivors = X[residual < spec.eps]
    if len(survivors) == 0:
        empty_warning("filter_level_set")
    return PointCloud(
        survivors.reshape(-1, spec.box.dim),
        provenance={"filter": "level_set", "eps": spec.eps, "count": spec.count, "seed": seed},
    )


def monomial_name(p: int, q: int) -> str:
    if p == q == 0:
        return "1"
    parts = []
    if p:
        parts.append("x1" if p == 1 else f"x1^{p}")
    if q:
        parts.append("x2" if q == 1 else f"x2^{q}")
    return "*".join(parts)


_CUBIC_EXPONENTS = [(p, q) for total in range(4) for p in range(total, -1, -1) for q in [total - p]]


@dataclass
class TaylorPoly2D:
    """Bivariate cubic x3 = f(x1, x2) at the origin, thresholded at tau.

    `coefficients` holds only the surviving monomials (|c| >= tau);
    `raw_coefficients` keeps the full fitted set.
    """

    coefficients: dict[tuple[int, int], float]
    tau: float
    raw_coefficients: dict[tuple[int, int], float] = field(default_factory=dict)

    def evaluate(self, x1: float, x2: float) -> float:
        return float(sum(c * x1 ** p * x2 ** q for (p, q), c in self.coefficients.items()))

    def to_json_dict(self) -> dict[str, float]:
        return {monomial_name(p, q): c for (p, q), c in sorted(self.coefficients.items())}


def solve_height_newton(
    head,
    x1: float,
    x2: float,
    x3_start: float,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> tuple[float, bool]:
    """1-D Newton solve of R(x1, x2, x3) = 0 in x3; returns (root, converged)."""
    x3 = float(x3_start)
    for _ in range(max_iter):
        (jet,) = head.jets(np.array([x1, x2, x3]), order=1)
        if abs(jet.value) < tol:
            return x3, True
        slope = jet.gradient[2]
        if abs(slope) < 1e-14:
            return x3, False
        x3 -= jet.value / slope
    (jet,) = head.jets(np.array([x1, x2, x3]), order=1)
    return x3, abs(jet.value) < tol


def fit_implicit_taylor(
    head,
    tau: float,
    half_width: float = 0.3,
    grid_points: int = 21,
    x3_guess=None,
    max_fail_fraction: float = 0.05,
) -> TaylorPoly2D:
    """Recover x3 = f(x1, x2) from a scalar constraint on R^3 near the origin.

    Solves the constraint for x3 on a (grid_points x grid_points) lattice over
    [-half_width, half_width]^2 by Newton iteration, then least-squares fits a
    full bivariate cubic and suppresses coefficients below tau. `x3_guess`
    may be a constant or a callable (x1, x2) -> initial height; trained
    models should pass their on-manifold projection here.
    """
    if head.output_dim != 1 or head.input_dim != 3:
        raise DimensionMismatchError("fit_implicit_taylor requires a scalar head on R^3")
    if x3_guess is None:
        guess = lambda x1, x2: 0.0
    elif callable(x3_guess):
        guess = x3_guess
    else:
        guess = lambda x1, x2, v=float(x3_guess): v

    axis = np.linspace(-half_width, half_width, grid_points)
    solved = []
    failures = 0
    for x1 in axis:
        for x2 in axis:
            root, ok = solve_height_newton(head, x1, x2, guess(x1, x2))
            if ok:
                solved.append((x1, x2, root))
            else:
                failures += 1
    total = grid_points * grid_points
    if failures > max_fail_fraction * total:
        raise DegenerateChartError(
            f"height solve failed at {failures}/{total} grid points; "
            "the constraint is not a graph over (x1, x2) here"
        )

    pts = np.array(solved)
    design = np.column_stack([pts[:, 0] ** p * pts[:, 1] ** q for p, q in _CUBIC_EXPONENTS])
    coef, *_ = np.linalg.lstsq(design, pts[:, 2], rcond=None)
    raw = {pq: float(c) for pq, c in zip(_CUBIC_EXPONENTS, coef)}
    kept = {pq: c for pq, c in raw.items() if abs(c) >= tau}
    return TaylorPoly2D(coefficients=kept, tau=tau, raw_coefficients=raw)
