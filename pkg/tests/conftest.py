"""Shared test helpers: finite-difference oracles and hand-built constraint heads.

The finite-difference helpers are the independent oracles for every
derivative computed analytically in the package; they never call into the
jet or backprop code paths they check.
"""

import numpy as np

from gamla.geometry import JetMap, MlpHead
from gamla.nn import IDENTITY, TANH, DenseLayer, l2_loss

# Published coefficients of a constraint head learned on the quadric
# benchmark: R(x) = sum_i w_i * tanh(a_i . x + c_i) + d. Useful as a
# realistic fixed head for geometry tests that must not depend on training.
REF_HEAD_A = np.array(
    [
        [0.2093325, 0.04949709, -0.15945598],
        [0.3301388, 0.07136403, -0.17968029],
        [-0.5808623, -0.11274612, -0.15649709],
    ]
)
REF_HEAD_C = np.array([1.0170152, -0.16471033, -1.3647013])
REF_HEAD_W = np.array([[0.6709025, 0.26675373, 1.2869824]])
REF_HEAD_D = np.array([0.6553037])


def reference_head_layers():
    return [
        DenseLayer(REF_HEAD_A.copy(), REF_HEAD_C.copy(), activation=TANH),
        DenseLayer(REF_HEAD_W.copy(), REF_HEAD_D.copy(), activation=IDENTITY),
    ]


def reference_head() -> MlpHead:
    return MlpHead(reference_head_layers())


def fd_param_gradients(net, X, T, step=1e-6):
    """Central finite differences of the training loss per parameter entry."""
    grads = {}
    for key, arr in net.trainable_blocks().items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = l2_loss(net.forward_batch(X), T)
            flat[i] = orig - step
            down = l2_loss(net.forward_batch(X), T)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[key] = g
    return grads


def fd_gradient(head, x, component=0, step=1e-5):
    """Central finite differences of one head component."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (head(x + e)[0, component] - head(x - e)[0, component]) / (2 * step)
    return g


def fd_hessian(head, x, component=0, step=1e-4):
    """Central second differences of one head component."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    f0 = head(x)[0, component]
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        H[i, i] = (head(x + ei)[0, component] - 2 * f0 + head(x - ei)[0, component]) / step**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            H[i, j] = (
                head(x + ei + ej)[0, component]
                - head(x + ei - ej)[0, component]
                - head(x - ei + ej)[0, component]
                + head(x - ei - ej)[0, component]
            ) / (4 * step**2)
            H[j, i] = H[i, j]
    return H


def rel_err(got, want):
    """Matrix/vector relative error: sup-norm deviation over sup-norm scale."""
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    scale = max(np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale


def grad_close(got, want, rtol=1e-5, atol=1e-8):
    """Entrywise gradient agreement with an absolute floor above FD noise."""
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    return bool(np.all(np.abs(got - want) <= rtol * np.abs(want) + atol))


def sphere_head(radius):
    """Exact head R = x1^2 + x2^2 + x3^2 - r^2."""
    r2 = radius * radius

    def fn(j):
        return j[0] * j[0] + j[1] * j[1] + j[2] * j[2] - r2

    return JetMap(fn, 3, batch_fn=lambda X: (X**2).sum(axis=1) - r2)


def cylinder_head(radius=0.4, center=0.4):
    """Exact head R = (x1 - c)^2 + x2^2 - r^2 (axis along x3)."""
    r2 = radius * radius

    def fn(j):
        return (j[0] - center) * (j[0] - center) + j[1] * j[1] - r2

    return JetMap(fn, 3, batch_fn=lambda X: (X[:, 0] - center) ** 2 + X[:, 1] ** 2 - r2)


def graph_head(coeffs):
    """Exact head R = x3 - f(x1, x2) for a bivariate cubic f given as {(p, q): c}."""

    def fn(j):
        acc = j[2]
        for (p, q), c in coeffs.items():
            term = 1.0 * c
            for _ in range(p):
                term = term * j[0]
            for _ in range(q):
                term = term * j[1]
            acc = acc - term
        return acc

    def batch(X):
        val = X[:, 2].copy()
        for (p, q), c in coeffs.items():
            val -= c * X[:, 0] ** p * X[:, 1] ** q
        return val

    return JetMap(fn, 3, batch_fn=batch)
