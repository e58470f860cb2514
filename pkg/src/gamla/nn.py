"""Minimal dense feed-forward networks with exact backpropagation.

Everything here is plain float64 numpy. Training is single-threaded and
deterministic: given the same seed, config and data, two runs produce
bit-identical weights. Parameter blocks carry trainable flags; a frozen
block is never written to by the optimizer, so its bytes are preserved
exactly across training runs.

The training loop accepts any "trainable module", i.e. an object with

    forward_batch(X)        -> (N, out) predictions
    loss_and_grads(X, T)    -> (loss, {block_name: gradient})
    trainable_blocks()      -> {block_name: parameter array (live ref)}
    state_dict()            -> {block_name: copy of every parameter array}
    load_state_dict(state)  -> restore from such a snapshot

`MlpNetwork` implements this protocol; the second-round trainer in
`gamla.model` implements it for the expanded-bottleneck architecture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, SchemaError

TANH = "tanh"
IDENTITY = "identity"
_ACTIVATIONS = (TANH, IDENTITY)

ADAM = "adam"
SGD = "sgd"

MODEL_SCHEMA_VERSION = 1


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Fan-in/fan-out scaled uniform init; variance-preserving for tanh stacks."""
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


@dataclass
class DenseLayer:
    """One affine map plus activation: x -> act(W x + b).

    `weights` has shape (out_dim, in_dim). `train_weights`/`train_biases`
    freeze the corresponding block when False.
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: str = TANH
    train_weights: bool = True
    train_biases: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise DimensionMismatchError("weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise DimensionMismatchError(
                f"bias length {self.biases.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def preactivation(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.biases

    def activate(self, A: np.ndarray) -> np.ndarray:
        if self.activation == TANH:
            return np.tanh(A)
        return A

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.activate(self.preactivation(X))


class MlpNetwork:
    """A chain of dense layers with exact analytic gradients."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise DimensionMismatchError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatchError(
                    f"layer output {prev.out_dim} does not chain into input {nxt.in_dim}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply the network to a single vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionMismatchError(
                f"expected input of shape ({self.input_dim},), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected batch of shape (N, {self.input_dim}), got {X.shape}"
            )
        H = X
        for layer in self.layers:
            H = layer.apply(H)
        return H

    # -- training protocol ------------------------------------------------

    def trainable_blocks(self) -> dict[str, np.ndarray]:
        blocks = {}
        for i, layer in enumerate(self.layers):
            if layer.train_weights:
                blocks[f"L{i}.w"] = layer.weights
            if layer.train_biases:
                blocks[f"L{i}.b"] = layer.biases
        return blocks

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for i, layer in enumerate(self.layers):
            state[f"L{i}.w"] = layer.weights.copy()
            state[f"L{i}.b"] = layer.biases.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weights[...] = state[f"L{i}.w"]
            layer.biases[...] = state[f"L{i}.b"]

    def _forward_cached(self, X: np.ndarray):
        """Forward pass keeping post-activation values per layer."""
        hs = [X]
        for layer in self.layers:
            hs.append(layer.apply(hs[-1]))
        return hs

    def _backward(self, hs: list[np.ndarray], dY: np.ndarray, need_input_grad: bool = False):
        """Backpropagate dLoss/dOutput through the cached forward pass.

        Returns gradients for every parameter block (frozen blocks zeroed)
        and, optionally, dLoss/dInput.
        """
        grads: dict[str, np.ndarray] = {}
        delta = dY
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_out = hs[i + 1]
            if layer.activation == TANH:
                delta = delta * (1.0 - h_out * h_out)
            h_in = hs[i]
            gw = delta.T @ h_in
            gb = delta.sum(axis=0)
            grads[f"L{i}.w"] = gw if layer.train_weights else np.zeros_like(gw)
            grads[f"L{i}.b"] = gb if layer.train_biases else np.zeros_like(gb)
            if i > 0 or need_input_grad:
                delta = delta @ layer.weights
        return grads, (delta if need_input_grad else None)

    def loss_and_grads(self, X: np.ndarray, T: np.ndarray):
        """Mean per-sample L2-norm loss and its exact gradients."""
        if X.shape[0] != T.shape[0]:
            raise DimensionMismatchError("batch and targets must have equal row counts")
        hs = self._forward_cached(X)
        loss, dY = l2_loss_and_grad(hs[-1], T)
        grads, _ = self._backward(hs, dY)
        return loss, grads


def l2_loss(Y: np.ndarray, T: np.ndarray) -> float:
    """Mean over samples of the Euclidean norm of the residual."""
    return float(np.linalg.norm(Y - T, axis=1).mean())


def l2_loss_and_grad(Y: np.ndarray, T: np.ndarray):
    R = Y - T
    norms = np.linalg.norm(R, axis=1)
    loss = float(norms.mean())
    dY = np.zeros_like(R)
    nz = norms > 0.0
    # Zero-residual rows contribute a zero (sub)gradient.
    dY[nz] = R[nz] / (norms[nz, None] * len(norms))
    return loss, dY


def mean_squared_error(Y: np.ndarray, T: np.ndarray) -> float:
    """Mean over samples of the squared Euclidean residual norm."""
    return float(((Y - T) ** 2).sum(axis=1).mean())


def mlp(dims: list[int], activations: list[str] | None = None, seed: int = 0) -> MlpNetwork:
    """Build a seeded Glorot-initialized network with the given layer widths.

    `activations` has one entry per weight layer; defaults to tanh everywhere
    except the final layer.
    """
    if len(dims) < 2:
        raise DimensionMismatchError("need at least input and output dims")
    n_layers = len(dims) - 1
    if activations is None:
        activations = [TANH] * (n_layers - 1) + [IDENTITY]
    if len(activations) != n_layers:
        raise DimensionMismatchError("one activation per weight layer required")
    rng = np.random.default_rng(seed)
    layers = [
        DenseLayer(
            weights=glorot_uniform(dims[i + 1], dims[i], rng),
            biases=np.zeros(dims[i + 1]),
            activation=activations[i],
        )
        for i in range(n_layers)
    ]
    return MlpNetwork(layers)


@dataclass
class TrainConfig:
    """Optimizer settings; `final_lr` (when set) decays the step size
    exponentially per epoch down to that value. The per-sample norm loss
    keeps unit-scale gradients near the optimum, so tight convergence
    needs the decay."""

    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    optimizer: str = ADAM
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    final_lr: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in (ADAM, SGD):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        b1, b2 = self.adam_betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.final_lr is not None and not 0.0 < self.final_lr <= self.learning_rate:
            raise ValueError("final_lr must lie in (0, learning_rate]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the given epoch (0-based)."""
        if self.final_lr is None or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return self.learning_rate * (self.final_lr / self.learning_rate) ** frac


@dataclass
class TrainReport:
    initial_loss: float
    final_loss: float
    loss_curve: list[float] = field(default_factory=list)
    epochs_run: int = 0
    diverged: bool = False


class _Adam:
    def __init__(self, blocks: dict[str, np.ndarray], cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.b1, self.b2 = cfg.adam_betas
        self.eps = cfg.adam_eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in blocks.items()}
        self.v = {k: np.zeros_like(v) for k, v in blocks.items()}

    def step(self, blocks: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in blocks.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, blocks: dict[str, np.ndarray], cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, blocks: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, p in blocks.items():
            p -= self.lr * grads[k]


def train(module, data: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> TrainReport:
    """Minibatch training of any trainable module.

    Batch order is a seeded permutation per epoch, so the run is fully
    deterministic. If the loss goes non-finite the last finite epoch
    snapshot is restored and the report is flagged diverged.
    """
    data = np.asarray(data, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if data.shape[0] == 0:
        raise DimensionMismatchError("training data is empty")
    if data.shape[0] != targets.shape[0]:
        raise DimensionMismatchError("data and targets must have equal row counts")

    rng = np.random.default_rng(cfg.seed)
    blocks = module.trainable_blocks()
    opt = _Adam(blocks, cfg) if cfg.optimizer == ADAM else _Sgd(blocks, cfg)

    initial_loss = l2_loss(module.forward_batch(data), targets)
    report = TrainReport(initial_loss=initial_loss, final_loss=initial_loss)
    snapshot = module.state_dict()
    n = data.shape[0]

    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        ok = True
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = module.loss_and_grads(data[idx], targets[idx])
            if not math.isfinite(loss):
                ok = False
                break
            opt.step(blocks, grads)
        epoch_loss = l2_loss(module.forward_batch(data), targets) if ok else math.nan
        params_ok = ok and all(np.all(np.isfinite(p)) for p in blocks.values())
        if not params_ok or not math.isfinite(epoch_loss):
            module.load_state_dict(snapshot)
            report.diverged = True
            break
        report.loss_curve.append(epoch_loss)
        report.final_loss = epoch_loss
        report.epochs_run += 1
        snapshot = module.state_dict()

    return report


# -- serialization ---------------------------------------------------------


def network_to_dict(net: MlpNetwork) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "dims": list(net.dims),
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
                "activation": layer.activation,
                "train_weights": layer.train_weights,
                "train_biases": layer.train_biases,
            }
            for layer in net.layers
        ],
    }


def network_from_dict(doc: dict) -> MlpNetwork:
    try:
        if doc["schema_version"] != MODEL_SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {doc['schema_version']!r}")
        layers = [
            DenseLayer(
                weights=np.array(entry["weights"], dtype=float),
                biases=np.array(entry["biases"], dtype=float),
                activation=entry["activation"],
                train_weights=bool(entry["train_weights"]),
                train_biases=bool(entry["train_biases"]),
            )
            for entry in doc["layers"]
        ]
        net = MlpNetwork(layers)
        if list(net.dims) != list(doc["dims"]):
            raise SchemaError("declared dims do not match layer shapes")
    except (KeyError, TypeError, ValueError, DimensionMismatchError) as exc:
        raise SchemaError(f"malformed network document: {exc}") from exc
    for layer in net.layers:
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
            raise SchemaError("network file contains non-finite parameters")
    return net


def save_network(net: MlpNetwork, path) -> None:
    """Write the network as JSON; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, allow_nan=False)


def load_network(path) -> MlpNetwork:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not a valid network file: {exc}") from exc
    return network_from_dict(doc)
