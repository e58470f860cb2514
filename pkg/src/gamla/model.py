"""Two-round autoencoder training with a complementary constraint head.

Round 1 trains a symmetric autoencoder whose bottleneck has the manifold's
intrinsic dimension m; the encoder output z is the character representation
and the decoder is a parametric chart for the manifold. Round 2 widens the
bottleneck to the ambient dimension n by adding n - m nodes, freezes every
round-1 parameter, and trains only the new connections to reconstruct
samples drawn uniformly from an ambient hyperrectangle. The map from input
to the new nodes, z_tilde = R(x), then vanishes on the manifold and serves
as an implicit analytic description R(x) = 0 of it.

The expansion is stored as three separate parameter blocks (input weights,
biases and decoder columns of the new nodes), so round-1 parameters are
frozen by construction: round-2 training never touches their arrays, and
decoding with z_tilde suppressed follows the exact round-1 code path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json

import numpy as np

from . import nn
from .datasets import Hyperrectangle, PointCloud
from .errors import DimensionMismatchError, PhaseError, SchemaError
from .geometry import MlpHead
from .nn import (
    IDENTITY,
    TANH,
    DenseLayer,
    MlpNetwork,
    TrainConfig,
    TrainReport,
    glorot_uniform,
    mean_squared_error,
)

PHASE_ROUND1 = "after_round1"
PHASE_EXPANDED = "expanded"
PHASE_ROUND2 = "after_round2"

GAMLA_SCHEMA_VERSION = 1

DEFAULT_RECON_THRESHOLD = 1e-4
DEFAULT_AMBIENT_MARGIN = 0.25
DEFAULT_MANIFOLD_MIX = 0.10


def _child_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass(frozen=True)
class GamlaArchitecture:
    """Symmetric autoencoder layout: (n, hidden..., m, reversed hidden..., n)."""

    ambient_dim: int
    intrinsic_dim: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        n, m = self.ambient_dim, self.intrinsic_dim
        if n < 1 or m < 1:
            raise ValueError("dimensions must be positive")
        if m > n:
            raise ValueError(f"intrinsic dim {m} exceeds ambient dim {n}")
        for h in self.hidden_dims:
            if h < n:
                raise ValueError(f"hidden width {h} smaller than ambient dim {n}")

    @property
    def structure(self) -> tuple[int, ...]:
        return (
            (self.ambient_dim,)
            + self.hidden_dims
            + (self.intrinsic_dim,)
            + tuple(reversed(self.hidden_dims))
            + (self.ambient_dim,)
        )

    @classmethod
    def from_structure(cls, dims) -> "GamlaArchitecture":
        dims = tuple(int(d) for d in dims)
        if len(dims) < 3 or len(dims) % 2 == 0:
            raise ValueError("structure must be an odd-length list like (n, ..., m, ..., n)")
        k = len(dims) // 2
        if dims[0] != dims[-1]:
            raise ValueError("input and output widths must match")
        for i in range(k):
            if dims[i] != dims[-1 - i]:
                raise ValueError("encoder and decoder widths must be symmetric")
        return cls(ambient_dim=dims[0], intrinsic_dim=dims[k], hidden_dims=dims[1:k])

    @classmethod
    def uniform(cls, ambient_dim: int, intrinsic_dim: int, depth: int, width: int):
        """The (L, C) family: L hidden layers of width C on each side."""
        return cls(ambient_dim, intrinsic_dim, (width,) * depth)


@dataclass
class LatentPoint:
    """Character coordinates z plus complementary coordinates z_tilde."""

    z: np.ndarray
    z_tilde: np.ndarray


def build_round1_nets(arch: GamlaArchitecture, seed: int) -> tuple[MlpNetwork, MlpNetwork]:
    """Seeded Glorot nets for round 1; tanh hidden layers, identity bottleneck/output."""
    dims = arch.structure
    k = len(dims) // 2
    acts = [TANH] * (len(dims) - 1)
    acts[k - 1] = IDENTITY
    acts[-1] = IDENTITY
    net = nn.mlp(list(dims), acts, seed=seed)
    return MlpNetwork(net.layers[:k]), MlpNetwork(net.layers[k:])


class GamlaModel:
    """Trained state of the two-round protocol."""

    def __init__(
        self,
        arch: GamlaArchitecture,
        encoder_net: MlpNetwork,
        decoder_net: MlpNetwork,
        phase: str = PHASE_ROUND1,
    ):
        self.arch = arch
        self.encoder_net = encoder_net
        self.decoder_net = decoder_net
        self.phase = phase
        self.comp_w: np.ndarray | None = None  # (n-m, trunk width)
        self.comp_b: np.ndarray | None = None  # (n-m,)
        self.comp_v: np.ndarray | None = None  # (first decoder width, n-m)
        self.ambient_box: Hyperrectangle | None = None
        self.round1_report: TrainReport | None = None
        self.round2_report: TrainReport | None = None
        self.recon_mse: float | None = None
        self.fully_reconstructed: bool | None = None
        self._train_points: np.ndarray | None = None

    # -- dimensions --------------------------------------------------------

    @property
    def ambient_dim(self) -> int:
        return self.arch.ambient_dim

    @property
    def intrinsic_dim(self) -> int:
        return self.arch.intrinsic_dim

    @property
    def comp_dim(self) -> int:
        return self.ambient_dim - self.intrinsic_dim

    @property
    def trunk_layers(self) -> list[DenseLayer]:
        return self.encoder_net.layers[:-1]

    @property
    def bottleneck_layer(self) -> DenseLayer:
        return self.encoder_net.layers[-1]

    # -- maps ----------------------------------------------------------------

    def _trunk_batch(self, X: np.ndarray) -> np.ndarray:
        H = X
        for layer in self.trunk_layers:
            H = layer.apply(H)
        return H

    def encode_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.ambient_dim:
            raise DimensionMismatchError(
                f"expected points of dimension {self.ambient_dim}, got {X.shape[1]}"
            )
        H = self._trunk_batch(X)
        Z = self.bottleneck_layer.apply(H)
        if self.phase == PHASE_ROUND1 or self.comp_w is None:
            Zt = np.zeros((X.shape[0], 0))
        else:
            Zt = H @ self.comp_w.T + self.comp_b
        return Z, Zt

    def decode_batch(self, Z: np.ndarray, Zt: np.ndarray | None = None) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.intrinsic_dim:
            raise DimensionMismatchError(
                f"expected character coordinates of dimension {self.intrinsic_dim}"
            )
        first = self.decoder_net.layers[0]
        A = Z @ first.weights.T + first.biases
        if Zt is not None and np.size(Zt):
            Zt = np.atleast_2d(np.asarray(Zt, dtype=float))
            if Zt.shape[1] != self.comp_dim:
                raise DimensionMismatchError(
                    f"expected complementary coordinates of dimension {self.comp_dim}"
                )
            if self.comp_v is None:
                raise PhaseError("model has no complementary head yet")
            A = A + Zt @ self.comp_v.T
        H = first.activate(A)
        for layer in self.decoder_net.layers[1:]:
            H = layer.apply(H)
        return H

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        Z, Zt = self.encode_batch(X)
        return self.decode_batch(Z, Zt)

    def project_batch(self, X: np.ndarray) -> np.ndarray:
        """Decode with z_tilde suppressed: the on-manifold image of X."""
        Z, _ = self.encode_batch(X)
        return self.decode_batch(Z, None)

    def comp_batch(self, X: np.ndarray) -> np.ndarray:
        """Complementary coordinates z_tilde = R(x) for a batch."""
        _, Zt = self.encode_batch(X)
        return Zt

    def encode(self, x: np.ndarray) -> LatentPoint:
        Z, Zt = self.encode_batch(np.asarray(x, dtype=float)[None, :])
        return LatentPoint(z=Z[0], z_tilde=Zt[0])

    def decode(self, lp: LatentPoint) -> np.ndarray:
        zt = lp.z_tilde if np.size(lp.z_tilde) else None
        return self.decode_batch(lp.z[None, :], None if zt is None else zt[None, :])[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(x))

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.project_batch(np.asarray(x, dtype=float)[None, :])[0]

    def head(self) -> MlpHead:
        """The constraint map R as an analytic head (trunk + new-node affine)."""
        if self.comp_w is None:
            raise PhaseError("complementary head exists only after bottleneck expansion")
        comp = DenseLayer(
            self.comp_w, self.comp_b, activation=IDENTITY, train_weights=False, train_biases=False
        )
        return MlpHead(self.trunk_layers + [comp])

    def frozen_state(self) -> dict[str, bytes]:
        """Byte snapshot of every round-1 parameter block."""
        state = {}
        for tag, net in (("enc", self.encoder_net), ("dec", self.decoder_net)):
            for i, layer in enumerate(net.layers):
                state[f"{tag}.L{i}.w"] = layer.weights.tobytes()
                state[f"{tag}.L{i}.b"] = layer.biases.tobytes()
        return state


def train_round1(
    cloud: PointCloud,
    arch: GamlaArchitecture,
    cfg: TrainConfig,
    recon_threshold: float = DEFAULT_RECON_THRESHOLD,
) -> GamlaModel:
    """First round: fit the symmetric autoencoder to the manifold samples.

    The model is flagged fully reconstructed when the mean squared
    reconstruction error falls below `recon_threshold`; callers may proceed
    either way, but the complementary head's guarantees weaken if not.
    """
    if cloud.dim != arch.ambient_dim:
        raise DimensionMismatchError(
            f"cloud dimension {cloud.dim} != architecture ambient dim {arch.ambient_dim}"
        )
    init_seed = _child_seeds(cfg.seed, 1)[0]
    encoder_net, decoder_net = build_round1_nets(arch, init_seed)
    full = MlpNetwork(encoder_net.layers + decoder_net.layers)
    X = cloud.points
    report = nn.train(full, X, X, cfg)
    model = GamlaModel(arch, encoder_net, decoder_net, phase=PHASE_ROUND1)
    model.round1_report = report
    model.recon_mse = mean_squared_error(full.forward_batch(X), X)
    model.fully_reconstructed = model.recon_mse < recon_threshold
    model._train_points = X
    return model


def expand_bottleneck(model: GamlaModel, seed: int = 0) -> GamlaModel:
    """Widen the bottleneck to the ambient dimension with fresh trainable nodes.

    Freezes all round-1 parameters and initializes the three new blocks with
    the same seeded Glorot scheme as round 1. Returns the same model object.
    """
    if model.phase != PHASE_ROUND1:
        raise PhaseError(f"bottleneck already expanded (phase {model.phase})")
    if model.comp_dim < 1:
        raise PhaseError("intrinsic dim equals ambient dim; nothing to expand")
    for net in (model.encoder_net, model.decoder_net):
        for layer in net.layers:
            layer.train_weights = False
            layer.train_biases = False
    rng = np.random.default_rng(seed)
    trunk_width = model.trunk_layers[-1].out_dim if model.trunk_layers else model.ambient_dim
    first_dec_width = model.decoder_net.layers[0].out_dim
    model.comp_w = glorot_uniform(model.comp_dim, trunk_width, rng)
    model.comp_b = np.zeros(model.comp_dim)
    model.comp_v = glorot_uniform(first_dec_width, model.comp_dim, rng)
    model.phase = PHASE_EXPANDED
    return model


class _Round2Module:
    """Trainable-module adapter exposing only the expansion blocks."""

    def __init__(self, model: GamlaModel):
        self.model = model

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        return self.model.forward_batch(X)

    def trainable_blocks(self) -> dict[str, np.ndarray]:
        m = self.model
        return {"comp.w": m.comp_w, "comp.b": m.comp_b, "comp.v": m.comp_v}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.trainable_blocks().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.trainable_blocks().items():
            v[...] = state[k]

    def loss_and_grads(self, X: np.ndarray, T: np.ndarray):
        m = self.model
        H = m._trunk_batch(X)
        Z = m.bottleneck_layer.apply(H)
        Zt = H @ m.comp_w.T + m.comp_b

        dec = m.decoder_net.layers
        A0 = Z @ dec[0].weights.T + dec[0].biases + Zt @ m.comp_v.T
        hs = [dec[0].activate(A0)]
        for layer in dec[1:]:
            hs.append(layer.apply(hs[-1]))
        loss, delta = nn.l2_loss_and_grad(hs[-1], T)

        # Back to the first decoder preactivation; frozen layers need no grads.
        for i in range(len(dec) - 1, 0, -1):
            if dec[i].activation == TANH:
                delta = delta * (1.0 - hs[i] * hs[i])
            delta = delta @ dec[i].weights
        if dec[0].activation == TANH:
            delta = delta * (1.0 - hs[0] * hs[0])

        grad_v = delta.T @ Zt
        dZt = delta @ m.comp_v
        return loss, {"comp.w": dZt.T @ H, "comp.b": dZt.sum(axis=0), "comp.v": grad_v}


def sample_ambient(box: Hyperrectangle, count: int, seed: int) -> PointCloud:
    """Uniform i.i.d. samples from the ambient hyperrectangle."""
    return PointCloud(
        box.sample(count, seed),
        provenance={"generator": "ambient_uniform", "count": count, "seed": seed},
    )


def train_round2(
    model: GamlaModel,
    box: Hyperrectangle | None,
    count: int | None,
    cfg: TrainConfig,
    manifold_mix: float = DEFAULT_MANIFOLD_MIX,
    manifold_points: np.ndarray | None = None,
) -> GamlaModel:
    """Second round: train only the new-node connections on ambient samples.

    `box` defaults to the round-1 cloud's bounding box inflated by 25% per
    axis, `count` to twice the round-1 cloud size. A `manifold_mix` fraction
    of the round-1 cloud is appended to the ambient training set to sharpen
    the constraint on the manifold itself; set it to 0 for pure ambient
    training. Round-1 parameters are asserted bit-identical afterwards.
    """
    if model.phase != PHASE_EXPANDED:
        raise PhaseError(f"round 2 requires an expanded model (phase {model.phase})")
    if manifold_points is None:
        manifold_points = model._train_points
    if box is None:
        if manifold_points is None:
            raise ValueError("no ambient box given and no training cloud to derive one from")
        box = Hyperrectangle.from_points(manifold_points, margin=DEFAULT_AMBIENT_MARGIN)
    if count is None:
        if manifold_points is None:
            raise ValueError("no sample count given and no training cloud to derive one from")
        count = 2 * len(manifold_points)

    ambient_seed, mix_seed = _child_seeds(cfg.seed, 2)
    data = box.sample(count, ambient_seed)
    if manifold_mix > 0.0:
        if manifold_points is None:
            raise ValueError("manifold_mix > 0 requires manifold points (train or pass them)")
        k = int(round(manifold_mix * len(manifold_points)))
        if k:
            idx = np.random.default_rng(mix_seed).choice(len(manifold_points), size=k, replace=False)
            data = np.vstack([data, manifold_points[idx]])

    before = model.frozen_state()
    report = nn.train(_Round2Module(model), data, data, cfg)
    after = model.frozen_state()
    assert before == after, "round-2 training modified a frozen round-1 parameter"

    model.ambient_box = box
    model.round2_report = report
    model.phase = PHASE_ROUND2
    return model


def train_two_rounds(
    cloud: PointCloud,
    arch: GamlaArchitecture,
    cfg1: TrainConfig,
    cfg2: TrainConfig,
    recon_threshold: float = DEFAULT_RECON_THRESHOLD,
    ambient_margin: float = DEFAULT_AMBIENT_MARGIN,
    ambient_count: int | None = None,
    manifold_mix: float = DEFAULT_MANIFOLD_MIX,
    expansion_seed: int | None = None,
) -> GamlaModel:
    """Run the full protocol: round 1, expansion, round 2."""
    model = train_round1(cloud, arch, cfg1, recon_threshold=recon_threshold)
    expand_bottleneck(model, seed=cfg2.seed if expansion_seed is None else expansion_seed)
    box = Hyperrectangle.from_points(cloud.points, margin=ambient_margin)
    return train_round2(model, box, ambient_count, cfg2, manifold_mix=manifold_mix)


# -- convenience wrappers matching the protocol vocabulary -------------------


def encode(model: GamlaModel, x: np.ndarray) -> LatentPoint:
    return model.encode(x)


def decode(model: GamlaModel, lp: LatentPoint) -> np.ndarray:
    return model.decode(lp)


def project(model: GamlaModel, x: np.ndarray) -> np.ndarray:
    return model.project(x)


# -- serialization -----------------------------------------------------------


def _report_to_dict(report: TrainReport | None):
    return None if report is None else asdict(report)


def _report_from_dict(doc) -> TrainReport | None:
    return None if doc is None else TrainReport(**doc)


def model_to_dict(model: GamlaModel) -> dict:
    return {
        "schema_version": GAMLA_SCHEMA_VERSION,
        "phase": model.phase,
        "arch": {
            "ambient_dim": model.arch.ambient_dim,
            "intrinsic_dim": model.arch.intrinsic_dim,
            "hidden_dims": list(model.arch.hidden_dims),
        },
        "encoder": nn.network_to_dict(model.encoder_net),
        "decoder": nn.network_to_dict(model.decoder_net),
        "expansion": None
        if model.comp_w is None
        else {
            "w": model.comp_w.tolist(),
            "b": model.comp_b.tolist(),
            "v": model.comp_v.tolist(),
        },
        "ambient_box": None
        if model.ambient_box is None
        else {"low": model.ambient_box.low.tolist(), "high": model.ambient_box.high.tolist()},
        "recon_mse": model.recon_mse,
        "fully_reconstructed": model.fully_reconstructed,
        "reports": {
            "round1": _report_to_dict(model.round1_report),
            "round2": _report_to_dict(model.round2_report),
        },
    }


def model_from_dict(doc: dict) -> GamlaModel:
    try:
        if doc["schema_version"] != GAMLA_SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema version {doc['schema_version']!r}")
        arch = GamlaArchitecture(
            ambient_dim=doc["arch"]["ambient_dim"],
            intrinsic_dim=doc["arch"]["intrinsic_dim"],
            hidden_dims=tuple(doc["arch"]["hidden_dims"]),
        )
        model = GamlaModel(
            arch,
            nn.network_from_dict(doc["encoder"]),
            nn.network_from_dict(doc["decoder"]),
            phase=doc["phase"],
        )
        if model.phase not in (PHASE_ROUND1, PHASE_EXPANDED, PHASE_ROUND2):
            raise SchemaError(f"unknown phase tag {model.phase!r}")
        if doc["expansion"] is not None:
            model.comp_w = np.array(doc["expansion"]["w"], dtype=float)
            model.comp_b = np.array(doc["expansion"]["b"], dtype=float)
            model.comp_v = np.array(doc["expansion"]["v"], dtype=float)
        elif model.phase != PHASE_ROUND1:
            raise SchemaError("expanded model file is missing its expansion blocks")
        if doc["ambient_box"] is not None:
            model.ambient_box = Hyperrectangle(
                np.array(doc["ambient_box"]["low"]), np.array(doc["ambient_box"]["high"])
            )
        model.recon_mse = doc.get("recon_mse")
        model.fully_reconstructed = doc.get("fully_reconstructed")
        reports = doc.get("reports") or {}
        model.round1_report = _report_from_dict(reports.get("round1"))
        model.round2_report = _report_from_dict(reports.get("round2"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc
    return model


def save_model(model: GamlaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, allow_nan=False)


def load_model(path) -> GamlaModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not a valid model file: {exc}") from exc
    return model_from_dict(doc)
