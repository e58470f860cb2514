"""GAMLA: global analytical manifold learning with autoencoders.

A two-round training protocol that learns a parametric chart (character
representation) and an implicit analytic description R(x) = 0
(complementary representation) of a low-dimensional manifold from point
clouds, plus the geometry, intrinsic-dimension and anomaly machinery
built on top of the learned constraint.
"""

__version__ = "0.1.0"

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
    split,
)
from .errors import (
    ConfigError,
    DegenerateChartError,
    DimensionMismatchError,
    GamlaError,
    PhaseError,
    SchemaError,
    SingularPointError,
)
from .geometry import (
    Jet,
    JetMap,
    LevelSetSpec,
    MlpHead,
    TaylorPoly2D,
    eval_with_derivatives,
    filter_level_set,
    fit_implicit_taylor,
    gaussian_curvature,
    normal_vector,
)
from .model import (
    GamlaArchitecture,
    GamlaModel,
    LatentPoint,
    decode,
    encode,
    expand_bottleneck,
    load_model,
    project,
    sample_ambient,
    save_model,
    train_round1,
    train_round2,
    train_two_rounds,
)
from .nn import (
    DenseLayer,
    MlpNetwork,
    TrainConfig,
    TrainReport,
    load_network,
    mlp,
    save_network,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
