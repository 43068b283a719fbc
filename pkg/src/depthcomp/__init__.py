"""Numerical kernels for scale-consistent sparse depth completion."""

from .attention import (
    AttentionGradients,
    AttentionOutput,
    AttentionParams,
    attention_backward,
    attention_forward,
    ca_forward,
    dsa_forward,
    fdsa_forward,
)
from .densify import DilationKernel, density, dilate, interpolate, make_kernel, parse_kernel_spec
from .dscl import (
    ScaleField,
    compose_depth,
    optimal_scale,
    optimal_scale_field,
    scale_head,
    theorem1_check,
    to_relative,
)
from .errors import (
    CodecError,
    DepthcompError,
    EvaluationError,
    GeometryError,
    OptimizationError,
    ParameterError,
    ShapeError,
    SupportError,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    backproject,
    bilinear_sample,
    compose,
    invert,
    project,
    warp_map,
    warp_pixel,
)
from .grid import (
    DenseGrid,
    FeatureMap,
    SparseDepthMap,
    downsample_mask,
    read_csv_grid,
    read_kitti_png,
    write_csv_grid,
    write_kitti_png,
)
from .losses import (
    LossReport,
    LossWeights,
    cross_view_loss,
    finite_diff_check,
    l2_sparse_loss,
    single_view_loss,
    total_loss,
)
from .metrics import EvalResult, aggregate, evaluate
from .synth import (
    Scene,
    SceneSpec,
    TrainConfig,
    TrainResult,
    bench_attention,
    dilation_ablation,
    gen_scene,
    sample_sparse,
    train_toy,
)

__version__ = "0.1.0"
