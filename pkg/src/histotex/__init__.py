"""histotex: parametric neural texture synthesis and style transfer with
histogram losses, localized (painting-by-numbers) control, coarse-to-fine
pyramids, and automatic weight tuning by gradient clamping."""

__version__ = "0.1.0"

from .estimators import StyleTransferrer, TextureSynthesizer
from .gram_lab import (
    AffineSolution,
    FeatureDistribution,
    matched_mean_for_target_variance,
    noncentral_second_moment,
    solve_affine_gram_preserving,
    verify_equal_gram,
)
from .losses import (
    GramMatrix,
    Histogram,
    compute_histogram,
    content_loss,
    gram,
    gram_loss,
    histogram_loss,
    histogram_match,
    mean_activation_loss,
    tv_loss,
)
from .network import (
    ActivationSet,
    NetworkSpec,
    backward_to_image,
    forward,
    load_network,
    random_filter_bank,
    save_network,
)
from .regions import (
    IndexedMask,
    RegionStats,
    build_region_stats,
    downsample_mask,
    localized_gram_loss,
    localized_histogram_loss,
)
from .synthesis import (
    NumericalAbort,
    SynthesisConfig,
    auto_tune_clamp,
    optimize_level,
    style_transfer,
    synthesize_texture,
    texture_objective,
    transfer_objective,
)
from .tensor_ops import (
    FilterKernels,
    ShapeError,
    conv2d_circular,
    conv2d_circular_backward,
    cyclic_shift,
    finite_diff_gradient,
    pool2,
    rectify,
    upsample_bilinear2,
)
