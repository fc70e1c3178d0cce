"""Sign-to-magnitude weight binarization toolkit."""

__version__ = "0.1.0"

from .binarize import (  # noqa: E402
    BinaryCode,
    SignCode,
    angle_bounds,
    brute_force_binarize,
    half_half_binarize,
    inequality_margin,
    objective_value,
    optimal_binarize,
    quantization_error,
    sign_binarize_scaled,
)
from .dist import (  # noqa: E402
    DistributionModel,
    ThresholdResult,
    empirical_plus_fraction,
    erfc,
    fit_scale,
    gauss_objective,
    laplace_objective,
    optimal_threshold,
    sample_weights,
)
