"""Estimation-theoretic lower bounds for scene parameters observed through a
noisy camera, with a built-in unbiased Monte-Carlo renderer as the forward
model and tooling to quantify and correct the renderer's own error."""

from .analytic import AffineForward, ConstantForward, NoisyForward, QuadraticForward
from .bounds import (
    BoundsError,
    DeltaGrid,
    DivergenceUndefined,
    HcrResult,
    NoiseModel,
    cr_limit,
    hcr_bound,
    hcr_functional,
    lambda_gaussian,
    lambda_poisson,
    mse_bound,
)
from .estimator import (
    EstimatorError,
    MleConfig,
    NoisyObservation,
    TrialReport,
    mle_gaussian,
    run_trials,
    synthesize_noisy,
)
from .fisher import FiMap, GradientImage, fd_gradient, pixelwise_fi, total_fi, viewpoint_grid
from .image_io import (
    ImageIOError,
    ManifestRow,
    StackManifest,
    load_stack,
    read_pfm,
    write_pfm,
)
from .render_error import (
    DecayFit,
    HcrInterval,
    LambdaEstimate,
    LambdaObservation,
    estimate_lambda,
    hcr_hat,
    hcr_interval,
    variance_decay_fit,
)
from .renderer import (
    RadianceImage,
    RenderConfig,
    RenderError,
    SceneForward,
    derive_seed,
    render,
    render_stack,
)
from .scene import (
    ParameterBinding,
    ParameterPoint,
    ParameterSpace,
    SceneDescription,
    SceneError,
    apply_parameters,
    load_scene,
    parse_scene,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
