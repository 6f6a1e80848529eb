"""Operator learning for semilinear elliptic problems and their
backward-equation readouts, with a classical fixed-point solver as an
independent cross-check.

Layout:
  autodiff    dense reverse-mode engine with explicit tape scopes
  splines     cardinal B-splines, wavelet pairs, trainable activations
  reskan      residual Kolmogorov-Arnold networks and exact-product gadgets
  kano        the spectral operator model, checkpoints, unrolled fixed point
  picard      Green-kernel quadrature, boundary extensions, Picard iteration
  sde         Euler-Maruyama ensembles with per-path streams
  benchmarks  closed-form solution families (periodic and linear-quadratic)
  adapter     value function -> (Y, Z, Upsilon, A) along paths, residuals
  training    datasets, the optimizer, the fit loop, path-wise evaluation
  config      experiment configuration parsing and hashing
  cli         the ``kanop`` command
"""

from .adapter import BsdeTuple, DerivativeScheme, ResidualReport, adapt, bsde_residual
from .autodiff import AutodiffError, Tape, Tensor, as_tensor
from .benchmarks import (
    LqSolution,
    PeriodicSolution,
    RiccatiCurve,
    fbsde_generator,
    riccati_solve,
)
from .config import ConfigError, ExperimentConfig, parse_config
from .kano import (
    CheckpointError,
    KanoError,
    KanoModel,
    bilinear_field,
    corner_modes,
    kano_forward,
    kano_init,
    kano_query,
    load_checkpoint,
    operator_input,
    picard_unrolled_operator,
    save_checkpoint,
    spectral_apply,
)
from .picard import (
    ContractionError,
    GreenKernel,
    PicardError,
    PicardState,
    SemilinearProblem,
    SolverError,
    apply_T,
    ball_kernel,
    boundary_extension,
    grid_norm,
    interval_kernel,
    measure_contraction,
    picard_solve,
)
from .reskan import (
    GadgetDomainError,
    ResKanLayer,
    ResKanNet,
    exact_multiply,
    requ_powers,
    requ_square,
    reskan_init,
)
from .sde import PathBundle, SdeSpec, lq_coeffs, periodic_coeffs, simulate
from .splines import (
    SplineActivation,
    SplineError,
    WaveletPair,
    activation_eval,
    bspline_basis,
    bspline_deriv,
    bspline_eval,
    daubechies_pair,
    haar_pair,
)
from .training import (
    Dataset,
    KanoValue,
    PathError,
    RmsProp,
    TrainingAbort,
    TrainResult,
    generate_dataset,
    model_from_config,
    path_records,
    path_u_error,
    solution_for,
    train,
)

__version__ = "0.1.0"
