"""A small laboratory for constrained variational objectives.

From-scratch reverse-mode autodiff over float64 numpy buffers, a family of
evidence-bound objectives whose Lagrangian weights can be PI-controlled,
latent-space divergences, disentanglement metrics, and a train/eval/traverse
CLI harness.
"""

from .control import ControllerState, WeightTriple, clamp_weights, pid_step, stopping_check
from .data import Dataset, batches, load_dsprites_npz, load_mnist_idx, subsample, synth_sprites
from .divergences import (
    diag_covariance,
    default_bandwidth,
    gaussian_kernel_mean,
    mahalanobis_squared,
    median_bandwidth,
    mmd_squared,
    scaled_mmd,
)
from .errors import (
    ContractError,
    DomainError,
    FormatError,
    GcvaeError,
    LengthError,
    NonFiniteLossError,
    ShapeError,
    UndefinedScoreError,
    UnsupportedVariantError,
    ValidationError,
)
from .harness import RunConfig, RunLog, StoppingConfig, eval_metrics, report, train, traverse
from .metrics import (
    CodeTable,
    FactorTable,
    discretize,
    entropy,
    jemmig,
    joint_entropy,
    mig,
    modularity,
    mutual_information,
)
from .model import (
    ModelParams,
    build_model,
    decode,
    encode,
    kl_gaussian_standard,
    load_params,
    reconstruction_nll,
    reparameterize,
    save_params,
)
from .objective import VARIANTS, compose_loss, mutual_info_report, variant_reduction
from .tensor import Tape, Tensor, backward, finite_diff_gradient

__version__ = "0.1.0"

__all__ = [
    "ControllerState", "WeightTriple", "clamp_weights", "pid_step", "stopping_check",
    "Dataset", "batches", "load_dsprites_npz", "load_mnist_idx", "subsample",
    "synth_sprites",
    "diag_covariance", "default_bandwidth", "gaussian_kernel_mean",
    "mahalanobis_squared", "median_bandwidth", "mmd_squared", "scaled_mmd",
    "ContractError", "DomainError", "FormatError",
    "GcvaeError", "LengthError", "NonFiniteLossError",
    "ShapeError", "UndefinedScoreError", "UnsupportedVariantError", "ValidationError",
    "RunConfig", "RunLog", "StoppingConfig", "eval_metrics", "report", "train", "traverse",
    "CodeTable", "FactorTable", "discretize", "entropy", "jemmig", "joint_entropy",
    "mig", "modularity", "mutual_information",
    "ModelParams", "build_model", "decode", "encode", "kl_gaussian_standard",
    "load_params", "reconstruction_nll", "reparameterize", "save_params",
    "VARIANTS", "compose_loss", "mutual_info_report", "variant_reduction",
    "Tape", "Tensor", "backward", "finite_diff_gradient",
    "__version__",
]
