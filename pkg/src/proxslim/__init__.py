"""Proximal channel slimming for small convolutional networks.

Trains with an alternating proximal scheme that drives batch-norm
scale factors to exact floating-point zeros, prunes the corresponding
channels with output preservation, and checks the convergence
guarantees (sufficient decrease, bounded subgradients) numerically.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, build_config, hyperparams_from, parse_config_file
from .convergence import (
    DecreaseReport,
    EpochDiagnostics,
    RelativeErrorReport,
    RunDiagnostics,
    Verdict,
    check_relative_error,
    check_sufficient_decrease,
    critical_point_monitor,
    estimate_lipschitz,
    fd_gradient_check,
    full_batch_grads,
    objective_value,
    run_certified,
    step_subgradient,
    subgradient_parts,
)
from .data import gen_synthetic, load_csv, load_idx, load_pnsd, save_pnsd
from .errors import (
    CertificationError,
    ContractError,
    ModeError,
    NumericError,
    ProxslimError,
    PruneRefusedError,
    ShapeError,
    TopologyError,
    UsageError,
)
from .network import (
    Activation,
    BatchNorm,
    Conv2d,
    Dataset,
    Flatten,
    Linear,
    Network,
    Pool,
    evaluate,
    forward_logits,
    from_manifest,
    loss_and_grads,
    tiny_vgg,
    to_manifest,
    validate_slimmable,
)
from .optim import (
    Hyperparams,
    ModelState,
    alpha_for_epoch,
    default_alpha_schedule,
    fine_tune,
    init_state,
    prox_coefficients,
    proximal_epoch,
    rng_for,
    soft_threshold,
    subgradient_epoch,
)
from .prune import (
    ParamsFlops,
    PruneReport,
    build_prune_report,
    count_params_flops,
    masked_inference,
    prune_network,
    select_channels,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BatchNorm",
    "CertificationError",
    "Checkpoint",
    "ContractError",
    "Conv2d",
    "Dataset",
    "DecreaseReport",
    "EpochDiagnostics",
    "Flatten",
    "Hyperparams",
    "Linear",
    "ModeError",
    "ModelState",
    "Network",
    "NumericError",
    "ParamsFlops",
    "Pool",
    "ProxslimError",
    "PruneRefusedError",
    "PruneReport",
    "RelativeErrorReport",
    "RunConfig",
    "RunDiagnostics",
    "ShapeError",
    "TopologyError",
    "UsageError",
    "Verdict",
    "alpha_for_epoch",
    "build_config",
    "build_prune_report",
    "check_relative_error",
    "check_sufficient_decrease",
    "count_params_flops",
    "critical_point_monitor",
    "default_alpha_schedule",
    "estimate_lipschitz",
    "evaluate",
    "fd_gradient_check",
    "fine_tune",
    "forward_logits",
    "from_manifest",
    "full_batch_grads",
    "gen_synthetic",
    "hyperparams_from",
    "init_state",
    "load_checkpoint",
    "load_csv",
    "load_idx",
    "load_pnsd",
    "loss_and_grads",
    "masked_inference",
    "objective_value",
    "parse_config_file",
    "prox_coefficients",
    "proximal_epoch",
    "prune_network",
    "rng_for",
    "run_certified",
    "save_checkpoint",
    "save_pnsd",
    "select_channels",
    "soft_threshold",
    "step_subgradient",
    "subgradient_epoch",
    "subgradient_parts",
    "tiny_vgg",
    "to_manifest",
    "validate_slimmable",
]
