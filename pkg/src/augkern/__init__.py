"""Kernel-theoretic tools for analysing data augmentation."""

__version__ = "0.1.0"

from augkern.chain import (  # noqa: E402
    ChainSpec,
    check_surjectivity,
    finite_time_distribution,
    mixing_bound,
    sample_trajectory,
    stationary_distribution,
    transition_matrix,
    trajectory_seed,
)
from augkern.errors import (  # noqa: E402
    AugkernError,
    ConfigError,
    DetailedBalanceError,
    DivergenceError,
    SeriesDivergenceError,
    SurjectivityError,
    ValidationError,
)
from augkern.kernel import (  # noqa: E402
    KernelMatrix,
    bayes_classify,
    induced_kernel,
    jitter_kernel_check,
    kernel_classify,
    update_kernel_add,
    verify_kernel_properties,
)
from augkern.knn import equivalence_experiment, knn_classify  # noqa: E402
from augkern.transforms import (  # noqa: E402
    AugmentationMatrix,
    StateSpace,
    build_finite_augmentation,
    enumerate_support,
    make_sampler,
    symmetrize,
)

__all__ = [
    "# noqa: E402",
    "AugkernError",
    "AugmentationMatrix",
    "ChainSpec",
    "ConfigError",
    "DetailedBalanceError",
    "DivergenceError",
    "KernelMatrix",
    "SeriesDivergenceError",
    "StateSpace",
    "SurjectivityError",
    "ValidationError",
    "bayes_classify",
    "build_finite_augmentation",
    "check_surjectivity",
    "enumerate_support",
    "equivalence_experiment",
    "finite_time_distribution",
    "induced_kernel",
    "jitter_kernel_check",
    "kernel_classify",
    "knn_classify",
    "make_sampler",
    "mixing_bound",
    "sample_trajectory",
    "stationary_distribution",
    "symmetrize",
    "trajectory_seed",
    "transition_matrix",
    "update_kernel_add",
    "verify_kernel_properties",
]
