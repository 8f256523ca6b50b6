"""Bayesian modular and multiscale regression."""
from .conjugate import (
    GaussianModulePosterior,
    GaussianPrior,
    NoisePrior,
    TwoScaleJoint,
    log_marginal_likelihood,
    module_posterior,
    prop1_density_identity_check,
    two_scale_joint,
)
from .errors import (
    BMMSError,
    IncompleteChainError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidPartitionError,
    NumericalSingularityError,
)
from .multiscale import (
    CoarseningOperator,
    MultiscaleDesign,
    ResolutionGrid,
    ScaleContribution,
    accumulate,
    build_dyadic_operator,
    downsample,
)
from .partitions import (
    ChangepointPartition,
    PartitionModuleConfig,
    VoronoiPartition,
    mh_step_centers,
    mh_step_splits,
    partition_log_marginal,
    partition_to_operator,
    sample_levels_given_partition,
)
from .sampler import (
    ModularChain,
    ModuleSpec,
    PosteriorSummary,
    ProbitState,
    conjugate_means,
    merge_chains,
    posterior_summaries,
    run_chains,
    run_modular_sampler,
    run_probit_sampler,
)
from .simulate import (
    AsymptoticSpec,
    MetricsReport,
    SimulationDesign,
    asymptotic_distribution,
    auc_score,
    compute_metrics,
    gen_design,
    gen_out_of_sample,
    gen_test_function,
    sequential_ls_oracle,
    toy_shrunk_mse,
)

__version__ = "0.1.0"
