"""Query-efficient recovery of two sparse regressors from a mixture oracle.

The oracle answers linear queries with a sample from one of two hidden sparse
vectors, chosen uniformly and independently per sample, plus Gaussian noise.
This package simulates the oracle with exact query accounting and implements
the full recovery pipeline: regime-adaptive Gaussian-mixture mean estimation
per query, sum/difference-query alignment of the per-query estimate pairs,
and constrained l1 recovery of both vectors.
"""

from .alignment import (
    AlignedMeans,
    GammaTooLarge,
    NoAnchorFound,
    NoConsistentMatch,
    PairwiseVerdict,
    align_all,
    align_pair,
    reference_count,
)
from .estimators import (
    BatchPolicy,
    MeanEstimatePair,
    MomentEstimates,
    choose_branch,
    em_estimate,
    em_step,
    fit_single_gaussian,
    means_from_moments,
    median_of_means,
    method_of_moments,
    mixture_log_likelihood,
    test_and_estimate,
)
from .harness import (
    EmptyResult,
    ExperimentConfig,
    SweepResult,
    TruthSpec,
    emit_plot_data,
    estimator_comparison,
    generate_truth,
    run_experiment,
    run_sweep,
    run_trial,
    trial_seeds,
)
from .oracle import (
    DistinctVectorsRequired,
    EmptyBatch,
    MixtureOracle,
    NegativeSigma,
    QueryDimensionMismatch,
    QueryLedger,
    SparseVectorPair,
    base_tag,
    diff_tag,
    make_oracle,
    sum_tag,
)
from .recovery import (
    BPSolution,
    DuplicateProjection,
    RecoveryConfig,
    RecoveryReport,
    SensingDesign,
    SolverOptions,
    basis_pursuit,
    design_size,
    gaussian_design,
    merged_batch_size,
    noiseless_repeats,
    recover_merged,
    recover_noiseless,
    recover_two_vectors,
)

__version__ = "0.1.0"
