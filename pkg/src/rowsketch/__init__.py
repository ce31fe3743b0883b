"""rowsketch: matrix sketching for large-scale linear regression.

Build row-sampling and random-projection operators, check how well a
realized sketch embeds a column space, run sketched least squares with
honest variance scaling, pool estimates across disjoint sketches, and
size sketches for target test power. A CLI (``rowsketch``) exposes the
same machinery plus a reproducible Monte Carlo harness.
"""

from rowsketch.amm import (
    DegenerateInput,
    SamplingDistribution,
    ZeroProbabilityRow,
    amm,
    amm_exact_variance,
    amm_required_m,
    amm_variance_bound,
    optimal_probabilities,
)
from rowsketch.dgp import (
    pearson_draw,
    rare_dummy_design,
    regression_draw,
    table1_panel,
)
from rowsketch.embedding import (
    EmbeddingReport,
    embedding_report,
    jl_pairwise_success,
    m_grid,
    singular_distortion,
    singular_ratio_norm,
)
from rowsketch.experiments import (
    AllReplicationsFailed,
    ConfigError,
    DataError,
    EmptyInput,
    ExperimentConfig,
    NonNumeric,
    ParseError,
    ReportRow,
    config_from_file,
    config_from_mapping,
    default_config,
    derive_rep_seed,
    emit_report,
    ingest_csv,
    load_matrix_csv,
    rows_from_csv,
    rows_to_csv,
    rows_to_markdown,
    run_experiment,
    write_matrix_csv,
)
from rowsketch.linalg import (
    LeverageProfile,
    NonConvergence,
    RankDeficient,
    SvdFactors,
    frobenius_norm,
    leverage_scores,
    numeric_rank,
    spectral_norm,
    svd,
)
from rowsketch.pooling import (
    AllSketchesSingular,
    DegenerateSpread,
    PartitionImpossible,
    PooledFit,
    pool_fits,
    pooled_contrast_se,
    pooled_fit,
    pooled_variance_bound,
    t1_statistic,
    t2_statistic,
)
from rowsketch.regression import (
    ContrastVector,
    FTestResult,
    RegressionFit,
    SingularRestriction,
    SingularSketch,
    VarianceMode,
    countsketch_centering,
    f_test,
    hetero_mse_bound,
    inverse_gram_distortion,
    lemma3_check,
    mse_ratio_bounds,
    noncentrality,
    ols,
    sketched_ols,
)
from rowsketch.schemes import (
    CsAccumulator,
    DimMismatch,
    DuplicateRow,
    InvalidDims,
    MissingSource,
    PropertyReport,
    SchemeId,
    SketchOperator,
    apply_sketch,
    build_sketch,
    check_pi_properties,
    countsketch_stream,
    cs_finalize,
    cs_merge,
    cs_update,
    deserialize_operator,
    materialize,
    serialize_operator,
)
from rowsketch.sizing import (
    DomainError,
    SizeRule,
    SizeRuleResult,
    countsketch_m,
    implied_moments,
    inv_norm_cdf,
    m1_rule,
    m2_rule,
    m3_rule,
    s_value,
    t_critical,
    uniform_embedding_m,
)

__all__ = [
    "AllReplicationsFailed",
    "AllSketchesSingular",
    "ConfigError",
    "ContrastVector",
    "CsAccumulator",
    "DataError",
    "DegenerateInput",
    "DegenerateSpread",
    "DimMismatch",
    "DomainError",
    "DuplicateRow",
    "EmbeddingReport",
    "EmptyInput",
    "ExperimentConfig",
    "FTestResult",
    "InvalidDims",
    "LeverageProfile",
    "MissingSource",
    "NonConvergence",
    "NonNumeric",
    "ParseError",
    "PartitionImpossible",
    "PooledFit",
    "PropertyReport",
    "RankDeficient",
    "RegressionFit",
    "ReportRow",
    "SamplingDistribution",
    "SchemeId",
    "SingularRestriction",
    "SingularSketch",
    "SizeRule",
    "SizeRuleResult",
    "SketchOperator",
    "SvdFactors",
    "VarianceMode",
    "ZeroProbabilityRow",
    "amm",
    "amm_exact_variance",
    "amm_required_m",
    "amm_variance_bound",
    "apply_sketch",
    "build_sketch",
    "check_pi_properties",
    "config_from_file",
    "config_from_mapping",
    "countsketch_centering",
    "countsketch_m",
    "countsketch_stream",
    "cs_finalize",
    "cs_merge",
    "cs_update",
    "default_config",
    "derive_rep_seed",
    "deserialize_operator",
    "emit_report",
    "embedding_report",
    "f_test",
    "frobenius_norm",
    "hetero_mse_bound",
    "implied_moments",
    "ingest_csv",
    "inv_norm_cdf",
    "inverse_gram_distortion",
    "jl_pairwise_success",
    "lemma3_check",
    "leverage_scores",
    "load_matrix_csv",
    "m1_rule",
    "m2_rule",
    "m3_rule",
    "m_grid",
    "materialize",
    "mse_ratio_bounds",
    "noncentrality",
    "numeric_rank",
    "ols",
    "optimal_probabilities",
    "pearson_draw",
    "pool_fits",
    "pooled_contrast_se",
    "pooled_fit",
    "pooled_variance_bound",
    "rare_dummy_design",
    "regression_draw",
    "rows_from_csv",
    "rows_to_csv",
    "rows_to_markdown",
    "run_experiment",
    "s_value",
    "serialize_operator",
    "singular_distortion",
    "singular_ratio_norm",
    "sketched_ols",
    "spectral_norm",
    "svd",
    "t1_statistic",
    "t2_statistic",
    "t_critical",
    "table1_panel",
    "uniform_embedding_m",
    "write_matrix_csv",
]

__version__ = "0.1.0"
