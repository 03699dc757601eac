"""Zero-mean gradient projection for federated learning simulations."""

from ._fedzmg import (
    ConfigError,
    DegenerateVarianceError,
    DimensionError,
    DivergenceError,
    Error,
    NumericError,
    SeriesError,
    TTestResult,
    __version__,
    config_hashes,
    gini_coefficient,
    normalized_entropy,
    paired_t_test,
    project_matrix_columns,
    project_vector,
    projected_variance,
    run_config,
    student_t_cdf,
    verify_convergence,
    verify_lemma2,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
