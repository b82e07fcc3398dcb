"""Adaptive Benjamini-Hochberg FDR procedures with m0 estimation.

The package covers the BH95, oracle, BKY and STS procedures and two
adaptive procedures built on sum- and log-based estimates of the number
of true null hypotheses, together with their correction factors and a
Monte Carlo engine for the equicorrelated Gaussian model.
"""
from .core import (
    Mode,
    RejectionOutcome,
    SortedPValues,
    ThresholdSequence,
    linear_thresholds,
    sort_pvalues,
    standard_normal_cdf,
    step_down,
    step_up,
)
from .correction import (
    CorrectionFactors,
    CorrectionTable,
    correction_integral,
    correction_table,
    optimal_correction,
    uniform_sum_density,
)
from .errors import (
    DegenerateEstimatorError,
    EmptyFileError,
    EmptyInputError,
    FDRError,
    LambdaOutOfRangeError,
    LengthMismatchError,
    MissingCorrectionError,
    NonFiniteError,
    OutOfRangeError,
    ParseError,
    ValidationError,
    VersionMismatchError,
)
from .estimators import (
    EstimatorKind,
    bky_threshold_sequence,
    estimate_m0,
    estimate_m0_log_corrected,
    estimate_m0_log_raw,
    estimate_m0_sts,
    estimate_m0_sum_corrected,
    estimate_m0_sum_raw,
)
from .fileio import read_pvalues, write_pvalues
from .procedures import (
    ProcedureKind,
    ProcedureSpec,
    QValueVector,
    adaptive_qvalues,
    apply_procedure,
    bh_qvalues,
    compare_datasets,
)
from .simulate import (
    SimConfig,
    SimMetrics,
    counterexample_scenario,
    evaluate_replication,
    generate_instance,
    instance_pvalues,
    run_simulation,
    sweep,
    fdr_bound_check,
)

__version__ = "0.1.0"
