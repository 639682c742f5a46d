"""Widely spaced MIMO radar: joint detection and delay-vector estimation.

The library simulates a distributed radar with N_t transmitters and N_r
receivers observing a single target, estimates the N_t x N_r matrix of
transmit-to-receive propagation delays by maximizing likelihood-based
criteria over geometrically consistent candidates, calibrates detection
thresholds from analytic null distributions, and turns delay estimates
into target positions.  An experiment harness reproduces estimation-MSE,
mis-detection and ROC curves with deterministic, seedable randomness.
"""

__version__ = "0.1.0"

SPEED_OF_LIGHT = 2.99792458e8  # m/s

from .geometry import (
    SceneConfig,
    DelayVector,
    true_delays,
    is_feasible,
    project_feasible,
    mimo_scene,
    phased_array_scene,
)
from .waveforms import (
    WaveformBank,
    make_bank,
    bank_for_scene,
    sample,
    sample_row,
    sample_matrix,
    gram,
    gram_matrix,
    orthogonality_report,
)
from .synth import (
    SnrSpec,
    ChannelRealization,
    SnapshotMatrix,
    SnapshotMeta,
    energy_for_snr,
    scatterer_gains,
    steering_sums,
    synth_extended,
    synth_point,
    synth_phased_array,
    synth_null,
    save_snapshot,
    load_snapshot,
)
from .estimation import (
    EstimatorKind,
    SearchSpec,
    GridPlan,
    MatchedFilterBank,
    EstimateResult,
    build_grid,
    matched_filter,
    objective,
    estimate,
    estimate_h_map,
    estimate_zeta,
    phase_aligned_sum,
)
from .detection import (
    DetectorKind,
    Hypoexponential,
    DetectionOutcome,
    detector_for,
    statistic,
    threshold,
    detect,
    null_law,
    hypoexp_cdf,
    hypoexp_quantile,
    sample_null_statistics,
)
from .localization import (
    LocalizationProblem,
    LocalizationResult,
    phi,
    jacobian,
    localize,
)
from .experiments import (
    ExperimentSpec,
    CurveResult,
    DiversityFit,
    run_mse_curve,
    run_pmd_curve,
    run_roc,
    run_localization_curve,
    fit_diversity,
    verify_lemma6,
    write_curve,
    sample_h1_statistics,
)
from .config import ConfigError, load_spec

__all__ = [
    "SPEED_OF_LIGHT",
    "SceneConfig", "DelayVector", "true_delays", "is_feasible",
    "project_feasible", "mimo_scene", "phased_array_scene",
    "WaveformBank", "make_bank", "bank_for_scene", "sample", "sample_row",
    "sample_matrix", "gram", "gram_matrix", "orthogonality_report",
    "SnrSpec", "ChannelRealization", "SnapshotMatrix", "SnapshotMeta",
    "energy_for_snr", "scatterer_gains", "steering_sums",
    "synth_extended", "synth_point", "synth_phased_array", "synth_null",
    "save_snapshot", "load_snapshot",
    "EstimatorKind", "SearchSpec", "GridPlan", "MatchedFilterBank",
    "EstimateResult", "build_grid", "matched_filter", "objective", "estimate",
    "estimate_h_map", "estimate_zeta", "phase_aligned_sum",
    "DetectorKind", "Hypoexponential", "DetectionOutcome", "detector_for",
    "statistic", "threshold", "detect", "null_law", "hypoexp_cdf",
    "hypoexp_quantile", "sample_null_statistics",
    "LocalizationProblem", "LocalizationResult", "phi", "jacobian",
    "localize",
    "ExperimentSpec", "CurveResult", "DiversityFit", "run_mse_curve",
    "run_pmd_curve", "run_roc", "run_localization_curve", "fit_diversity",
    "verify_lemma6", "write_curve", "sample_h1_statistics",
    "ConfigError", "load_spec",
]
