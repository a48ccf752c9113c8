"""Simulation and verification toolkit for delay SDEs with multiplicative noise.

Builds a binding coupling between two solutions started from different
initial segments and reweights it by a Girsanov density; the resulting
closed-form entropy and Harnack-type bounds are then checked by Monte
Carlo against the simulated pair.
"""

from ._version import __version__

from .segment_paths import (
    SegmentPath,
    GridSpec,
    segment_from_function,
    constant_segment,
    sup_distance,
    shift_append,
)
from .coefficients import (
    AssumptionConstants,
    CoefficientSet,
    AuditBox,
    AuditReport,
    builtin_system,
    audit_assumptions,
    with_scaled_sigma,
)
from .integrator import Trajectory, NoiseStream, step_euler, simulate_path
from .coupling import (
    GammaSchedule,
    CoupledTrajectory,
    gamma,
    inv_gamma_integral,
    coupling_drift_phi,
    simulate_coupled_Q,
    simulate_coupled_P,
    coupling_time,
)
from .bounds import (
    GapPair,
    HarnackParameters,
    BoundReport,
    LemmaBound,
    k4_ratio,
    bound_H_T,
    bound_H_T_at,
    bound_entropy_prop21,
    bound_entropy_with_tail,
    lambda_p,
    theta_set_contains,
    w_eps,
    s_eps,
    bound_Phi_p,
    lemma_rhs,
)
from .estimators import (
    MCEstimate,
    VerdictReport,
    TestFunction,
    StationarySample,
    test_function,
    estimate_PT_f,
    estimate_entropy_Q,
    estimate_exp_functional,
    estimate_martingale_mean,
    merged_fraction,
    make_verdict,
    check_log_harnack,
    check_power_harnack,
    sample_stationary_segments,
)
from .cli import ExperimentConfig, parse_config, render_config, run_command

__all__ = [
    "__version__",
    "SegmentPath", "GridSpec", "segment_from_function", "constant_segment",
    "sup_distance", "shift_append",
    "AssumptionConstants", "CoefficientSet", "AuditBox", "AuditReport",
    "builtin_system", "audit_assumptions", "with_scaled_sigma",
    "Trajectory", "NoiseStream", "step_euler", "simulate_path",
    "GammaSchedule", "CoupledTrajectory", "gamma", "inv_gamma_integral",
    "coupling_drift_phi", "simulate_coupled_Q", "simulate_coupled_P", "coupling_time",
    "GapPair", "HarnackParameters", "BoundReport", "LemmaBound",
    "k4_ratio", "bound_H_T", "bound_H_T_at", "bound_entropy_prop21", "bound_entropy_with_tail",
    "lambda_p", "theta_set_contains", "w_eps", "s_eps", "bound_Phi_p", "lemma_rhs",
    "MCEstimate", "VerdictReport", "TestFunction", "StationarySample",
    "test_function", "estimate_PT_f", "estimate_entropy_Q", "estimate_exp_functional",
    "estimate_martingale_mean", "merged_fraction", "make_verdict",
    "check_log_harnack", "check_power_harnack", "sample_stationary_segments",
    "ExperimentConfig", "parse_config", "render_config", "run_command",
]
