"""Deterministic federated-optimization simulator for Markov-chain data streams."""

from .algorithms import (
    FedConfig,
    RoundRecord,
    TrajectoryResult,
    run,
    run_local_sgd,
    run_local_sgd_momentum,
    run_minibatch_sgd,
    run_scaffold,
    select_output,
)
from .markov import (
    ChainDiagnostics,
    Distribution,
    FiniteKernel,
    StreamCursor,
    c_infinity,
    c_infinity_ergodic_bound,
    diagnostics,
    mixing_time,
    p_for_mixing_time,
    product_mixing_bound,
    pseudo_spectral_gap,
    sample_stream,
    stationary,
    tv_distance,
    two_state,
    worst_case_tv,
)
from .objectives import (
    RegressionObjectives,
    RegressionSample,
    SyntheticObjectives,
    SyntheticProblem,
    generate_synthetic,
    reg_grad,
    reg_value,
    regression_sample_grad,
    synth_sample_grad,
    synth_true_grad,
)
from .theory import (
    ProblemConstants,
    estimate_constants,
    local_sgd_bound,
    local_sgd_complexity,
    minibatch_bound,
    minibatch_complexity,
    momentum_bound,
    momentum_step_caps,
    product_chain_constants,
    verify_gradient_error_bound,
)

__version__ = "0.1.0"

__all__ = [
    "ChainDiagnostics", "Distribution", "FedConfig", "FiniteKernel",
    "ProblemConstants", "RegressionObjectives", "RegressionSample",
    "RoundRecord", "StreamCursor", "SyntheticObjectives", "SyntheticProblem",
    "TrajectoryResult", "c_infinity", "c_infinity_ergodic_bound",
    "diagnostics", "estimate_constants", "generate_synthetic",
    "local_sgd_bound", "local_sgd_complexity", "minibatch_bound",
    "minibatch_complexity", "mixing_time", "momentum_bound",
    "momentum_step_caps", "p_for_mixing_time", "product_chain_constants",
    "product_mixing_bound", "pseudo_spectral_gap", "reg_grad", "reg_value",
    "regression_sample_grad", "run", "run_local_sgd",
    "run_local_sgd_momentum", "run_minibatch_sgd", "run_scaffold",
    "sample_stream", "select_output", "stationary", "synth_sample_grad",
    "synth_true_grad", "tv_distance", "two_state", "verify_gradient_error_bound",
    "worst_case_tv",
]
