"""Weak-supervision label aggregation.

Aggregates the hard votes of p abstaining rules on n unlabeled points into
soft labels.  The main engine solves an adversarial minimax game over a
polytope of labelings that respect interval bounds on rule accuracies and
class frequencies; the package also ships the one-coin Dawid-Skene EM
baseline, majority vote, Wilson-interval bound estimation, KL loss
decompositions, and a synthetic-data consistency harness.
"""

from .core import (
    ABSTAIN,
    Bounds,
    ConstraintSystem,
    VoteMatrix,
    build_constraint_system,
    check_labeling,
    constraint_image,
    encode_one_hot,
    exp_family_predict,
    majority_vote,
    one_hot_labels,
    weight_scores,
)
from .intervals import LabeledSample, estimate_bounds, wilson
from .metrics import (
    EmLossSplit,
    LossReport,
    LossSplit,
    PatternTable,
    em_estimation_gap,
    em_loss_decomposition,
    evaluate,
    kl_sum,
    loss_decomposition,
    pattern_distribution,
)
from .ocds import (
    CoinParams,
    EmResult,
    e_step,
    log_likelihood,
    m_step,
    params_from_weights,
    run_em,
    weights_from_params,
)
from .solver import (
    DualSolution,
    Multipliers,
    SolverError,
    SolverOptions,
    approx_error_bound,
    best_approximator,
    ds_advantage_threshold,
    dual_gradient,
    dual_objective,
    lr_form,
    lr_objective,
    lr_to_constraints,
    solve,
)
from .synth import (
    Counterexample,
    InconsistencyReport,
    SynthData,
    consistency_run,
    counterexample_instance,
    generate,
    inconsistency_demo,
)

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "Bounds",
    "CoinParams",
    "ConstraintSystem",
    "Counterexample",
    "DualSolution",
    "EmLossSplit",
    "EmResult",
    "InconsistencyReport",
    "LabeledSample",
    "LossReport",
    "LossSplit",
    "Multipliers",
    "PatternTable",
    "SolverError",
    "SolverOptions",
    "SynthData",
    "VoteMatrix",
    "approx_error_bound",
    "best_approximator",
    "build_constraint_system",
    "check_labeling",
    "consistency_run",
    "constraint_image",
    "counterexample_instance",
    "ds_advantage_threshold",
    "dual_gradient",
    "dual_objective",
    "e_step",
    "em_estimation_gap",
    "em_loss_decomposition",
    "encode_one_hot",
    "estimate_bounds",
    "evaluate",
    "exp_family_predict",
    "generate",
    "inconsistency_demo",
    "kl_sum",
    "log_likelihood",
    "loss_decomposition",
    "lr_form",
    "lr_objective",
    "lr_to_constraints",
    "m_step",
    "majority_vote",
    "one_hot_labels",
    "params_from_weights",
    "pattern_distribution",
    "run_em",
    "solve",
    "weight_scores",
    "weights_from_params",
    "wilson",
]
