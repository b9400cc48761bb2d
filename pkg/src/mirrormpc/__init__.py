"""Sampling-based model predictive control via online mirror descent.

The controller keeps a distribution over H-step control sequences. Every
round it estimates the gradient of a per-round loss (expected cost,
probability of low cost, or exponential utility) from sampled rollouts of a
planning model, takes one Bregman proximal step, executes the mode of the
updated distribution, and shifts the distribution forward to warm-start the
next round. The cross-entropy method and path-integral control fall out as
step-size-1 special cases of the Gaussian KL-natural update.
"""

from .analytic import (
    LtiSystem,
    QuadraticLoss,
    StackedSystem,
    build_stacked,
    gaussian_exp_quadratic,
    leqr_quadratic,
    lqr_quadratic,
)
from .cartpole import CartpoleConfig, CartpoleCost, CartpoleDynamics, cartpole_cost, cartpole_terminal
from .distributions import (
    REPEAT_LAST,
    CategoricalParams,
    GaussianParams,
    HorizonParams,
    ShiftPolicy,
    log_prob,
    log_prob_grad,
    mode,
    sample_controls,
    shift,
    to_expectation,
    to_natural,
)
from .errors import DegenerateEstimateError, InfeasibleStepError, ValidationError
from .harness import EpisodeRecord, ExperimentConfig, SweepSpec, run_episode, run_sweep
from .losses import (
    ExpectedCost,
    ExpUtility,
    GradientEstimate,
    ProbLowCost,
    adaptive_threshold,
    estimate_gradient,
    estimate_gradient_from_costs,
    utility_weights,
)
from .simulation import RolloutBatch, crn_streams, evaluate_sequences, rollout, rollout_batch
from .updates import (
    ConstantStep,
    IndexedStep,
    KLExpectation,
    KLNatural,
    QuadraticCustom,
    QuadraticFisher,
    QuadraticIdentity,
    cem_step,
    dmd_step,
    exponentiated_gradient_step,
    gaussian_moment_step,
    mppi_step,
    natural_gradient_step,
    projected_gradient_step,
    quadratic_exact_step,
)

__version__ = "0.1.0"
