"""Per-round losses and their sampled likelihood-ratio gradient estimators.

Three per-round losses over the trajectory cost statistic C:

* expected cost, E[C], with optional mean-baseline variance reduction;
* probability of low cost, -log P[C <= C_max], with a fixed or adaptive
  (elite-fraction) threshold;
* exponential utility, -log E[exp(-C / lambda)].

The utility losses yield gradient estimates that are convex combinations of
per-sample scores with weights w_i proportional to the utility of each
sampled trajectory cost; the expected-cost loss weights scores by (C_i - b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import (
    CategoricalGradient,
    GaussianGradient,
    HorizonGradient,
    HorizonParams,
    _effective_probs,
)
from .errors import DegenerateEstimateError, ValidationError
from .simulation import RolloutBatch


@dataclass(frozen=True)
class ExpectedCost:
    """Average trajectory cost; baseline subtraction is on by default."""

    use_baseline: bool = True


@dataclass(frozen=True)
class ProbLowCost:
    """Negative log probability that the cost lands at or below a threshold.

    Exactly one of ``threshold`` (fixed C_max) and ``elite_fraction`` (adaptive
    C_max from the lowest-cost fraction of samples) must be set.
    """

    threshold: float | None = None
    elite_fraction: float | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.elite_fraction is None):
            raise ValidationError("set exactly one of threshold and elite_fraction")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise ValidationError("fixed threshold must be finite")
        if self.elite_fraction is not None and not 0.0 < self.elite_fraction <= 1.0:
            raise ValidationError("elite_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ExpUtility:
    """Negative log expected exponential utility with temperature lambda."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")


LossSpec = ExpectedCost | ProbLowCost | ExpUtility


def adaptive_threshold(costs: np.ndarray, elite_fraction: float) -> float:
    """Largest cost among the ceil(elite_fraction * n) smallest costs.

    The ceiling guarantees at least one elite sample for any fraction.
    """
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    n = costs.shape[0]
    if n < 1:
        raise ValidationError("need at least one cost")
    if not 0.0 < elite_fraction <= 1.0:
        raise ValidationError("elite_fraction must lie in (0, 1]")
    k = min(n, max(1, math.ceil(elite_fraction * n)))
    return float(np.partition(costs, k - 1)[k - 1])


def utility_weights(costs: np.ndarray, loss: LossSpec) -> np.ndarray:
    """Normalized per-sample utility weights w_i = U(C_i) / sum_j U(C_j).

    Infinite costs receive zero weight. Raises DegenerateEstimateError when
    every sample has zero utility.
    """
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    if isinstance(loss, ExpUtility):
        finite = np.isfinite(costs)
        if not finite.any():
            raise DegenerateEstimateError("all trajectory costs are non-finite")
        cmin = float(costs[finite].min())
        # Subtracting the minimum before exponentiating is exact under
        # normalization and prevents underflow of every weight at once.
        raw = np.where(finite, np.exp(-(costs - cmin) / loss.lam), 0.0)
    elif isinstance(loss, ProbLowCost):
        if loss.threshold is not None:
            c_max = loss.threshold
        else:
            c_max = adaptive_threshold(costs, loss.elite_fraction)
        raw = ((costs <= c_max) & np.isfinite(costs)).astype(np.float64)
    else:
        raise ValidationError(f"{type(loss).__name__} does not define a utility")
    total = raw.sum()
    if total <= 0.0:
        raise DegenerateEstimateError("every sampled trajectory has zero utility")
    return raw / total


def weighted_moments(sequences: np.ndarray, weights: np.ndarray):
    """Utility-weighted sufficient-statistic moments of Gaussian samples:
    (sum_i w_i u_i) of shape (H, m) and (sum_i w_i u_i u_i^T) of (H, m, m).

    Single implementation shared by the gradient estimator and the
    CEM/MPPI-style moment updates so their special-case identities are
    bitwise exact.
    """
    first = np.einsum("n,nhm->hm", weights, sequences)
    second = np.einsum("n,nhi,nhj->hij", weights, sequences, sequences)
    return first, second


@dataclass
class GradientEstimate:
    """Sampled estimate of the per-round loss gradient plus diagnostics.

    ``weights`` holds the per-sample coefficients: normalized utility weights
    for the utility losses, (C_i - b)/n for expected cost. ``baseline`` is the
    subtracted mean cost (expected cost only). For Gaussian utility estimates
    the weighted sufficient-statistic moments are cached for the exact
    moment-update path.
    """

    direction: HorizonGradient
    weights: np.ndarray
    baseline: float
    effective_sample_size: float
    loss_estimate: float
    weighted_first_moment: np.ndarray | None = None
    weighted_second_moment: np.ndarray | None = None

    @property
    def has_utility_moments(self) -> bool:
        return self.weighted_first_moment is not None


def _check_sequences(params: HorizonParams, sequences: np.ndarray) -> np.ndarray:
    sequences = np.asarray(sequences)
    if params.is_gaussian:
        if sequences.ndim == 2 and params.dim == 1:
            sequences = sequences[:, :, None]
        if sequences.shape[1:] != (params.horizon, params.dim):
            raise ValidationError(f"sequence batch shape {sequences.shape} does not match parameters")
        return sequences.astype(np.float64, copy=False)
    if sequences.shape[1:] != (params.horizon,):
        raise ValidationError(f"sequence batch shape {sequences.shape} does not match parameters")
    return sequences.astype(np.int64, copy=False)


def _categorical_weighted_score(params: HorizonParams, sequences: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """sum_i coef_i e_{u_i,h} / theta_h, vectorized over the horizon."""
    eff = _effective_probs(params.probs)
    out = np.empty_like(eff)
    for h in range(params.horizon):
        out[h] = np.bincount(sequences[:, h], weights=coef, minlength=params.dim) / eff[h]
    return out


def estimate_gradient_from_costs(
    params: HorizonParams, sequences: np.ndarray, costs: np.ndarray, loss: LossSpec
) -> GradientEstimate:
    """Likelihood-ratio gradient estimate from sampled sequences and costs.

    The batch must have been sampled from ``params``. Directions use the
    family's canonical parameterization: natural blocks (u - m, uu^T - S) for
    Gaussians, expectation blocks e_u / theta for categoricals.
    """
    sequences = _check_sequences(params, sequences)
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    n = costs.shape[0]
    if n < 1 or sequences.shape[0] != n:
        raise ValidationError("sequences and costs must be nonempty and aligned")

    if isinstance(loss, ExpectedCost):
        if not np.all(np.isfinite(costs)):
            raise DegenerateEstimateError(
                "expected-cost estimates reject non-finite trajectory costs"
            )
        baseline = float(costs.mean()) if loss.use_baseline else 0.0
        coef = (costs - baseline) / n
        if params.is_gaussian:
            d_mean = np.einsum("n,nhm->hm", coef, sequences) - coef.sum() * params.means
            d_second = (
                np.einsum("n,nhi,nhj->hij", coef, sequences, sequences)
                - coef.sum() * params.second_moments
            )
            direction = GaussianGradient(d_mean=d_mean, d_second=d_second)
        else:
            direction = CategoricalGradient(
                d_probs=_categorical_weighted_score(params, sequences, coef)
            )
        return GradientEstimate(
            direction=direction,
            weights=coef,
            baseline=baseline,
            effective_sample_size=float(n),
            loss_estimate=float(costs.mean()),
        )

    w = utility_weights(costs, loss)
    ess = float(1.0 / np.sum(w * w))
    loss_estimate = _utility_loss_value(costs, loss)
    if params.is_gaussian:
        first, second = weighted_moments(sequences, w)
        direction = GaussianGradient(
            d_mean=-(first - params.means), d_second=-(second - params.second_moments)
        )
        return GradientEstimate(
            direction=direction,
            weights=w,
            baseline=0.0,
            effective_sample_size=ess,
            loss_estimate=loss_estimate,
            weighted_first_moment=first,
            weighted_second_moment=second,
        )
    direction = CategoricalGradient(d_probs=-_categorical_weighted_score(params, sequences, w))
    return GradientEstimate(
        direction=direction,
        weights=w,
        baseline=0.0,
        effective_sample_size=ess,
        loss_estimate=loss_estimate,
    )


def estimate_gradient(batch: RolloutBatch, params: HorizonParams, loss: LossSpec) -> GradientEstimate:
    """Gradient estimate from a rollout batch sampled from ``params``."""
    return estimate_gradient_from_costs(params, batch.sequences, batch.costs, loss)


def _utility_loss_value(costs: np.ndarray, loss: LossSpec) -> float:
    """Sample estimate of the utility loss -log mean U(C), computed stably."""
    if isinstance(loss, ExpUtility):
        finite = np.isfinite(costs)
        cmin = float(costs[finite].min())
        mean_shifted = float(np.where(finite, np.exp(-(costs - cmin) / loss.lam), 0.0).mean())
        return cmin / loss.lam - math.log(mean_shifted)
    c_max = loss.threshold if loss.threshold is not None else adaptive_threshold(costs, loss.elite_fraction)
    frac = float(((costs <= c_max) & np.isfinite(costs)).mean())
    return -math.log(frac)
