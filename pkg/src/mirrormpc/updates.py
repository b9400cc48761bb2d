"""Proximal parameter updates under the supported Bregman divergences.

One update per planning round: theta = argmin <gamma g, theta> + D(theta, theta~).
Divergence choices give the concrete rules:

* quadratic (identity / Fisher / custom metric): projected, natural, and
  exact-quadratic gradient steps;
* KL on expectation parameters (categorical): exponentiated gradient;
* KL on natural parameters (Gaussian): closed-form expectation-parameter step
  mu <- mu~ - gamma g, which for utility-weighted gradients is a convex
  combination of the previous moments and the utility-weighted sample
  moments. The cross-entropy method and MPPI are its gamma = 1 special cases
  with indicator and exponential utilities.

Horizon steps are independent, so every rule factorizes per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import QuadraticLoss
from .distributions import (
    PROB_FLOOR,
    CategoricalGradient,
    GaussianGradient,
    HorizonGradient,
    HorizonParams,
    to_expectation,
)
from .errors import InfeasibleStepError, ValidationError
from .losses import ExpUtility, GradientEstimate, ProbLowCost, utility_weights, weighted_moments
from .simulation import RolloutBatch


# Divergence specifications -----------------------------------------------------


@dataclass(frozen=True)
class QuadraticIdentity:
    """Squared Euclidean divergence: plain (projected) gradient descent."""


@dataclass(frozen=True)
class QuadraticFisher:
    """Quadratic divergence in the Fisher metric: natural gradient descent."""


@dataclass(frozen=True)
class QuadraticCustom:
    """Quadratic divergence 1/2 (t - t~)^T A (t - t~) with a fixed SPD matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        asym = float(np.max(np.abs(a - a.T)))
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(a)))):
            raise ValidationError("custom metric must be symmetric")
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("custom metric must be positive-definite") from exc
        object.__setattr__(self, "matrix", a)


@dataclass(frozen=True)
class KLExpectation:
    """KL(pi_theta || pi_theta~) on expectation parameters (categorical)."""


@dataclass(frozen=True)
class KLNatural:
    """KL(pi_theta~ || pi_theta) on natural parameters (Gaussian); optionally
    freezes the covariance/second moment (mean-only update)."""

    update_covariance: bool = True


DivergenceSpec = QuadraticIdentity | QuadraticFisher | QuadraticCustom | KLExpectation | KLNatural


# Step-size schedules -----------------------------------------------------------


@dataclass(frozen=True)
class ConstantStep:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError("step size must be positive")

    def at(self, t: int) -> float:
        return self.gamma


@dataclass(frozen=True)
class IndexedStep:
    """Explicit per-round step sizes; the last entry repeats past the end."""

    gammas: tuple

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        if not gammas or any(g <= 0 for g in gammas):
            raise ValidationError("all step sizes must be positive")
        object.__setattr__(self, "gammas", gammas)

    def at(self, t: int) -> float:
        return self.gammas[min(t, len(self.gammas) - 1)]


StepSchedule = ConstantStep | IndexedStep


# Simplex projections -----------------------------------------------------------


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    idx = np.arange(1, v.shape[0] + 1)
    rho = np.nonzero(u > cssv / idx)[0][-1]
    tau = cssv[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_simplex_weighted(z: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Projection onto the simplex in the metric 1/2 sum (t_j - z_j)^2 / scale_j.

    KKT form t_j = max(0, z_j - nu * scale_j) with nu solving sum t = 1;
    exact via the sorted breakpoints nu_j = z_j / scale_j.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    if np.any(scale <= 0):
        raise ValidationError("projection scales must be positive")
    order = np.argsort(z / scale)[::-1]
    z_sum = 0.0
    s_sum = 0.0
    nu = 0.0
    for count, j in enumerate(order, start=1):
        z_sum += z[j]
        s_sum += scale[j]
        candidate = (z_sum - 1.0) / s_sum
        boundary = z[order[count]] / scale[order[count]] if count < order.shape[0] else -np.inf
        if candidate >= boundary:
            nu = candidate
            break
    return np.maximum(z - nu * scale, 0.0)


# Gradient coordinate helpers ---------------------------------------------------


def _direction(grad) -> HorizonGradient:
    if isinstance(grad, GradientEstimate):
        return grad.direction
    if isinstance(grad, (GaussianGradient, CategoricalGradient)):
        return grad
    raise ValidationError(f"unsupported gradient object {type(grad).__name__}")


def _match_shapes(params: HorizonParams, direction: HorizonGradient) -> None:
    if params.is_gaussian:
        if not isinstance(direction, GaussianGradient):
            raise ValidationError("Gaussian parameters need a Gaussian gradient")
        if direction.d_mean.shape != (params.horizon, params.dim):
            raise ValidationError("gradient shape does not match parameters")
    else:
        if not isinstance(direction, CategoricalGradient):
            raise ValidationError("categorical parameters need a categorical gradient")
        if direction.d_probs.shape != (params.horizon, params.dim):
            raise ValidationError("gradient shape does not match parameters")


def gaussian_mean_space_gradient(params: HorizonParams, direction: GaussianGradient) -> np.ndarray:
    """Gradient w.r.t. the means themselves: Sigma_h^-1 times the natural
    mean block, per step."""
    out = np.empty_like(direction.d_mean)
    for h, step in enumerate(params.steps):
        out[h] = np.linalg.solve(step.covariance, direction.d_mean[h])
    return out


# Update rules ------------------------------------------------------------------


def projected_gradient_step(params: HorizonParams, grad, gamma: float, projection=None) -> HorizonParams:
    """theta <- Pi(theta~ - gamma g) in the identity metric.

    Gaussians step their means (mean gradient recovered from the natural
    block); categoricals step probabilities with an exact Euclidean simplex
    projection. ``projection`` overrides the feasible-set projection and maps
    the stacked (H, dim) parameter array.
    """
    direction = _direction(grad)
    _match_shapes(params, direction)
    if params.is_gaussian:
        g = gaussian_mean_space_gradient(params, direction)
        target = params.means - gamma * g
        if projection is not None:
            target = projection(target)
        return HorizonParams.gaussian(target, params.covariances)
    target = params.probs - gamma * direction.d_probs
    if projection is not None:
        target = projection(target)
    else:
        target = np.stack([project_simplex(row) for row in target])
    return HorizonParams.categorical(target)


def natural_gradient_step(params: HorizonParams, grad, gamma: float) -> HorizonParams:
    """theta <- theta~ - gamma F(theta~)^-1 g with the closed-form Fisher metric.

    Gaussian (mean block): F = Sigma^-1, so the step is m - gamma * d_mean
    in the natural block coordinates; covariance untouched. Categorical:
    F = diag(1/theta), with the Fisher-metric simplex projection restoring
    feasibility when the raw step leaves the simplex.
    """
    direction = _direction(grad)
    _match_shapes(params, direction)
    if params.is_gaussian:
        return HorizonParams.gaussian(params.means - gamma * direction.d_mean, params.covariances)
    probs = params.probs
    if np.any(probs <= 0.0):
        raise ValidationError("singular Fisher block: zero-probability category")
    raw = probs - gamma * probs * direction.d_probs
    rows = [project_simplex_weighted(row, p) for row, p in zip(raw, probs)]
    return HorizonParams.categorical(np.stack(rows))


def quadratic_custom_step(theta: np.ndarray, grad: np.ndarray, matrix: np.ndarray, gamma: float) -> np.ndarray:
    """Unconstrained prox of <gamma g, theta> + 1/2 (theta-theta~)^T A (theta-theta~)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    return theta - gamma * np.linalg.solve(matrix, grad)


def quadratic_exact_step(quad: QuadraticLoss) -> np.ndarray:
    """Exact minimizer -R^-1 r of a quadratic per-round loss.

    Equals the generic quadratic prox with metric R, step size 1, and the
    exact gradient R theta~ + r, for any theta~.
    """
    return quad.minimizer()


def exponentiated_gradient_step(params: HorizonParams, grad, gamma: float) -> HorizonParams:
    """Categorical KL prox: theta_h propto theta~_h * exp(-gamma g_h).

    The exponent is max-shifted per step, which is exact under normalization
    and guards against overflow.
    """
    direction = _direction(grad)
    _match_shapes(params, direction)
    if params.is_gaussian:
        raise ValidationError("exponentiated gradient requires categorical parameters")
    probs = params.probs
    if np.any(probs <= 0.0):
        raise ValidationError("exponentiated gradient requires strictly positive entries")
    logw = np.log(probs) - gamma * direction.d_probs
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    # Exact probabilities never reach zero under this update; floor the float
    # representation so later rounds keep strictly positive entries.
    w = np.maximum(w, PROB_FLOOR)
    return HorizonParams.categorical(w / w.sum(axis=1, keepdims=True))


def _recover_gaussian(params: HorizonParams, new_means: np.ndarray, new_seconds) -> HorizonParams:
    """Rebuild Gaussian parameters from updated moments; second-moment updates
    must recover an SPD covariance or the step is infeasible."""
    if new_seconds is None:
        return HorizonParams.gaussian(new_means, params.covariances)
    cov = new_seconds - np.einsum("hi,hj->hij", new_means, new_means)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    try:
        return HorizonParams.gaussian(new_means, cov)
    except ValidationError as exc:
        raise InfeasibleStepError(
            "updated second moment does not yield an SPD covariance; "
            "fall back to a covariance-frozen step"
        ) from exc


def _moment_update(
    params: HorizonParams,
    weighted_first: np.ndarray,
    weighted_second: np.ndarray,
    gamma: float,
    update_covariance: bool,
) -> HorizonParams:
    """mu <- (1-gamma) mu~ + gamma * (utility-weighted sufficient statistics).

    Shared by the KL-natural dispatch and the CEM/MPPI reference updates so
    the special-case identities are bitwise exact.
    """
    new_means = (1.0 - gamma) * params.means + gamma * weighted_first
    new_seconds = None
    if update_covariance:
        new_seconds = (1.0 - gamma) * params.second_moments + gamma * weighted_second
    return _recover_gaussian(params, new_means, new_seconds)


def gaussian_moment_step(
    params: HorizonParams,
    batch,
    weights: np.ndarray,
    gamma: float,
    update_covariance: bool = True,
) -> HorizonParams:
    """Utility-weighted moment update of a Gaussian horizon (gamma in (0, 1])."""
    if not 0.0 < gamma <= 1.0:
        raise ValidationError("moment updates require gamma in (0, 1]")
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValidationError("utility weights must sum to 1")
    sequences = batch.sequences if isinstance(batch, RolloutBatch) else np.asarray(batch)
    first, second = weighted_moments(sequences.reshape(weights.shape[0], params.horizon, params.dim), weights)
    return _moment_update(params, first, second, gamma, update_covariance)


def cem_step(params: HorizonParams, batch: RolloutBatch, c_max: float) -> HorizonParams:
    """Cross-entropy method: moments of the elite samples (indicator utility,
    gamma = 1, covariance updated)."""
    w = utility_weights(batch.costs, ProbLowCost(threshold=float(c_max)))
    seqs = batch.sequences.reshape(batch.n, params.horizon, params.dim)
    first, second = weighted_moments(seqs, w)
    return _moment_update(params, first, second, 1.0, True)


def mppi_step(params: HorizonParams, batch: RolloutBatch, lam: float, gamma: float = 1.0) -> HorizonParams:
    """Path-integral update: exponential-utility weighted mean, covariance
    untouched; gamma = 1 recovers the classic rule."""
    if not 0.0 < gamma <= 1.0:
        raise ValidationError("mppi step requires gamma in (0, 1]")
    w = utility_weights(batch.costs, ExpUtility(lam))
    seqs = batch.sequences.reshape(batch.n, params.horizon, params.dim)
    first, second = weighted_moments(seqs, w)
    return _moment_update(params, first, second, gamma, False)


def _kl_natural_step(params: HorizonParams, grad, gamma: float, update_covariance: bool) -> HorizonParams:
    if not params.is_gaussian:
        raise ValidationError(
            "KL-natural updates are defined for Gaussian parameters; "
            "categorical distributions use the expectation-parameter KL"
        )
    if update_covariance and not 0.0 < gamma <= 1.0:
        raise ValidationError("covariance-updating KL-natural steps require gamma in (0, 1]")
    if isinstance(grad, GradientEstimate) and grad.has_utility_moments:
        return _moment_update(
            params, grad.weighted_first_moment, grad.weighted_second_moment, gamma, update_covariance
        )
    direction = _direction(grad)
    _match_shapes(params, direction)
    # Expectation parameters move against the natural-parameter gradient.
    exp = to_expectation(params)
    new_means = exp.mean - gamma * direction.d_mean
    new_seconds = exp.second - gamma * direction.d_second if update_covariance else None
    return _recover_gaussian(params, new_means, new_seconds)


def dmd_step(params: HorizonParams, grad, divergence: DivergenceSpec, gamma: float, projection=None) -> HorizonParams:
    """One mirror-descent proximal step under the chosen divergence.

    A zero step size or an exactly zero gradient returns the parameters
    unchanged (the prox minimizer is theta~ itself).
    """
    if gamma < 0:
        raise ValidationError("step size must be nonnegative")
    direction = _direction(grad)
    _match_shapes(params, direction)
    if gamma == 0.0 or direction.max_abs() == 0.0:
        return params
    if isinstance(divergence, QuadraticIdentity):
        return projected_gradient_step(params, grad, gamma, projection)
    if isinstance(divergence, QuadraticFisher):
        return natural_gradient_step(params, grad, gamma)
    if isinstance(divergence, QuadraticCustom):
        if not params.is_gaussian:
            raise ValidationError("custom quadratic metrics are supported for Gaussian means")
        g = gaussian_mean_space_gradient(params, direction)
        flat = quadratic_custom_step(params.means.reshape(-1), g.reshape(-1), divergence.matrix, gamma)
        return HorizonParams.gaussian(flat.reshape(params.horizon, params.dim), params.covariances)
    if isinstance(divergence, KLExpectation):
        return exponentiated_gradient_step(params, grad, gamma)
    if isinstance(divergence, KLNatural):
        return _kl_natural_step(params, grad, gamma, divergence.update_covariance)
    raise ValidationError(f"unsupported divergence {type(divergence).__name__}")
