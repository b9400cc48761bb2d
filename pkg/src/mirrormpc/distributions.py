"""Control distributions over a planning horizon.

A control distribution is a sequence of H independent per-step distributions
(Gaussian over continuous controls, categorical over a finite control set).
This module owns their parameterizations (natural / expectation duality),
sampling, log-probability scores, the execution-time mode, and the shift
operator that warm-starts one planning round from the previous one.

Shapes used throughout: continuous control sequences are float arrays of
shape ``(H, m)`` (batches ``(n, H, m)``); discrete sequences are integer
index arrays of shape ``(H,)`` (batches ``(n, H)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ValidationError

# Probabilities below this are clamped (and the row renormalized) before any
# log-prob evaluation; guards log() against denormal entries produced by long
# runs of multiplicative updates. Exact zeros chosen by a sequence are still
# rejected: such a sequence is outside the support.
PROB_FLOOR = 1e-12

_SYM_RTOL = 1e-12
_PROB_SUM_ATOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GaussianParams:
    """One planning step: N(mean, covariance) over an m-dimensional control."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _freeze(np.atleast_1d(self.mean))
        cov = _freeze(np.atleast_2d(self.covariance))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        m = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (m, m):
            raise ValidationError(f"mean/covariance shape mismatch: {mean.shape} vs {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValidationError("non-finite Gaussian parameters")
        asym = np.max(np.abs(cov - cov.T)) if m else 0.0
        scale = max(float(np.max(np.abs(cov))), 1e-300)
        if asym > _SYM_RTOL * scale:
            raise ValidationError(f"covariance asymmetry {asym:.3e} exceeds tolerance")
        # SPD check doubles as the cached factor; failure is a validation
        # error, never a silent repair.
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("covariance is not positive-definite") from exc
        object.__setattr__(self, "_chol", _freeze(chol))

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def second_moment(self) -> np.ndarray:
        return self.covariance + np.outer(self.mean, self.mean)


@dataclass(frozen=True)
class CategoricalParams:
    """One planning step: probabilities over m discrete controls."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _freeze(np.atleast_1d(self.probs))
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.shape[0] < 1:
            raise ValidationError("probs must be a nonempty vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValidationError("probabilities must be finite and nonnegative")
        if abs(float(probs.sum()) - 1.0) > _PROB_SUM_ATOL:
            raise ValidationError(f"probabilities sum to {probs.sum()!r}, not 1")

    @property
    def dim(self) -> int:
        return self.probs.shape[0]


BasicParams = GaussianParams | CategoricalParams


@dataclass(frozen=True)
class HorizonParams:
    """Length-H sequence of per-step distribution parameters (one family)."""

    steps: tuple

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 1:
            raise ValidationError("horizon must be at least 1")
        first = type(steps[0])
        if first not in (GaussianParams, CategoricalParams):
            raise ValidationError(f"unsupported step type {first.__name__}")
        if any(type(s) is not first for s in steps):
            raise ValidationError("all horizon steps must share one distribution family")
        if any(s.dim != steps[0].dim for s in steps):
            raise ValidationError("all horizon steps must share one control dimension")

    @classmethod
    def gaussian(cls, means, covariances) -> "HorizonParams":
        """Build from stacked means (H, m) and covariances (H, m, m) or one shared (m, m)."""
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covariances = np.asarray(covariances, dtype=np.float64)
        if covariances.ndim == 2:
            covariances = np.broadcast_to(covariances, (means.shape[0],) + covariances.shape)
        return cls(tuple(GaussianParams(m, c) for m, c in zip(means, covariances)))

    @classmethod
    def categorical(cls, probs) -> "HorizonParams":
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        return cls(tuple(CategoricalParams(p) for p in probs))

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.steps[0].dim

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.steps[0], GaussianParams)

    # Stacked views used by the vectorized sampling / estimation paths.

    @cached_property
    def means(self) -> np.ndarray:
        self._require_gaussian()
        return np.stack([s.mean for s in self.steps])

    @cached_property
    def covariances(self) -> np.ndarray:
        self._require_gaussian()
        return np.stack([s.covariance for s in self.steps])

    @cached_property
    def chols(self) -> np.ndarray:
        self._require_gaussian()
        return np.stack([s.chol for s in self.steps])

    @cached_property
    def second_moments(self) -> np.ndarray:
        self._require_gaussian()
        return np.stack([s.second_moment for s in self.steps])

    @cached_property
    def probs(self) -> np.ndarray:
        if self.is_gaussian:
            raise ValidationError("probs is only defined for categorical parameters")
        return np.stack([s.probs for s in self.steps])

    def _require_gaussian(self):
        if not self.is_gaussian:
            raise ValidationError("operation requires Gaussian parameters")


@dataclass(frozen=True)
class ShiftPolicy:
    """Tail rule for the shift operator: repeat the last step or insert a default."""

    default: BasicParams | None = None

    @property
    def repeats_last(self) -> bool:
        return self.default is None


REPEAT_LAST = ShiftPolicy()


def shift(params: HorizonParams, policy: ShiftPolicy = REPEAT_LAST) -> HorizonParams:
    """Advance the horizon one step and fill the freed tail slot.

    The first H-1 steps of the result are steps 1..H-1 of the input; the last
    step repeats the input's final step or takes the policy default.
    """
    if policy.repeats_last:
        tail = params.steps[-1]
    else:
        tail = policy.default
        if type(tail) is not type(params.steps[0]):
            raise ValidationError("shift default must match the distribution family")
        if tail.dim != params.dim:
            raise ValidationError("shift default has the wrong control dimension")
    return HorizonParams(params.steps[1:] + (tail,))


def sample_controls(params: HorizonParams, n: int, rng) -> np.ndarray:
    """Draw n control sequences, i.i.d. across samples and across steps.

    Returns (n, H, m) floats for Gaussians, (n, H) int64 indices for
    categoricals. Deterministic given a seeded generator.
    """
    if n < 1:
        raise ValidationError("need at least one sample")
    rng = np.random.default_rng(rng)
    H = params.horizon
    if params.is_gaussian:
        z = rng.standard_normal((n, H, params.dim))
        return params.means[None, :, :] + np.einsum("hij,nhj->nhi", params.chols, z)
    cum = np.cumsum(params.probs, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((n, H))
    return (u[:, :, None] >= cum[None, :, :]).sum(axis=2).astype(np.int64)


def mode(params: HorizonParams) -> np.ndarray:
    """Most likely control sequence: the mean sequence (Gaussian) or the
    per-step argmax with lowest-index tie-breaking (categorical)."""
    if params.is_gaussian:
        return params.means.copy()
    return np.argmax(params.probs, axis=1).astype(np.int64)


def _effective_probs(probs: np.ndarray) -> np.ndarray:
    clipped = np.maximum(probs, PROB_FLOOR)
    return clipped / clipped.sum(axis=1, keepdims=True)


def _check_support(params: HorizonParams, seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq)
    if params.is_gaussian:
        seq = seq.reshape(params.horizon, params.dim).astype(np.float64)
        return seq
    seq = seq.reshape(params.horizon).astype(np.int64)
    if np.any(seq < 0) or np.any(seq >= params.dim):
        raise ValidationError("control index out of range")
    picked = params.probs[np.arange(params.horizon), seq]
    if np.any(picked == 0.0):
        raise ValidationError("sequence selects a zero-probability control")
    return seq


def log_prob(params: HorizonParams, seq: np.ndarray) -> float:
    """Joint log-density/mass of one control sequence."""
    seq = _check_support(params, seq)
    if not params.is_gaussian:
        eff = _effective_probs(params.probs)
        return float(np.sum(np.log(eff[np.arange(params.horizon), seq])))
    total = 0.0
    for h, step in enumerate(params.steps):
        diff = seq[h] - step.mean
        y = np.linalg.solve(step.chol, diff)
        logdet = 2.0 * np.sum(np.log(np.diag(step.chol)))
        total += -0.5 * float(y @ y) - 0.5 * logdet - 0.5 * step.dim * np.log(2.0 * np.pi)
    return float(total)


@dataclass
class GaussianGradient:
    """Per-step gradient w.r.t. the Gaussian natural parameters, expressed in
    the sufficient-statistic blocks (u, u u^T): ``d_mean`` is (H, m),
    ``d_second`` is (H, m, m)."""

    d_mean: np.ndarray
    d_second: np.ndarray

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(self.d_mean))), float(np.max(np.abs(self.d_second))))


@dataclass
class CategoricalGradient:
    """Per-step gradient w.r.t. the categorical expectation parameters; (H, m)."""

    d_probs: np.ndarray

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.d_probs)))


HorizonGradient = GaussianGradient | CategoricalGradient


def log_prob_grad(params: HorizonParams, seq: np.ndarray) -> HorizonGradient:
    """Score function of one sequence.

    Gaussian (natural parameterization): per-step blocks
    (u_h - m_h, u_h u_h^T - S_h), i.e. sufficient statistics minus the
    expectation parameters. Categorical (expectation parameterization):
    e_{u_h} / theta_h elementwise.
    """
    seq = _check_support(params, seq)
    if params.is_gaussian:
        d_mean = seq - params.means
        outer = np.einsum("hi,hj->hij", seq, seq)
        return GaussianGradient(d_mean=d_mean, d_second=outer - params.second_moments)
    eff = _effective_probs(params.probs)
    grad = np.zeros_like(eff)
    rows = np.arange(params.horizon)
    grad[rows, seq] = 1.0 / eff[rows, seq]
    return CategoricalGradient(d_probs=grad)


# Natural / expectation duality -------------------------------------------------


@dataclass(frozen=True)
class GaussianExpectation:
    """Expectation parameters per step: first moment (H, m), second moment (H, m, m)."""

    mean: np.ndarray
    second: np.ndarray


@dataclass(frozen=True)
class GaussianNatural:
    """Natural parameters per step: Sigma^-1 m (H, m) and -1/2 Sigma^-1 (H, m, m)."""

    lin: np.ndarray
    quad: np.ndarray


def to_expectation(params: HorizonParams):
    """Expectation parameters: (m, S) blocks for Gaussians, probs for categoricals."""
    if params.is_gaussian:
        return GaussianExpectation(mean=params.means.copy(), second=params.second_moments.copy())
    return params.probs.copy()


def to_natural(params: HorizonParams):
    """Natural parameters: (Sigma^-1 m, -1/2 Sigma^-1) for Gaussians, log probs
    (overcomplete chart, clamped at the probability floor) for categoricals."""
    if not params.is_gaussian:
        return np.log(_effective_probs(params.probs))
    H, m = params.horizon, params.dim
    lin = np.empty((H, m))
    quad = np.empty((H, m, m))
    eye = np.eye(m)
    for h, step in enumerate(params.steps):
        prec = np.linalg.solve(step.covariance, eye)
        prec = 0.5 * (prec + prec.T)
        lin[h] = prec @ step.mean
        quad[h] = -0.5 * prec
    return GaussianNatural(lin=lin, quad=quad)


def gaussian_from_expectation(exp: GaussianExpectation) -> HorizonParams:
    """Rebuild parameters from (m, S); Sigma = S - m m^T must be SPD."""
    mean = np.asarray(exp.mean, dtype=np.float64)
    second = np.asarray(exp.second, dtype=np.float64)
    cov = second - np.einsum("hi,hj->hij", mean, mean)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return HorizonParams.gaussian(mean, cov)


def gaussian_from_natural(nat: GaussianNatural) -> HorizonParams:
    lin = np.asarray(nat.lin, dtype=np.float64)
    quad = np.asarray(nat.quad, dtype=np.float64)
    H, m = lin.shape
    eye = np.eye(m)
    means = np.empty((H, m))
    covs = np.empty((H, m, m))
    for h in range(H):
        cov = np.linalg.solve(-2.0 * quad[h], eye)
        cov = 0.5 * (cov + cov.T)
        covs[h] = cov
        means[h] = cov @ lin[h]
    return HorizonParams.gaussian(means, covs)


def categorical_from_expectation(probs: np.ndarray) -> HorizonParams:
    return HorizonParams.categorical(probs)


def categorical_from_natural(logits: np.ndarray) -> HorizonParams:
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return HorizonParams.categorical(p / p.sum(axis=1, keepdims=True))
