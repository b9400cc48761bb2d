"""Exact quadratic per-round losses for linear systems (LQR / LEQR).

Stacking the H-step linear dynamics x' = Ax + Bu + w into one convolution
system x_hat = F x0 + G u_hat + L w_hat turns the expected-cost and
exponential-utility losses of a Dirac (open-loop) control distribution into
exact quadratics 1/2 theta^T R_t theta + r_t^T theta + const. These serve as
ground-truth verification targets for the proximal updates.

The first block row of L is zero (no noise enters the current state), so the
LEQR noise kernel is assembled on the sub-block for the noise-reachable
states x_{t+1..t+H}; the deterministic first state's cost lands in the
constant term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .simulation import CostModel, DynamicsModel

_SYM_ATOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a matrix")
    return a


def _check_spd(a: np.ndarray, name: str) -> np.ndarray:
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > _SYM_ATOL * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0):
        raise ValidationError(f"{name} asymmetry {asym:.3e} exceeds tolerance")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"{name} is not positive-definite") from exc
    return a


def _check_psd(a: np.ndarray, name: str) -> np.ndarray:
    eigs = np.linalg.eigvalsh(0.5 * (a + a.T))
    if eigs.size and eigs.min() < -1e-10 * max(1.0, float(eigs.max())):
        raise ValidationError(f"{name} is not positive-semidefinite")
    return a


@dataclass(frozen=True)
class LtiSystem:
    """x' = A x + B u + w with w ~ N(0, W)."""

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        W = _as_matrix(self.W, "W")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or W.shape != (n, n):
            raise ValidationError("inconsistent LTI dimensions")
        _check_spd(W, "W")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", W)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class StackedSystem:
    """Convolution matrices of the H-step system plus block cost matrices.

    F is (H+1)n x n with h-th block A^h; G ((H+1)n x Hm) and L ((H+1)n x Hn)
    are lower block-triangular Toeplitz with zero first block row.
    """

    sys: LtiSystem
    F: np.ndarray
    G: np.ndarray
    L: np.ndarray
    blockQ: np.ndarray
    blockR: np.ndarray
    blockW: np.ndarray
    horizon: int


def build_stacked(sys: LtiSystem, Q, R, Q_end, horizon: int) -> StackedSystem:
    """Assemble the stacked convolution system and block cost matrices."""
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    n, m, H = sys.n, sys.m, horizon
    Q = _check_psd(_as_matrix(Q, "Q"), "Q")
    Q_end = _check_psd(_as_matrix(Q_end, "Q_end"), "Q_end")
    R = _check_spd(_as_matrix(R, "R"), "R")
    if Q.shape != (n, n) or Q_end.shape != (n, n) or R.shape != (m, m):
        raise ValidationError("cost matrix dimensions do not match the system")

    powers = [np.eye(n)]
    for _ in range(H):
        powers.append(sys.A @ powers[-1])

    F = np.vstack(powers)
    G = np.zeros(((H + 1) * n, H * m))
    L = np.zeros(((H + 1) * n, H * n))
    for i in range(1, H + 1):
        for j in range(i):
            G[i * n : (i + 1) * n, j * m : (j + 1) * m] = powers[i - 1 - j] @ sys.B
            L[i * n : (i + 1) * n, j * n : (j + 1) * n] = powers[i - 1 - j]

    blockQ = np.zeros(((H + 1) * n, (H + 1) * n))
    for i in range(H):
        blockQ[i * n : (i + 1) * n, i * n : (i + 1) * n] = Q
    blockQ[H * n :, H * n :] = Q_end
    blockR = np.kron(np.eye(H), R)
    blockW = np.kron(np.eye(H), sys.W)
    return StackedSystem(sys=sys, F=F, G=G, L=L, blockQ=blockQ, blockR=blockR, blockW=blockW, horizon=H)


@dataclass(frozen=True)
class QuadraticLoss:
    """Exact per-round loss 1/2 theta^T R theta + r^T theta + constant."""

    R: np.ndarray
    r: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        R = _as_matrix(self.R, "R")
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        if R.shape != (r.shape[0], r.shape[0]):
            raise ValidationError("R/r dimension mismatch")
        _check_spd(R, "R")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    def value(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        return float(0.5 * theta @ self.R @ theta + self.r @ theta + self.constant)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        return self.R @ theta + self.r

    def minimizer(self) -> np.ndarray:
        return -np.linalg.solve(self.R, self.r)

    def minimum(self) -> float:
        return self.value(self.minimizer())


def lqr_quadratic(stacked: StackedSystem, x0) -> QuadraticLoss:
    """Expected-cost quadratic: R_t = G^T Q G + R, r_t = G^T Q F x0, with the
    noise trace and initial-state cost in the constant term."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    G, F, Q = stacked.G, stacked.F, stacked.blockQ
    R_t = G.T @ Q @ G + stacked.blockR
    r_t = G.T @ Q @ F @ x0
    const = 0.5 * float(x0 @ F.T @ Q @ F @ x0) + 0.5 * float(
        np.trace(Q @ stacked.L @ stacked.blockW @ stacked.L.T)
    )
    return QuadraticLoss(R=0.5 * (R_t + R_t.T), r=r_t, constant=const)


def leqr_quadratic(stacked: StackedSystem, x0, lam: float) -> QuadraticLoss:
    """Exponential-utility quadratic -log E[exp(-C/lambda)] for a Dirac policy.

    Applies the noise kernel Sigma^-1 - Sigma^-1 (Q/lambda + Sigma^-1)^-1
    Sigma^-1 with Sigma = L1 W L1^T on the noise-reachable sub-block.
    """
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    n = stacked.sys.n
    F1, G1, L1 = stacked.F[n:], stacked.G[n:], stacked.L[n:]
    Q1 = stacked.blockQ[n:, n:]
    Q00 = stacked.blockQ[:n, :n]
    sigma = L1 @ stacked.blockW @ L1.T
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("singular stacked noise covariance") from exc
    eye = np.eye(sigma.shape[0])
    sigma_inv = np.linalg.solve(sigma, eye)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    inner = Q1 / lam + sigma_inv
    kernel = sigma_inv - sigma_inv @ np.linalg.solve(inner, sigma_inv)
    kernel = 0.5 * (kernel + kernel.T)

    R_t = G1.T @ kernel @ G1 + stacked.blockR / lam
    r_t = G1.T @ kernel @ F1 @ x0
    sign, logdet = np.linalg.slogdet(Q1 @ sigma / lam + eye)
    if sign <= 0:
        raise ValidationError("noise kernel determinant is not positive")
    const = (
        0.5 * float(x0 @ F1.T @ kernel @ F1 @ x0)
        + 0.5 * float(logdet)
        + 0.5 * float(x0 @ Q00 @ x0) / lam
    )
    return QuadraticLoss(R=0.5 * (R_t + R_t.T), r=r_t, constant=const)


def gaussian_exp_quadratic(mu, Sigma, A_mat, b) -> float:
    """Closed form of E[exp(-1/2 x^T A x - b^T x)] for x ~ N(mu, Sigma)."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    Sigma = _check_spd(_as_matrix(Sigma, "Sigma"), "Sigma")
    A_mat = _check_psd(_as_matrix(A_mat, "A"), "A")
    sigma_inv = np.linalg.solve(Sigma, np.eye(Sigma.shape[0]))
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    v = sigma_inv @ mu - b
    exponent = -0.5 * (float(mu @ sigma_inv @ mu) - float(v @ np.linalg.solve(A_mat + sigma_inv, v)))
    sign, logdet = np.linalg.slogdet(A_mat @ Sigma + np.eye(Sigma.shape[0]))
    if sign <= 0:
        raise ValidationError("A Sigma + I must have positive determinant")
    return float(np.exp(exponent - 0.5 * logdet))


class LtiDynamics(DynamicsModel):
    """Simulation adapter for an LtiSystem; noise draws are standard normal
    vectors mapped through the Cholesky factor of W."""

    def __init__(self, sys: LtiSystem):
        self.sys = sys
        self.state_dim = sys.n
        self.noise_dim = sys.n
        self.deterministic = False
        self._chol_w = np.linalg.cholesky(sys.W)

    def step(self, state, control, noise):
        state = np.asarray(state, dtype=np.float64).reshape(-1)
        control = np.asarray(control, dtype=np.float64).reshape(-1)
        z = np.asarray(noise, dtype=np.float64).reshape(-1)
        return self.sys.A @ state + self.sys.B @ control + self._chol_w @ z

    def step_batch(self, states, controls, noise):
        controls = np.asarray(controls, dtype=np.float64).reshape(states.shape[0], -1)
        w = self._chol_w @ np.asarray(noise, dtype=np.float64).reshape(-1)
        return states @ self.sys.A.T + controls @ self.sys.B.T + w[None, :]


class QuadraticCost(CostModel):
    """Stage cost 1/2 x^T Q x + 1/2 u^T R u and terminal 1/2 x^T Q_end x."""

    def __init__(self, Q, R, Q_end):
        self.Q = _as_matrix(Q, "Q")
        self.R = _as_matrix(R, "R")
        self.Q_end = _as_matrix(Q_end, "Q_end")

    def stage(self, state, control):
        x = np.asarray(state, dtype=np.float64).reshape(-1)
        u = np.asarray(control, dtype=np.float64).reshape(-1)
        return float(0.5 * x @ self.Q @ x + 0.5 * u @ self.R @ u)

    def terminal(self, state):
        x = np.asarray(state, dtype=np.float64).reshape(-1)
        return float(0.5 * x @ self.Q_end @ x)

    def stage_batch(self, states, controls):
        controls = np.asarray(controls, dtype=np.float64).reshape(states.shape[0], -1)
        return 0.5 * np.einsum("bi,ij,bj->b", states, self.Q, states) + 0.5 * np.einsum(
            "bi,ij,bj->b", controls, self.R, controls
        )

    def terminal_batch(self, states):
        return 0.5 * np.einsum("bi,ij,bj->b", states, self.Q_end, states)
