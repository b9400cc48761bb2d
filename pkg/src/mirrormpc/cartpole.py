"""Cartpole swing-up benchmark: dynamics, cost, and fused rollout kernels.

The cart (mass ``cart_mass``) slides horizontally; a massless pole with a
point mass ``tip_mass`` at its end pivots on the cart. State is
``(p, phi, v, phi_dot)`` with ``phi = 0`` hanging down and ``phi = pi``
upright. The commanded force is clamped (continuous variant only), Gaussian
force noise is added, and the equations of motion are integrated with one
forward-Euler step of ``dt``.

The planner's model and the true system differ only in pole length
(deliberate model bias). The batched rollout-cost kernel is the package's
hot path; it has a numba-jitted and a vectorized numpy implementation,
selected via :mod:`mirrormpc.backend`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .backend import HAVE_NUMBA, njit, prange
from .errors import ValidationError
from .simulation import CostModel, DynamicsModel


@dataclass(frozen=True)
class CartpoleConfig:
    """Benchmark parameters (SI units)."""

    cart_mass: float = 0.711
    tip_mass: float = 0.209
    pole_length_true: float = 0.326
    pole_length_model: float = 0.346
    dt: float = 0.02
    control_noise_std: float = 5.0
    control_clamp: tuple = (-25.0, 25.0)
    angle_threshold: float = 0.21
    discrete_forces: tuple = (-10.0, 0.0, 10.0)
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("cart_mass", "tip_mass", "pole_length_true", "pole_length_model", "dt"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.control_clamp[0] >= self.control_clamp[1]:
            raise ValidationError("control_clamp must be an increasing interval")


def cartpole_cost(state, control=0.0, angle_threshold: float = 0.21) -> float:
    """Stage cost: quadratic state penalty plus an out-of-band angle penalty."""
    p, phi, v, phi_dot = (float(x) for x in np.asarray(state).reshape(4))
    dphi = phi - np.pi
    c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * phi_dot * phi_dot
    if abs(dphi) >= angle_threshold:
        c += 1000.0
    return c


def cartpole_terminal(state, angle_threshold: float = 0.21) -> float:
    """Terminal cost: the stage cost evaluated with zero control."""
    return cartpole_cost(state, 0.0, angle_threshold)


class CartpoleCost(CostModel):
    def __init__(self, angle_threshold: float = 0.21):
        self.angle_threshold = angle_threshold

    def stage(self, state, control):
        return cartpole_cost(state, control, self.angle_threshold)

    def terminal(self, state):
        return cartpole_terminal(state, self.angle_threshold)

    def stage_batch(self, states, controls):
        return _cost_vec(states, self.angle_threshold)

    def terminal_batch(self, states):
        return _cost_vec(states, self.angle_threshold)


def _cost_vec(states: np.ndarray, delta: float) -> np.ndarray:
    p, phi, v, pd = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
    dphi = phi - np.pi
    c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * pd * pd
    return c + 1000.0 * (np.abs(dphi) >= delta)


class CartpoleDynamics(DynamicsModel):
    """Cartpole transition model for a given pole length.

    ``clamp`` is the commanded-force interval for the continuous variant or
    None for the discrete variant (whose force set is already bounded). The
    command is clamped first, then force noise is added.
    """

    state_dim = 4
    noise_dim = 1
    deterministic = False

    def __init__(self, config: CartpoleConfig, pole_length: float, clamp=None):
        self.config = config
        self.pole_length = float(pole_length)
        self.clamp = clamp

    @classmethod
    def true_system(cls, config: CartpoleConfig, clamp=None) -> "CartpoleDynamics":
        return cls(config, config.pole_length_true, clamp)

    @classmethod
    def planning_model(cls, config: CartpoleConfig, clamp=None) -> "CartpoleDynamics":
        return cls(config, config.pole_length_model, clamp)

    def _effective_force(self, command, z):
        f = np.asarray(command, dtype=np.float64)
        if self.clamp is not None:
            f = np.clip(f, self.clamp[0], self.clamp[1])
        return f + self.config.control_noise_std * z

    def step(self, state, control, noise):
        z = float(np.asarray(noise).reshape(-1)[0]) if self.noise_dim else 0.0
        force = float(self._effective_force(np.asarray(control).reshape(-1)[0], z))
        p, phi, v, pd = (float(x) for x in np.asarray(state, dtype=np.float64).reshape(4))
        cfg = self.config
        sin, cos = np.sin(phi), np.cos(phi)
        mc, mp, length, g = cfg.cart_mass, cfg.tip_mass, self.pole_length, cfg.gravity
        denom = mc + mp * sin * sin
        p_acc = (force + mp * length * pd * pd * sin + mp * g * sin * cos) / denom
        phi_acc = -(p_acc * cos + g * sin) / length
        dt = cfg.dt
        return np.array([p + v * dt, phi + pd * dt, v + p_acc * dt, pd + phi_acc * dt])

    def step_batch(self, states, controls, noise):
        z = float(np.asarray(noise).reshape(-1)[0])
        forces = self._effective_force(np.asarray(controls, dtype=np.float64).reshape(-1), z)
        cfg = self.config
        p, phi, v, pd = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
        sin, cos = np.sin(phi), np.cos(phi)
        mc, mp, length, g = cfg.cart_mass, cfg.tip_mass, self.pole_length, cfg.gravity
        denom = mc + mp * sin * sin
        p_acc = (forces + mp * length * pd * pd * sin + mp * g * sin * cos) / denom
        phi_acc = -(p_acc * cos + g * sin) / length
        dt = cfg.dt
        return np.column_stack([p + v * dt, phi + pd * dt, v + p_acc * dt, pd + phi_acc * dt])

    def rollout_costs(self, x0, sequences, noise_streams, cost):
        if not isinstance(cost, CartpoleCost):
            return None
        commands = np.ascontiguousarray(np.asarray(sequences, dtype=np.float64).reshape(len(sequences), -1))
        noise = np.ascontiguousarray(noise_streams[:, :, 0])
        if commands.shape[1] != noise.shape[1]:
            raise ValidationError("sequence and noise stream lengths differ")
        lo, hi = self.clamp if self.clamp is not None else (-np.inf, np.inf)
        cfg = self.config
        args = (
            np.ascontiguousarray(np.asarray(x0, dtype=np.float64).reshape(4)),
            commands,
            noise,
            cfg.cart_mass,
            cfg.tip_mass,
            self.pole_length,
            cfg.gravity,
            cfg.dt,
            float(lo),
            float(hi),
            cfg.control_noise_std,
            cost.angle_threshold,
        )
        if backend.active() == "numba" and _batch_costs_jit is not None:
            return _batch_costs_jit(*args)
        return _batch_costs_numpy(*args)


def _batch_costs_loops(x0, commands, noise, mc, mp, length, g, dt, lo, hi, std, delta):
    n, steps = commands.shape
    n_streams = noise.shape[0]
    out = np.empty((n, n_streams))
    for idx in prange(n * n_streams):
        i = idx // n_streams
        k = idx - i * n_streams
        p = x0[0]
        phi = x0[1]
        v = x0[2]
        pd = x0[3]
        total = 0.0
        alive = True
        for h in range(steps):
            dphi = phi - np.pi
            c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * pd * pd
            if abs(dphi) >= delta:
                c += 1000.0
            total += c
            f = commands[i, h]
            if f < lo:
                f = lo
            elif f > hi:
                f = hi
            f += std * noise[k, h]
            sin = np.sin(phi)
            cos = np.cos(phi)
            denom = mc + mp * sin * sin
            p_acc = (f + mp * length * pd * pd * sin + mp * g * sin * cos) / denom
            phi_acc = -(p_acc * cos + g * sin) / length
            p += v * dt
            phi += pd * dt
            v += p_acc * dt
            pd += phi_acc * dt
            if not (np.isfinite(p) and np.isfinite(phi) and np.isfinite(v) and np.isfinite(pd)):
                alive = False
                break
        if alive:
            dphi = phi - np.pi
            c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * pd * pd
            if abs(dphi) >= delta:
                c += 1000.0
            total += c
        if alive and np.isfinite(total):
            out[i, k] = total
        else:
            out[i, k] = np.inf
    return out


_batch_costs_jit = njit(parallel=True, cache=True)(_batch_costs_loops) if HAVE_NUMBA else None


def _batch_costs_numpy(x0, commands, noise, mc, mp, length, g, dt, lo, hi, std, delta):
    n, steps = commands.shape
    n_streams = noise.shape[0]
    rows = n * n_streams
    # Row i*K+k pairs sequence i with noise stream k, matching the jit kernel.
    cmd = np.repeat(commands, n_streams, axis=0)
    eps = np.tile(noise, (n, 1))
    p = np.full(rows, x0[0])
    phi = np.full(rows, x0[1])
    v = np.full(rows, x0[2])
    pd = np.full(rows, x0[3])
    total = np.zeros(rows)
    with np.errstate(all="ignore"):
        for h in range(steps):
            dphi = phi - np.pi
            c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * pd * pd
            total += c + 1000.0 * (np.abs(dphi) >= delta)
            f = np.clip(cmd[:, h], lo, hi) + std * eps[:, h]
            sin = np.sin(phi)
            cos = np.cos(phi)
            denom = mc + mp * sin * sin
            p_acc = (f + mp * length * pd * pd * sin + mp * g * sin * cos) / denom
            phi_acc = -(p_acc * cos + g * sin) / length
            p = p + v * dt
            phi = phi + pd * dt
            v = v + p_acc * dt
            pd = pd + phi_acc * dt
        dphi = phi - np.pi
        c = 10.0 * p * p + 500.0 * dphi * dphi + v * v + 15.0 * pd * pd
        total += c + 1000.0 * (np.abs(dphi) >= delta)
    total = np.where(np.isfinite(total), total, np.inf)
    return total.reshape(n, n_streams)


def swing_up_success(angles: np.ndarray, angle_threshold: float = 0.21, window: int = 100) -> bool:
    """Whether the pole stayed within the angle band for the final steps.

    ``angles`` is the executed phi trajectory; the window is truncated to the
    trajectory length.
    """
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    w = min(window, angles.shape[0])
    return bool(np.all(np.abs(angles[-w:] - np.pi) <= angle_threshold))
