"""Experiment runner: receding-horizon episodes, parameter sweeps, CSV output.

Per control round the runner estimates the per-round loss gradient from
sampled rollouts of the planning model, takes one proximal step, executes the
mode of the updated distribution on the true system, and shifts the
parameters to warm-start the next round. LTI environments use the exact
quadratic losses instead of sampling.

Seeding contract: the per-episode seed is derived from
(master seed, cell index, episode index); all per-round streams (control
sampling, common-random-number dynamics noise, true-system noise) are derived
from (episode seed, round, tag). Episodes and sweep cells are therefore
independent and reproducible regardless of execution order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analytic import LtiDynamics, LtiSystem, QuadraticCost, build_stacked, leqr_quadratic, lqr_quadratic
from .cartpole import CartpoleConfig, CartpoleCost, CartpoleDynamics, swing_up_success
from .distributions import REPEAT_LAST, HorizonParams, ShiftPolicy, mode, sample_controls, shift
from .errors import DegenerateEstimateError, InfeasibleStepError, ValidationError
from .losses import ExpectedCost, ExpUtility, LossSpec, ProbLowCost, estimate_gradient_from_costs
from .simulation import DiscreteActionDynamics, evaluate_sequences
from .updates import (
    ConstantStep,
    DivergenceSpec,
    KLExpectation,
    KLNatural,
    QuadraticFisher,
    QuadraticIdentity,
    StepSchedule,
    dmd_step,
    quadratic_exact_step,
)

ENVS = ("cartpole-continuous", "cartpole-discrete", "lti-lqr", "lti-leqr")

CSV_HEADER = "env,loss,gamma,n_samples,param,seed,episode_cost,success,failed"


def _fmt(x: float) -> str:
    """Round-trip-exact float rendering (17 significant digits)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class LtiSpec:
    """LTI environment description (nested tuples keep the config hashable)."""

    A: tuple = ((1.0, 1.0), (0.0, 1.0))
    B: tuple = ((0.0,), (1.0,))
    W: tuple = ((0.01, 0.0), (0.0, 0.01))
    Q: tuple = ((1.0, 0.0), (0.0, 1.0))
    R: tuple = ((0.1,),)
    Q_end: tuple = ((1.0, 0.0), (0.0, 1.0))
    x0: tuple = (1.0, 0.0)
    leqr_lambda: float = 10.0

    def system(self) -> LtiSystem:
        return LtiSystem(np.array(self.A), np.array(self.B), np.array(self.W))

    def cost_matrices(self):
        return np.array(self.Q), np.array(self.R), np.array(self.Q_end)


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "cartpole-continuous"
    loss: LossSpec = ExpectedCost()
    divergence: DivergenceSpec | None = None  # None -> environment default
    gamma: StepSchedule = ConstantStep(0.01)
    n_samples: int = 1000
    n_dynamics_samples: int = 10
    horizon: int = 50
    episode_length: int = 500
    shift_policy: ShiftPolicy = REPEAT_LAST
    init_control_std: float = 2.0
    # Expected-cost gradients scale with the trajectory cost statistic, which
    # grows like 1/dt for a fixed time window; scaling the step size by dt
    # makes sweeps invariant to the time discretization and puts the sweet
    # spot of this benchmark in the same decade as the utility losses'.
    # Utility-loss gradients are self-normalized and are not rescaled.
    ec_step_scale: float | None = None  # None -> cartpole dt
    cartpole: CartpoleConfig = field(default_factory=CartpoleConfig)
    lti: LtiSpec = field(default_factory=LtiSpec)

    def __post_init__(self):
        if self.env not in ENVS:
            raise ValidationError(f"unknown env {self.env!r}; choose from {ENVS}")
        for name in ("n_samples", "n_dynamics_samples", "horizon", "episode_length"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.ec_step_scale is not None and self.ec_step_scale <= 0:
            raise ValidationError("ec_step_scale must be positive")

    def resolved_ec_step_scale(self) -> float:
        return self.cartpole.dt if self.ec_step_scale is None else self.ec_step_scale

    def resolved_divergence(self) -> DivergenceSpec:
        if self.divergence is not None:
            return self.divergence
        if self.env == "cartpole-continuous":
            return KLNatural(update_covariance=False)
        if self.env == "cartpole-discrete":
            return KLExpectation()
        raise ValidationError("LTI environments use the exact quadratic step")


@dataclass
class EpisodeRecord:
    """Executed trajectory of one episode plus per-round diagnostics."""

    env: str
    seed: int
    states: np.ndarray          # (T, state_dim), state before each control
    controls: np.ndarray        # (T, control_dim), applied control values
    stage_costs: np.ndarray     # (T,)
    loss_estimates: np.ndarray  # (T,), per-round loss at the shifted params
    ess: np.ndarray             # (T,), effective sample size of each estimate
    episode_cost: float
    success: bool

    def __post_init__(self):
        if abs(self.episode_cost - float(self.stage_costs.sum())) > 1e-9 * max(
            1.0, abs(self.episode_cost)
        ):
            raise ValidationError("episode cost must equal the sum of stage costs")


def episode_seed(master_seed: int, cell_index: int, episode_index: int) -> int:
    """Deterministic per-episode seed from (master, cell, episode)."""
    ss = np.random.SeedSequence((int(master_seed), int(cell_index), int(episode_index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _round_rng(seed: int, t: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(t), int(tag))))


_TAG_SAMPLING, _TAG_CRN, _TAG_TRUE = 0, 1, 2


def _cartpole_setup(config: ExperimentConfig):
    cfg = config.cartpole
    cost = CartpoleCost(cfg.angle_threshold)
    if config.env == "cartpole-continuous":
        model = CartpoleDynamics.planning_model(cfg, clamp=cfg.control_clamp)
        true_env = CartpoleDynamics.true_system(cfg, clamp=cfg.control_clamp)
        means = np.zeros((config.horizon, 1))
        cov = np.array([[config.init_control_std**2]])
        init = HorizonParams.gaussian(means, cov)
        actions = None
    else:
        actions = np.asarray(cfg.discrete_forces, dtype=np.float64)
        model = DiscreteActionDynamics(CartpoleDynamics.planning_model(cfg, clamp=None), actions)
        true_env = DiscreteActionDynamics(CartpoleDynamics.true_system(cfg, clamp=None), actions)
        probs = np.full((config.horizon, actions.shape[0]), 1.0 / actions.shape[0])
        init = HorizonParams.categorical(probs)
    x0 = np.zeros(4)  # cart at the origin, pole hanging down
    return model, true_env, cost, init, x0, actions


def _run_sampled_episode(config: ExperimentConfig, seed: int) -> EpisodeRecord:
    model, true_env, cost, params_tilde, x, actions = _cartpole_setup(config)
    divergence = config.resolved_divergence()
    T, H, n, k = config.episode_length, config.horizon, config.n_samples, config.n_dynamics_samples
    step_scale = config.resolved_ec_step_scale() if isinstance(config.loss, ExpectedCost) else 1.0
    clamp = config.cartpole.control_clamp if config.env == "cartpole-continuous" else None
    control_dim = 1
    states = np.empty((T, true_env.state_dim))
    controls = np.empty((T, control_dim))
    stage_costs = np.empty(T)
    loss_estimates = np.empty(T)
    ess = np.empty(T)

    for t in range(T):
        seqs = sample_controls(params_tilde, n, _round_rng(seed, t, _TAG_SAMPLING))
        streams = _round_rng(seed, t, _TAG_CRN).standard_normal((k, H, model.noise_dim))
        costs = evaluate_sequences(model, cost, x, seqs, streams).mean(axis=1)
        try:
            est = estimate_gradient_from_costs(params_tilde, seqs, costs, config.loss)
            params_t = dmd_step(params_tilde, est, divergence, config.gamma.at(t) * step_scale)
        except (DegenerateEstimateError, InfeasibleStepError) as exc:
            raise type(exc)(f"round {t}: {exc}") from exc
        if clamp is not None and params_t.is_gaussian:
            # Project the mean plan onto the feasible (clamped-command) box;
            # outside it the sampled cost landscape is flat and the means
            # would otherwise strand beyond the actuator limits.
            means = np.clip(params_t.means, clamp[0], clamp[1])
            params_t = HorizonParams.gaussian(means, params_t.covariances)
        u = mode(params_t)[0]
        u_value = actions[int(u)] if actions is not None else float(np.asarray(u).reshape(-1)[0])
        states[t] = x
        controls[t, 0] = u_value
        stage_costs[t] = cost.stage(x, u_value)
        loss_estimates[t] = est.loss_estimate
        ess[t] = est.effective_sample_size
        z = _round_rng(seed, t, _TAG_TRUE).standard_normal(true_env.noise_dim)
        x = true_env.step(x, u, z)
        params_tilde = shift(params_t, config.shift_policy)

    success = swing_up_success(states[:, 1], config.cartpole.angle_threshold, window=100)
    return EpisodeRecord(
        env=config.env,
        seed=seed,
        states=states,
        controls=controls,
        stage_costs=stage_costs,
        loss_estimates=loss_estimates,
        ess=ess,
        episode_cost=float(stage_costs.sum()),
        success=success,
    )


def _run_lti_episode(config: ExperimentConfig, seed: int) -> EpisodeRecord:
    sys = config.lti.system()
    Q, R, Q_end = config.lti.cost_matrices()
    stacked = build_stacked(sys, Q, R, Q_end, config.horizon)
    cost = QuadraticCost(Q, R, Q_end)
    dyn = LtiDynamics(sys)
    m, T = sys.m, config.episode_length
    theta_tilde = np.zeros(config.horizon * m)
    x = np.array(config.lti.x0, dtype=np.float64)

    states = np.empty((T, sys.n))
    controls = np.empty((T, m))
    stage_costs = np.empty(T)
    loss_estimates = np.empty(T)
    ess = np.full(T, np.nan)

    for t in range(T):
        if config.env == "lti-lqr":
            quad = lqr_quadratic(stacked, x)
        else:
            quad = leqr_quadratic(stacked, x, config.lti.leqr_lambda)
        loss_estimates[t] = quad.value(theta_tilde)
        theta = quadratic_exact_step(quad)
        u = theta[:m]
        states[t] = x
        controls[t] = u
        stage_costs[t] = cost.stage(x, u)
        z = _round_rng(seed, t, _TAG_TRUE).standard_normal(sys.n)
        x = dyn.step(x, u, z)
        theta_tilde = np.concatenate([theta[m:], theta[-m:]])

    return EpisodeRecord(
        env=config.env,
        seed=seed,
        states=states,
        controls=controls,
        stage_costs=stage_costs,
        loss_estimates=loss_estimates,
        ess=ess,
        episode_cost=float(stage_costs.sum()),
        success=True,
    )


def run_episode(config: ExperimentConfig, seed: int) -> EpisodeRecord:
    """Run one receding-horizon episode; deterministic given the seed."""
    if config.env.startswith("lti"):
        return _run_lti_episode(config, seed)
    return _run_sampled_episode(config, seed)


# Sweeps -------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """Grid over step size, sample count, and (optionally) the loss parameter."""

    gammas: tuple = (0.01,)
    n_samples: tuple = (1000,)
    loss_params: tuple | None = None
    episodes: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if self.episodes < 1 or not self.gammas or not self.n_samples:
            raise ValidationError("sweep grid must be nonempty with at least one episode")
        if self.master_seed < 0:
            raise ValidationError("master seed must be nonnegative")


def with_loss_param(loss: LossSpec, value: float) -> LossSpec:
    """Return the loss with its scalar parameter replaced."""
    if isinstance(loss, ExpUtility):
        return ExpUtility(lam=float(value))
    if isinstance(loss, ProbLowCost):
        if loss.elite_fraction is not None:
            return ProbLowCost(elite_fraction=float(value))
        return ProbLowCost(threshold=float(value))
    raise ValidationError("expected-cost loss has no sweepable parameter")


def loss_name(loss: LossSpec) -> str:
    return {ExpectedCost: "expected_cost", ProbLowCost: "prob_low_cost", ExpUtility: "exp_utility"}[
        type(loss)
    ]


def loss_param_value(loss: LossSpec) -> float:
    """Scalar reported in the CSV `param` column."""
    if isinstance(loss, ExpectedCost):
        return float(loss.use_baseline)
    if isinstance(loss, ProbLowCost):
        return loss.elite_fraction if loss.elite_fraction is not None else loss.threshold
    return loss.lam


def divergence_name(div: DivergenceSpec | None) -> str:
    if div is None:
        return "env_default"
    if isinstance(div, KLNatural):
        return "kl_natural" if div.update_covariance else "kl_natural_mean_only"
    return {
        KLExpectation: "kl_expectation",
        QuadraticIdentity: "quadratic_identity",
        QuadraticFisher: "quadratic_fisher",
    }.get(type(div), type(div).__name__)


@dataclass
class SweepRow:
    env: str
    loss: str
    gamma: float
    n_samples: int
    param: float
    seed: int
    episode_cost: float
    success: bool
    failed: bool

    def render(self) -> str:
        return ",".join(
            [
                self.env,
                self.loss,
                _fmt(self.gamma),
                str(self.n_samples),
                _fmt(self.param),
                str(self.seed),
                _fmt(self.episode_cost),
                str(int(self.success)),
                str(int(self.failed)),
            ]
        )


def sweep_cells(config: ExperimentConfig, spec: SweepSpec):
    """Enumerate (cell_index, cell_config) over the sweep grid, in CSV order."""
    params = spec.loss_params if spec.loss_params is not None else (None,)
    cells = []
    idx = 0
    for gamma in spec.gammas:
        for n in spec.n_samples:
            for p in params:
                loss = config.loss if p is None else with_loss_param(config.loss, p)
                cells.append(
                    (idx, replace(config, gamma=ConstantStep(float(gamma)), n_samples=int(n), loss=loss))
                )
                idx += 1
    return cells


def _run_cell_episode(args):
    cell_config, cell_idx, ep_idx, master_seed = args
    seed = episode_seed(master_seed, cell_idx, ep_idx)
    gamma = cell_config.gamma.at(0)
    try:
        record = run_episode(cell_config, seed)
        return SweepRow(
            env=cell_config.env,
            loss=loss_name(cell_config.loss),
            gamma=gamma,
            n_samples=cell_config.n_samples,
            param=loss_param_value(cell_config.loss),
            seed=seed,
            episode_cost=record.episode_cost,
            success=record.success,
            failed=False,
        )
    except (DegenerateEstimateError, InfeasibleStepError, ValidationError):
        return SweepRow(
            env=cell_config.env,
            loss=loss_name(cell_config.loss),
            gamma=gamma,
            n_samples=cell_config.n_samples,
            param=loss_param_value(cell_config.loss),
            seed=seed,
            episode_cost=float("nan"),
            success=False,
            failed=True,
        )


def run_sweep(config: ExperimentConfig, spec: SweepSpec, workers: int = 1):
    """Run every (cell, episode) of the grid; returns rows in deterministic order.

    Per-cell failures (degenerate estimates, infeasible steps) become rows
    with the failed flag set; the sweep continues.
    """
    tasks = [
        (cell_config, cell_idx, ep, spec.master_seed)
        for cell_idx, cell_config in sweep_cells(config, spec)
        for ep in range(spec.episodes)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_episode, tasks))
    else:
        rows = [_run_cell_episode(t) for t in tasks]
    return rows


# Config echo / CSV --------------------------------------------------------------


def config_lines(config: ExperimentConfig, spec: SweepSpec | None = None) -> list[str]:
    """Resolved configuration as `section.key = value` lines (CSV provenance)."""
    lines = [
        f"experiment.env = {config.env}",
        f"experiment.loss = {loss_name(config.loss)}",
        f"experiment.loss_param = {_fmt(loss_param_value(config.loss))}",
        f"experiment.divergence = {divergence_name(config.divergence)}",
        f"experiment.gamma = {_gamma_repr(config.gamma)}",
        f"experiment.n_samples = {config.n_samples}",
        f"experiment.n_dynamics_samples = {config.n_dynamics_samples}",
        f"experiment.horizon = {config.horizon}",
        f"experiment.episode_length = {config.episode_length}",
        f"experiment.init_control_std = {_fmt(config.init_control_std)}",
        f"experiment.ec_step_scale = {_fmt(config.resolved_ec_step_scale())}",
        f"experiment.shift = {'repeat_last' if config.shift_policy.repeats_last else 'default'}",
    ]
    cp = config.cartpole
    lines += [
        f"cartpole.cart_mass = {_fmt(cp.cart_mass)}",
        f"cartpole.tip_mass = {_fmt(cp.tip_mass)}",
        f"cartpole.pole_length_true = {_fmt(cp.pole_length_true)}",
        f"cartpole.pole_length_model = {_fmt(cp.pole_length_model)}",
        f"cartpole.dt = {_fmt(cp.dt)}",
        f"cartpole.control_noise_std = {_fmt(cp.control_noise_std)}",
        f"cartpole.control_clamp = {_fmt(cp.control_clamp[0])},{_fmt(cp.control_clamp[1])}",
        f"cartpole.angle_threshold = {_fmt(cp.angle_threshold)}",
        f"cartpole.discrete_forces = {','.join(_fmt(f) for f in cp.discrete_forces)}",
        f"cartpole.gravity = {_fmt(cp.gravity)}",
    ]
    if config.env.startswith("lti"):
        lt = config.lti
        lines += [
            f"lti.A = {_matrix_repr(lt.A)}",
            f"lti.B = {_matrix_repr(lt.B)}",
            f"lti.W = {_matrix_repr(lt.W)}",
            f"lti.Q = {_matrix_repr(lt.Q)}",
            f"lti.R = {_matrix_repr(lt.R)}",
            f"lti.Q_end = {_matrix_repr(lt.Q_end)}",
            f"lti.x0 = {','.join(_fmt(v) for v in lt.x0)}",
            f"lti.leqr_lambda = {_fmt(lt.leqr_lambda)}",
        ]
    if spec is not None:
        lines += [
            f"sweep.gammas = {','.join(_fmt(g) for g in spec.gammas)}",
            f"sweep.n_samples = {','.join(str(int(n)) for n in spec.n_samples)}",
            f"sweep.loss_params = "
            + ("" if spec.loss_params is None else ",".join(_fmt(p) for p in spec.loss_params)),
            f"sweep.episodes = {spec.episodes}",
            f"sweep.master_seed = {spec.master_seed}",
        ]
    return lines


def _gamma_repr(schedule: StepSchedule) -> str:
    if isinstance(schedule, ConstantStep):
        return _fmt(schedule.gamma)
    return ",".join(_fmt(g) for g in schedule.gammas)


def _matrix_repr(rows) -> str:
    return "; ".join(",".join(_fmt(v) for v in row) for row in rows)


def config_hash(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def render_sweep_csv(rows, lines: list[str]) -> str:
    out = [f"# config_hash = {config_hash(lines)}"]
    out += [f"# {line}" for line in lines]
    out.append(CSV_HEADER)
    out += [row.render() for row in rows]
    return "\n".join(out) + "\n"


def render_episode_csv(record: EpisodeRecord, lines: list[str]) -> str:
    out = [f"# config_hash = {config_hash(lines)}"]
    out += [f"# {line}" for line in lines]
    out.append(f"# episode_cost = {_fmt(record.episode_cost)}")
    out.append(f"# success = {int(record.success)}")
    n_state = record.states.shape[1]
    n_ctrl = record.controls.shape[1]
    header = ["t"]
    header += [f"control_{i}" for i in range(n_ctrl)]
    header += [f"state_{i}" for i in range(n_state)]
    header += ["stage_cost", "loss_estimate", "ess"]
    out.append(",".join(header))
    for t in range(record.states.shape[0]):
        row = [str(t)]
        row += [_fmt(v) for v in record.controls[t]]
        row += [_fmt(v) for v in record.states[t]]
        row += [_fmt(record.stage_costs[t]), _fmt(record.loss_estimates[t]), _fmt(record.ess[t])]
        out.append(",".join(row))
    return "\n".join(out) + "\n"
