"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see every verdict line; the
cartpole sweep criterion also leaves its CSV under artifacts/ for the
plotting package.
"""

import pathlib
import time

import numpy as np
import pytest
import scipy.optimize

from mirrormpc.analytic import build_stacked, leqr_quadratic, lqr_quadratic
from mirrormpc.distributions import (
    CategoricalGradient,
    HorizonParams,
    sample_controls,
    to_expectation,
)
from mirrormpc.errors import InfeasibleStepError
from mirrormpc.harness import (
    ExperimentConfig,
    SweepSpec,
    config_lines,
    render_episode_csv,
    render_sweep_csv,
    run_episode,
    run_sweep,
)
from mirrormpc.losses import (
    ExpectedCost,
    ExpUtility,
    ProbLowCost,
    estimate_gradient_from_costs,
    utility_weights,
)
from mirrormpc.simulation import RolloutBatch
from mirrormpc.updates import (
    KLNatural,
    cem_step,
    dmd_step,
    exponentiated_gradient_step,
    mppi_step,
    quadratic_exact_step,
)

ARTIFACTS = pathlib.Path(__file__).resolve().parent.parent / "artifacts"


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}{suffix}")


def random_gaussian(rng, horizon=3, dim=2):
    means = rng.normal(size=(horizon, dim))
    covs = np.empty((horizon, dim, dim))
    for h in range(horizon):
        a = rng.normal(size=(dim, dim))
        covs[h] = a @ a.T + dim * np.eye(dim)
    return HorizonParams.gaussian(means, covs)


def random_batch(rng, params, n):
    seqs = sample_controls(params, n, rng)
    costs = rng.exponential(2.0, size=n)
    return RolloutBatch(seqs, np.zeros((n, params.horizon + 1, 1)), costs)


class TestSpecialCaseIdentities:
    def test_mppi_and_cem_identities(self):
        start = time.monotonic()
        worst = 0.0
        rng = np.random.default_rng(2024)
        for _ in range(100):
            hp = random_gaussian(rng, horizon=3, dim=2)
            batch = random_batch(rng, hp, n=48)
            lam = float(rng.uniform(0.5, 4.0))
            est = estimate_gradient_from_costs(hp, batch.sequences, batch.costs, ExpUtility(lam))
            a = dmd_step(hp, est, KLNatural(update_covariance=False), 1.0)
            b = mppi_step(hp, batch, lam, 1.0)
            worst = max(worst, float(np.max(np.abs(a.means - b.means))))

            c_max = float(np.quantile(batch.costs, 0.5))
            est_i = estimate_gradient_from_costs(
                hp, batch.sequences, batch.costs, ProbLowCost(threshold=c_max)
            )
            c = dmd_step(hp, est_i, KLNatural(update_covariance=True), 1.0)
            d = cem_step(hp, batch, c_max)
            worst = max(worst, float(np.max(np.abs(c.means - d.means))))
            worst = max(worst, float(np.max(np.abs(c.covariances - d.covariances))))
        elapsed = time.monotonic() - start
        ok = worst <= 1e-12 and elapsed < 10.0
        _verdict("special-case identities (MPPI/CEM)", ok, f"max dev {worst:.2e}, {elapsed:.1f}s")
        assert worst <= 1e-12
        assert elapsed < 10.0

    def test_proposition_1(self):
        # The identity binds every *successful* covariance-updating step;
        # draws whose mu - gamma g leaves the feasible moment set raise the
        # infeasible-step error and are excluded (the stated precondition).
        start = time.monotonic()
        worst = 0.0
        checked = 0
        rng = np.random.default_rng(7)
        while checked < 100:
            hp = random_gaussian(rng, horizon=2, dim=2)
            n = 24
            seqs = sample_controls(hp, n, rng)
            costs = rng.exponential(1.5, size=n)
            loss = ExpUtility(2.0) if checked % 2 else ExpectedCost()
            est = estimate_gradient_from_costs(hp, seqs, costs, loss)
            gamma = float(rng.uniform(0.05, 1.0))
            try:
                out = dmd_step(hp, est, KLNatural(update_covariance=True), gamma)
            except InfeasibleStepError:
                continue
            checked += 1

            exp = to_expectation(hp)
            if isinstance(loss, ExpectedCost):
                coefs = (costs - costs.mean()) / n
            else:
                coefs = -utility_weights(costs, loss)
            g_mean = np.zeros_like(exp.mean)
            g_second = np.zeros_like(exp.second)
            for i in range(n):
                for h in range(hp.horizon):
                    g_mean[h] += coefs[i] * (seqs[i, h] - exp.mean[h])
                    g_second[h] += coefs[i] * (
                        np.outer(seqs[i, h], seqs[i, h]) - exp.second[h]
                    )
            new = to_expectation(out)
            worst = max(worst, float(np.max(np.abs(new.mean - (exp.mean - gamma * g_mean)))))
            worst = max(worst, float(np.max(np.abs(new.second - (exp.second - gamma * g_second)))))
        elapsed = time.monotonic() - start
        ok = worst <= 1e-9 and elapsed < 10.0
        _verdict("proximal-step moment identity", ok, f"max dev {worst:.2e}, {elapsed:.1f}s")
        assert worst <= 1e-9
        assert elapsed < 10.0


class TestExponentiatedGradientOracle:
    def test_matches_numeric_prox(self):
        rng = np.random.default_rng(55)
        worst = 0.0
        worst_sum = 0.0
        for _ in range(50):
            p = rng.random(3) + 0.05
            p /= p.sum()
            hp = HorizonParams.categorical(p[None, :])
            g = rng.normal(scale=2.0, size=3)
            gamma = float(rng.uniform(0.1, 2.0))
            out = exponentiated_gradient_step(hp, CategoricalGradient(d_probs=g[None, :]), gamma)

            res = scipy.optimize.minimize(
                lambda t: float(gamma * g @ t + np.sum(t * np.log(t / p))),
                p,
                bounds=[(1e-12, 1.0)] * 3,
                constraints=[{"type": "eq", "fun": lambda t: t.sum() - 1.0}],
                method="SLSQP",
                tol=1e-14,
            )
            worst = max(worst, float(np.max(np.abs(out.probs[0] - res.x))))
            worst_sum = max(worst_sum, abs(float(out.probs.sum()) - 1.0))
        ok = worst <= 1e-6 and worst_sum <= 1e-9
        _verdict(
            "exponentiated gradient vs numeric prox",
            ok,
            f"max dev {worst:.2e}, sum dev {worst_sum:.2e}",
        )
        assert worst <= 1e-6
        assert worst_sum <= 1e-9


class TestLqrLeqrExactness:
    def test_quadratic_targets(self):
        from mirrormpc.analytic import LtiSystem

        start = time.monotonic()
        rng = np.random.default_rng(3)

        # exact minimizer reached by the quadratic step
        worst_min = 0.0
        for _ in range(20):
            n, m, H = 2, 1, 3
            A = rng.normal(scale=0.6, size=(n, n))
            B = rng.normal(size=(n, m))
            w = rng.normal(size=(n, n))
            sys = LtiSystem(A, B, 0.1 * (w @ w.T) + 0.05 * np.eye(n))
            st = build_stacked(sys, np.eye(n), np.eye(m), np.eye(n), H)
            quad = lqr_quadratic(st, rng.normal(size=n))
            theta = quadratic_exact_step(quad)
            worst_min = max(
                worst_min, float(np.max(np.abs(theta - (-np.linalg.solve(quad.R, quad.r)))))
            )
            worst_min = max(worst_min, float(np.linalg.norm(quad.grad(theta))))

        # Monte-Carlo oracle for the LQR loss value, scalar H=3
        sys = LtiSystem(np.array([[0.9]]), np.array([[0.7]]), np.array([[0.3]]))
        H = 3
        st = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), H)
        x0 = np.array([1.2])
        theta = rng.normal(size=H)
        quad = lqr_quadratic(st, x0)
        draws = 10**6
        w = rng.normal(scale=np.sqrt(0.3), size=(draws, H))
        x = np.full(draws, x0[0])
        stats = np.zeros(draws)
        for h in range(H):
            stats += 0.5 * x * x + 0.5 * theta[h] ** 2
            x = 0.9 * x + 0.7 * theta[h] + w[:, h]
        stats += 0.5 * x * x
        se = stats.std() / np.sqrt(draws)
        lqr_mc_dev = abs(quad.value(theta) - stats.mean())
        lqr_mc_ok = lqr_mc_dev <= 3 * se

        # LEQR Monte-Carlo oracle, scalar H=2
        lam = 4.0
        H2 = 2
        st2 = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), H2)
        theta2 = rng.normal(size=H2)
        quad2 = leqr_quadratic(st2, x0, lam)
        w2 = rng.normal(scale=np.sqrt(0.3), size=(draws, H2))
        x = np.full(draws, x0[0])
        stats2 = np.zeros(draws)
        for h in range(H2):
            stats2 += 0.5 * x * x + 0.5 * theta2[h] ** 2
            x = 0.9 * x + 0.7 * theta2[h] + w2[:, h]
        stats2 += 0.5 * x * x
        utilities = np.exp(-stats2 / lam)
        mc = -np.log(utilities.mean())
        se2 = utilities.std() / np.sqrt(draws) / utilities.mean()
        leqr_mc_dev = abs(quad2.value(theta2) - mc)
        leqr_mc_ok = leqr_mc_dev <= 3 * se2

        # risk-neutral limit
        st3 = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), 3)
        lqr3 = lqr_quadratic(st3, x0)
        leqr3 = leqr_quadratic(st3, x0, 1e8)
        rel_r = float(np.max(np.abs(1e8 * leqr3.R - lqr3.R) / np.abs(lqr3.R)))
        rel_v = float(np.max(np.abs(1e8 * leqr3.r - lqr3.r) / np.abs(lqr3.r)))
        limit_ok = rel_r <= 1e-4 and rel_v <= 1e-4

        elapsed = time.monotonic() - start
        ok = worst_min <= 1e-8 and lqr_mc_ok and leqr_mc_ok and limit_ok and elapsed < 120.0
        _verdict(
            "LQR/LEQR exactness",
            ok,
            f"minimizer dev {worst_min:.2e}, MC devs {lqr_mc_dev:.3g}/{leqr_mc_dev:.3g} "
            f"(3SE {3*se:.3g}/{3*se2:.3g}), limit rel {max(rel_r, rel_v):.2e}, {elapsed:.0f}s",
        )
        assert worst_min <= 1e-8
        assert lqr_mc_ok and leqr_mc_ok and limit_ok
        assert elapsed < 120.0


class TestGradientEstimatorFidelity:
    def test_closed_form_and_rate(self):
        start = time.monotonic()
        m, s2 = 0.7, 1.3
        hp = HorizonParams.gaussian(np.array([[m]]), np.array([[s2]]))
        target = 2 * m * s2

        def estimate(n, seed):
            seqs = sample_controls(hp, n, np.random.default_rng(seed))
            costs = seqs[:, 0, 0] ** 2
            est = estimate_gradient_from_costs(hp, seqs, costs, ExpectedCost())
            return float(est.direction.d_mean[0, 0])

        big = estimate(10**5, 0)
        rel = abs(big - target) / abs(target)
        rel_ok = rel <= 0.02

        ns = [10**2, 10**3, 10**4, 10**5]
        errs = [np.mean([abs(estimate(n, s) - target) for s in range(20)]) for n in ns]
        slope = float(np.polyfit(np.log(ns), np.log(errs), 1)[0])
        slope_ok = -1.0 <= slope <= -0.25
        elapsed = time.monotonic() - start
        ok = rel_ok and slope_ok and elapsed < 60.0
        _verdict(
            "gradient estimator fidelity",
            ok,
            f"rel err {rel:.3%}, log-log slope {slope:.2f}, {elapsed:.0f}s",
        )
        assert rel_ok
        assert slope_ok
        assert elapsed < 60.0


@pytest.fixture(scope="session")
def cartpole_sweep_results():
    """Benchmark configuration sweep: expected cost, 1000 samples, gamma in
    {1e-2, 10}, ten episodes per cell and environment. Runs once; the CSV is
    left under artifacts/ for the plotting package."""
    start = time.monotonic()
    ARTIFACTS.mkdir(exist_ok=True)
    spec = SweepSpec(gammas=(1e-2, 10.0), n_samples=(1000,), episodes=10, master_seed=0)
    all_rows = []
    results = {}
    for env in ("cartpole-continuous", "cartpole-discrete"):
        config = ExperimentConfig(env=env, loss=ExpectedCost())
        rows = run_sweep(config, spec)
        all_rows.extend(rows)
        by_gamma = {}
        for gamma in (1e-2, 10.0):
            cell = [r for r in rows if r.gamma == gamma]
            costs = np.array([r.episode_cost for r in cell])
            by_gamma[gamma] = {
                "mean": float(np.mean(costs)),
                "successes": sum(r.success for r in cell),
                "failed": sum(r.failed for r in cell),
            }
        results[env] = by_gamma

    config = ExperimentConfig(env="cartpole-continuous", loss=ExpectedCost())
    csv_text = render_sweep_csv(all_rows, config_lines(config, spec))
    (ARTIFACTS / "acceptance_sweep.csv").write_text(csv_text)
    elapsed = time.monotonic() - start
    assert elapsed < 1800.0
    return results


class TestCartpoleSweepTrends:
    """The published step-size sweet spot, stated as two clauses per
    environment: swing-up success at gamma = 1e-2 in at least 8/10 episodes,
    and a strictly lower mean episode cost than the gamma = 10 cell.

    Known shortfall, left to fail honestly rather than weakened: a single
    proximal step per round bounds the controller's feedback gain, so under
    the benchmark's 5 N per-step command noise the upright hold hovers just
    outside the 0.21 rad band, and on the unbounded track the cart-position
    runaway inflates the gamma = 1e-2 episode costs. Both effects are
    quantified in the verdict lines.
    """

    @pytest.mark.parametrize("env", ("cartpole-continuous", "cartpole-discrete"))
    def test_swing_up_success(self, cartpole_sweep_results, env):
        by_gamma = cartpole_sweep_results[env]
        succ = by_gamma[1e-2]["successes"]
        _verdict(f"cartpole swing-up success [{env}]", succ >= 8, f"{succ}/10 at gamma=1e-2")
        assert succ >= 8, f"{env}: swing-up success {succ}/10 below 8/10"

    @pytest.mark.parametrize("env", ("cartpole-continuous", "cartpole-discrete"))
    def test_step_size_ordering(self, cartpole_sweep_results, env):
        by_gamma = cartpole_sweep_results[env]
        mean_small, mean_large = by_gamma[1e-2]["mean"], by_gamma[10.0]["mean"]
        ordering = mean_small < mean_large
        _verdict(
            f"cartpole step-size ordering [{env}]",
            ordering,
            f"mean(1e-2) {mean_small:.3g} {'<' if ordering else '>='} mean(10) {mean_large:.3g}",
        )
        assert ordering, f"{env}: gamma=1e-2 mean cost not below gamma=10"


class TestReproducibility:
    def test_bit_identical_csv_payloads(self):
        start = time.monotonic()
        config = ExperimentConfig(
            env="cartpole-continuous",
            episode_length=150,
            n_samples=256,
            n_dynamics_samples=5,
            horizon=30,
        )
        lines = config_lines(config)
        ep_a = render_episode_csv(run_episode(config, 1234), lines)
        ep_b = render_episode_csv(run_episode(config, 1234), lines)
        spec = SweepSpec(gammas=(0.01,), n_samples=(256,), episodes=2, master_seed=17)
        sw_a = render_sweep_csv(run_sweep(config, spec), config_lines(config, spec))
        sw_b = render_sweep_csv(run_sweep(config, spec), config_lines(config, spec))
        ok = ep_a == ep_b and sw_a == sw_b
        _verdict("bit-identical reproducibility", ok, f"{time.monotonic() - start:.0f}s")
        assert ep_a == ep_b
        assert sw_a == sw_b
