import numpy as np
import pytest
import scipy.optimize

from mirrormpc.analytic import (
    LtiDynamics,
    LtiSystem,
    QuadraticCost,
    QuadraticLoss,
    build_stacked,
    gaussian_exp_quadratic,
    leqr_quadratic,
    lqr_quadratic,
)
from mirrormpc.errors import ValidationError
from mirrormpc.updates import quadratic_exact_step


def scalar_system(a=1.0, b=1.0, w=1.0):
    return LtiSystem(np.array([[a]]), np.array([[b]]), np.array([[w]]))


def random_system(rng, n=2, m=1):
    A = rng.normal(scale=0.6, size=(n, n))
    B = rng.normal(size=(n, m))
    w = rng.normal(size=(n, n))
    W = 0.1 * (w @ w.T) + 0.05 * np.eye(n)
    return LtiSystem(A, B, W)


def simulate_stat(sys, Q, R, Q_end, x0, u_flat, w_flat):
    """Step-by-step recursion oracle for the trajectory cost statistic."""
    n, m, H = sys.n, sys.m, u_flat.shape[0] // sys.m
    x = np.asarray(x0, dtype=np.float64)
    total = 0.0
    for h in range(H):
        u = u_flat[h * m : (h + 1) * m]
        total += 0.5 * x @ Q @ x + 0.5 * u @ R @ u
        x = sys.A @ x + sys.B @ u + w_flat[h * n : (h + 1) * n]
    return total + 0.5 * x @ Q_end @ x, x


class TestBuildStacked:
    def test_h1_blocks(self):
        sys = scalar_system(a=2.0, b=3.0)
        st = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), 1)
        np.testing.assert_array_equal(st.F, [[1.0], [2.0]])
        np.testing.assert_array_equal(st.G, [[0.0], [3.0]])
        np.testing.assert_array_equal(st.L, [[0.0], [1.0]])

    def test_identity_double_step(self):
        sys = scalar_system()
        st = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), 2)
        states = st.F @ np.zeros(1) + st.G @ np.array([1.0, 1.0]) + st.L @ np.zeros(2)
        np.testing.assert_allclose(states, [0.0, 1.0, 2.0])

    def test_first_block_rows_zero(self):
        rng = np.random.default_rng(0)
        sys = random_system(rng, n=3, m=2)
        st = build_stacked(sys, np.eye(3), np.eye(2), np.eye(3), 4)
        np.testing.assert_array_equal(st.G[:3], 0.0)
        np.testing.assert_array_equal(st.L[:3], 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_recursion_oracle(self, seed):
        rng = np.random.default_rng(seed)
        sys = random_system(rng, n=2, m=2)
        H = int(rng.integers(1, 5))
        st = build_stacked(sys, np.eye(2), np.eye(2), np.eye(2), H)
        x0 = rng.normal(size=2)
        u = rng.normal(size=H * 2)
        w = rng.normal(size=H * 2)
        stacked_states = st.F @ x0 + st.G @ u + st.L @ w
        x = x0.copy()
        for h in range(H):
            np.testing.assert_allclose(stacked_states[2 * h : 2 * h + 2], x, atol=1e-10)
            x = sys.A @ x + sys.B @ u[2 * h : 2 * h + 2] + w[2 * h : 2 * h + 2]
        np.testing.assert_allclose(stacked_states[-2:], x, atol=1e-10)

    def test_noise_block_structure(self):
        # L W L^T has a zero first block row/column: no noise reaches the
        # current state.
        rng = np.random.default_rng(1)
        sys = random_system(rng, n=2)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 3)
        lwl = st.L @ st.blockW @ st.L.T
        np.testing.assert_array_equal(lwl[:2, :], 0.0)
        np.testing.assert_array_equal(lwl[:, :2], 0.0)


class TestLqrQuadratic:
    def test_scalar_hand_computed(self):
        # H=1, A=B=Q=R=Q_end=1: R_t = G^T Q G + R = 2, r_t = x0,
        # minimizer -x0/2.
        sys = scalar_system()
        st = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), 1)
        quad = lqr_quadratic(st, np.array([3.0]))
        assert quad.R[0, 0] == pytest.approx(2.0)
        assert quad.r[0] == pytest.approx(3.0)
        assert quad.minimizer()[0] == pytest.approx(-1.5)

    def test_zero_state_symmetric(self):
        rng = np.random.default_rng(2)
        sys = random_system(rng)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 3)
        quad = lqr_quadratic(st, np.zeros(2))
        np.testing.assert_array_equal(quad.r, 0.0)
        np.testing.assert_array_equal(quadratic_exact_step(quad), 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_loss_matches_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        sys = scalar_system(a=0.9, b=0.7, w=0.3)
        Q = R = Q_end = np.eye(1)
        H = 3
        st = build_stacked(sys, Q, R, Q_end, H)
        x0 = np.array([1.2])
        theta = rng.normal(size=H)
        quad = lqr_quadratic(st, x0)
        draws = 200_000
        w = rng.normal(scale=np.sqrt(0.3), size=(draws, H))
        stats = np.empty(draws)
        for i in range(draws):
            stats[i], _ = simulate_stat(sys, Q, R, Q_end, x0, theta, w[i])
        se = stats.std() / np.sqrt(draws)
        assert quad.value(theta) == pytest.approx(stats.mean(), abs=3 * se)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        sys = random_system(rng)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 3)
        quad = lqr_quadratic(st, rng.normal(size=2))
        theta = rng.normal(size=3)
        eps = 1e-6
        for j in range(3):
            d = np.zeros(3)
            d[j] = eps
            fd = (quad.value(theta + d) - quad.value(theta - d)) / (2 * eps)
            assert fd == pytest.approx(quad.grad(theta)[j], abs=1e-6)

    def test_exact_step_matches_numeric_minimizer(self):
        rng = np.random.default_rng(3)
        sys = random_system(rng)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 4)
        quad = lqr_quadratic(st, rng.normal(size=2))
        res = scipy.optimize.minimize(quad.value, np.zeros(4), jac=quad.grad, tol=1e-14)
        np.testing.assert_allclose(quadratic_exact_step(quad), res.x, atol=1e-8)


class TestGaussianExpQuadratic:
    def test_trivial_case(self):
        assert gaussian_exp_quadratic(np.zeros(1), np.eye(1), np.zeros((1, 1)), np.zeros(1)) == 1.0

    def test_scalar_known_value(self):
        out = gaussian_exp_quadratic(np.zeros(1), np.eye(1), np.eye(1), np.zeros(1))
        assert out == pytest.approx(1.0 / np.sqrt(2.0))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        n = 2
        mu = rng.normal(size=n)
        s = rng.normal(size=(n, n))
        Sigma = s @ s.T + np.eye(n)
        a = rng.normal(size=(n, n))
        A = 0.3 * (a @ a.T)
        b = rng.normal(scale=0.3, size=n)
        closed = gaussian_exp_quadratic(mu, Sigma, A, b)
        draws = 10**6
        x = rng.multivariate_normal(mu, Sigma, size=draws)
        vals = np.exp(-0.5 * np.einsum("ni,ij,nj->n", x, A, x) - x @ b)
        se = vals.std() / np.sqrt(draws)
        assert closed == pytest.approx(vals.mean(), abs=3 * se)


class TestLeqrQuadratic:
    def test_zero_state_zero_forcing(self):
        rng = np.random.default_rng(4)
        sys = random_system(rng)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 3)
        quad = leqr_quadratic(st, np.zeros(2), 5.0)
        np.testing.assert_array_equal(quad.r, 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_risk_neutral_limit_is_lqr(self, seed):
        # lambda * (R_t, r_t, minimizer) converges to the LQR quadratic at
        # lambda = 1e8 within 1e-4 relative.
        rng = np.random.default_rng(seed)
        sys = random_system(rng)
        st = build_stacked(sys, np.eye(2), np.eye(1), np.eye(2), 3)
        x0 = rng.normal(size=2)
        lam = 1e8
        lqr = lqr_quadratic(st, x0)
        leqr = leqr_quadratic(st, x0, lam)
        np.testing.assert_allclose(lam * leqr.R, lqr.R, rtol=1e-4)
        np.testing.assert_allclose(lam * leqr.r, lqr.r, rtol=1e-4)
        np.testing.assert_allclose(leqr.minimizer(), lqr.minimizer(), rtol=1e-4)

    @pytest.mark.parametrize("seed", range(3))
    def test_loss_matches_monte_carlo(self, seed):
        # -log E[exp(-C / lambda)] under a Dirac policy on a scalar H=2
        # instance, via the closed form versus sampling.
        rng = np.random.default_rng(seed)
        sys = scalar_system(a=0.8, b=1.0, w=0.4)
        Q = R = Q_end = np.eye(1)
        H = 2
        lam = 4.0
        st = build_stacked(sys, Q, R, Q_end, H)
        x0 = np.array([0.9])
        theta = rng.normal(size=H)
        quad = leqr_quadratic(st, x0, lam)
        draws = 400_000
        w = rng.normal(scale=np.sqrt(0.4), size=(draws, H))
        stats = np.empty(draws)
        for i in range(draws):
            stats[i], _ = simulate_stat(sys, Q, R, Q_end, x0, theta, w[i])
        utilities = np.exp(-stats / lam)
        mc = -np.log(utilities.mean())
        se = utilities.std() / np.sqrt(draws) / utilities.mean()
        assert quad.value(theta) == pytest.approx(mc, abs=3 * se)

    def test_lambda_must_be_positive(self):
        sys = scalar_system()
        st = build_stacked(sys, np.eye(1), np.eye(1), np.eye(1), 2)
        with pytest.raises(ValidationError):
            leqr_quadratic(st, np.zeros(1), 0.0)


class TestQuadraticLossValidation:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValidationError):
            QuadraticLoss(R=np.array([[1.0, 0.1], [0.0, 1.0]]), r=np.zeros(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            QuadraticLoss(R=np.eye(2), r=np.zeros(3))


class TestLtiSimulationAdapters:
    def test_dynamics_step(self):
        sys = scalar_system(a=2.0, b=1.0, w=1e-12)
        dyn = LtiDynamics(sys)
        out = dyn.step(np.array([1.0]), np.array([0.5]), np.zeros(1))
        assert out[0] == pytest.approx(2.5)

    def test_quadratic_cost(self):
        cost = QuadraticCost(np.eye(2), np.eye(1), 2 * np.eye(2))
        x = np.array([1.0, 2.0])
        assert cost.stage(x, np.array([3.0])) == pytest.approx(0.5 * 5 + 0.5 * 9)
        assert cost.terminal(x) == pytest.approx(5.0)

    def test_batch_forms_match(self):
        rng = np.random.default_rng(5)
        cost = QuadraticCost(np.eye(2), np.eye(1), np.eye(2))
        states = rng.normal(size=(8, 2))
        controls = rng.normal(size=(8, 1))
        ref = [cost.stage(states[i], controls[i]) for i in range(8)]
        np.testing.assert_allclose(cost.stage_batch(states, controls), ref, rtol=1e-12)
