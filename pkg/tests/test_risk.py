import math

import numpy as np
import pytest

from netdrift.drift import stagger_support
from netdrift.errors import (
    DimensionMismatch,
    NoMomentsAvailable,
    NonConvergence,
    UnboundedFeatures,
)
from netdrift.risk import (
    DiscreteEnv,
    LogisticModel,
    MomentEnv,
    SamplerEnv,
    SquareLossModel,
    adaline_noise_constants,
    aligned_gradients,
    batch_minimize,
    gaussian_linear_env,
    hessian,
    hessian_bounds,
    loss,
    model_from_spec,
    pairwise_gradients,
    stochastic_gradient,
    true_gradient,
)

from conftest import make_rng


def bisect(f, lo, hi, tol=1e-13):
    """Scalar root of a monotone function: independent oracle."""
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) * flo > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_logistic_loss_at_zero_is_log2():
    model = LogisticModel(dim=3, rho=0.0)
    val = loss(model, np.zeros(3), np.array([0.4, -1.0, 2.0]), 1.0)
    assert abs(val - math.log(2.0)) < 1e-15


def test_square_loss_exact_fit_is_zero():
    model = SquareLossModel(dim=2)
    w = np.array([2.0, -1.0])
    h = np.array([1.0, 3.0])
    assert loss(model, w, h, h @ w) == 0.0


def test_logistic_loss_regularized_unit_case():
    # rho = 5, w = e1, h = e1, y = +1: 2.5 + log(1 + e^-1)
    model = LogisticModel(dim=2, rho=5.0)
    val = loss(model, np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1.0)
    assert abs(val - (2.5 + math.log1p(math.exp(-1.0)))) < 1e-14


def test_logistic_loss_overflow_safe():
    model = LogisticModel(dim=1, rho=0.0)
    val = loss(model, np.array([2000.0]), np.array([1.0]), -1.0)
    assert np.isfinite(val) and abs(val - 2000.0) < 1e-9


def test_loss_dimension_mismatch():
    model = SquareLossModel(dim=3)
    with pytest.raises(DimensionMismatch):
        loss(model, np.zeros(2), np.zeros(2), 1.0)


# ---------------------------------------------------------------------------
# stochastic gradient
# ---------------------------------------------------------------------------

def test_square_gradient_zero_at_exact_fit():
    model = SquareLossModel(dim=2)
    w = np.array([1.0, 2.0])
    h = np.array([0.5, -1.0])
    g = stochastic_gradient(model, w, h, h @ w)
    assert np.array_equal(g, np.zeros(2))


def test_square_gradient_at_origin():
    model = SquareLossModel(dim=2)
    h = np.array([0.3, -0.7])
    g = stochastic_gradient(model, np.zeros(2), h, 1.0)
    assert np.allclose(g, -2.0 * h, atol=0)


def test_gradient_matches_central_differences():
    rng = make_rng(3)
    delta = 1e-5
    for model in (LogisticModel(dim=4, rho=0.7), SquareLossModel(dim=4)):
        for _ in range(100):
            w = rng.standard_normal(4)
            h = rng.standard_normal(4)
            y = 1.0 if rng.random() < 0.5 else -1.0
            g = stochastic_gradient(model, w, h, y)
            for j in range(4):
                e = np.zeros(4)
                e[j] = delta
                fd = (loss(model, w + e, h, y) - loss(model, w - e, h, y)) / (2 * delta)
                assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))


def test_pairwise_and_aligned_gradients_agree_with_singles():
    rng = make_rng(5)
    model = LogisticModel(dim=3, rho=0.2)
    points = rng.standard_normal((4, 3))
    feats = rng.standard_normal((4, 3))
    labs = np.where(rng.random(4) < 0.5, 1.0, -1.0)
    pg = pairwise_gradients(model, points, feats, labs)
    ag = aligned_gradients(model, points, feats, labs)
    for l in range(4):
        for k in range(4):
            ref = stochastic_gradient(model, points[k], feats[l], labs[l])
            assert np.allclose(pg[l, k], ref, rtol=1e-14)
    for k in range(4):
        assert np.allclose(ag[k], pg[k, k], rtol=1e-14)


# ---------------------------------------------------------------------------
# population gradient / hessian
# ---------------------------------------------------------------------------

def test_true_gradient_zero_at_normal_equations():
    env = gaussian_linear_env(np.diag([1.0, 2.0]), np.array([0.5, -1.5]), 0.3)
    model = SquareLossModel(dim=2)
    g, se = true_gradient(model, env.optimizer(), env)
    assert se is None
    assert np.allclose(g, 0.0, atol=1e-14)


def test_true_gradient_square_substitution():
    env = MomentEnv(np.eye(2), np.zeros(2), 0.0)
    model = SquareLossModel(dim=2)
    g, _ = true_gradient(model, np.array([1.0, 0.0]), env)
    assert np.allclose(g, np.array([2.0, 0.0]), atol=0)


def test_true_gradient_monte_carlo_consistency():
    # large and small sampler batches agree within 3 combined stderrs
    rng = make_rng(11)
    mean = np.array([0.8, -0.4])

    def draw(r, n):
        cls = np.where(r.random(n) < 0.5, 1.0, -1.0)
        h = cls[:, None] * mean + r.standard_normal((n, 2))
        return h, cls

    env = SamplerEnv(draw=draw, dim=2)
    model = LogisticModel(dim=2, rho=0.3)
    w = np.array([0.2, 0.9])
    g_big, se_big = true_gradient(model, w, env, n_draws=1_000_000, rng=rng)
    g_small, se_small = true_gradient(model, w, env, n_draws=10_000, rng=rng)
    combined = math.hypot(se_big, se_small)
    assert np.linalg.norm(g_big - g_small) <= 3.0 * combined


def test_hessian_square_identity():
    env = MomentEnv(np.eye(3), np.zeros(3), 0.0)
    assert np.allclose(hessian(SquareLossModel(dim=3), np.zeros(3), env),
                       2.0 * np.eye(3), atol=0)


def test_hessian_logistic_orthogonal_features():
    # features never load on the third axis, w on the third axis only:
    # curvature sits at 1/4, so H = rho I + E{hh'}/4
    rng = make_rng(13)
    feats = np.zeros((50, 3))
    feats[:, :2] = rng.standard_normal((50, 2))
    env = DiscreteEnv(features=feats, labels=np.ones(50),
                      probs=np.full(50, 1 / 50))
    model = LogisticModel(dim=3, rho=0.5)
    w = np.array([0.0, 0.0, 4.0])
    expected = 0.5 * np.eye(3) + 0.25 * (feats.T @ feats) / 50
    assert np.allclose(hessian(model, w, env), expected, atol=1e-14)


def test_hessian_matches_gradient_finite_differences():
    rng = make_rng(17)
    feats = rng.standard_normal((40, 3))
    labs = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    env = DiscreteEnv(features=feats, labels=labs, probs=np.full(40, 1 / 40))
    model = LogisticModel(dim=3, rho=0.4)
    w = rng.standard_normal(3) * 0.5
    hess = hessian(model, w, env)
    delta = 1e-5
    for j in range(3):
        e = np.zeros(3)
        e[j] = delta
        gp, _ = true_gradient(model, w + e, env)
        gm, _ = true_gradient(model, w - e, env)
        fd = (gp - gm) / (2 * delta)
        assert np.max(np.abs(fd - hess[:, j])) < 1e-4


def test_hessian_bounds_logistic_with_norm_cap():
    model = LogisticModel(dim=2, rho=5.0, feature_norm_bound=2.0)
    env = SamplerEnv(draw=lambda r, n: (r.standard_normal((n, 2)), np.ones(n)), dim=2)
    assert hessian_bounds(model, env) == (5.0, 6.0)


def test_hessian_bounds_square_diag():
    env = MomentEnv(np.diag([1.0, 2.0]), np.zeros(2), 0.0)
    lo, hi = hessian_bounds(SquareLossModel(dim=2), env)
    assert (lo, hi) == (2.0, 4.0)


def test_hessian_bounds_on_grid_features():
    # independent oracle: max feature norm over the 27-point grid
    env = stagger_support(0, 0.1)
    grid_norm2 = max(float(h @ h) for h in env.features)
    model = LogisticModel(dim=3, rho=0.1)
    lo, hi = hessian_bounds(model, env)
    assert lo == 0.1
    assert abs(hi - (0.1 + grid_norm2 / 4.0)) < 1e-15
    assert abs(grid_norm2 - 3.0) < 1e-15


def test_hessian_bounds_unbounded_features_raise():
    model = LogisticModel(dim=2, rho=1.0)
    env = SamplerEnv(draw=lambda r, n: (r.standard_normal((n, 2)), np.ones(n)), dim=2)
    with pytest.raises(UnboundedFeatures):
        hessian_bounds(model, env)


def test_hessian_eigenvalues_within_certified_bounds():
    rng = make_rng(19)
    env = stagger_support(1, 0.05)
    model = LogisticModel(dim=3, rho=0.3)
    lo, hi = hessian_bounds(model, env)
    for _ in range(100):
        w = rng.standard_normal(3)
        w *= rng.random() * 10.0 / max(np.linalg.norm(w), 1e-12)
        eig = np.linalg.eigvalsh(hessian(model, w, env))
        assert eig[0] >= lo - 1e-8
        assert eig[-1] <= hi + 1e-8


# ---------------------------------------------------------------------------
# batch minimizer
# ---------------------------------------------------------------------------

def test_batch_minimize_recovers_noise_free_linear_model():
    rng = make_rng(23)
    w_true = np.array([1.5, -2.0, 0.3])
    h = rng.standard_normal((60, 3))
    y = h @ w_true
    w = batch_minimize(SquareLossModel(dim=3), h, y, tol=1e-10)
    assert np.max(np.abs(w - w_true)) < 1e-6


def test_batch_minimize_separated_1d_logistic():
    # all-positive margin direction; rho keeps the minimizer finite.
    model = LogisticModel(dim=1, rho=1.0)
    h = np.array([[1.0], [2.0], [0.5]])
    y = np.array([1.0, 1.0, 1.0])
    w = batch_minimize(model, h, y, tol=1e-9)
    # oracle: stationarity rho*c = mean(y h sigma(-y h c)) via bisection
    def grad(c):
        margins = h[:, 0] * c
        return model.rho * c - np.mean(y * h[:, 0] / (1.0 + np.exp(y * margins)))
    c_star = bisect(grad, 0.0, 10.0)
    assert abs(w[0] - c_star) < 1e-8


def test_batch_minimize_single_sample_scalar_root():
    # h = e1, y = +1, rho = 1: stationarity is c = sigmoid(-c)
    model = LogisticModel(dim=2, rho=1.0)
    w = batch_minimize(model, np.array([[1.0, 0.0]]), np.array([1.0]), tol=1e-9)
    c_star = bisect(lambda c: c - 1.0 / (1.0 + math.exp(c)), 0.0, 1.0)
    assert abs(w[0] - c_star) < 1e-8
    assert abs(w[1]) < 1e-12


def test_batch_minimize_iteration_cap_reports_grad_norm():
    rng = make_rng(37)
    model = SquareLossModel(dim=2)
    h = rng.standard_normal((20, 2))
    y = rng.standard_normal(20)
    with pytest.raises(NonConvergence) as err:
        batch_minimize(model, h, y, tol=1e-15, max_iter=2)
    assert err.value.grad_norm is not None and err.value.grad_norm > 0


def test_batch_minimize_matches_normal_equations():
    rng = make_rng(29)
    r_h = np.array([[2.0, 0.3], [0.3, 1.0]])
    chol = np.linalg.cholesky(r_h)
    w_true = np.array([0.7, -1.1])
    h = rng.standard_normal((40_000, 2)) @ chol.T
    y = h @ w_true + 0.5 * rng.standard_normal(40_000)
    w = batch_minimize(SquareLossModel(dim=2), h, y, tol=1e-10)
    # empirical normal equations as the oracle
    w_oracle = np.linalg.solve(h.T @ h, h.T @ y)
    assert np.max(np.abs(w - w_oracle)) < 1e-8


# ---------------------------------------------------------------------------
# gradient-noise constants
# ---------------------------------------------------------------------------

def test_noise_constants_vanish_for_deterministic_features():
    env = MomentEnv(np.eye(1), np.zeros(1), 0.0)
    sampler = lambda r, n: np.where(r.random((n, 1)) < 0.5, 1.0, -1.0)
    est = adaline_noise_constants(env, n_draws=2000, rng=make_rng(1),
                                  feature_sampler=sampler)
    assert est.alpha == 0.0
    assert est.sigma_v2 == 0.0


def test_noise_constants_absolute_term():
    for m in (1, 2, 5):
        env = MomentEnv(np.eye(m), np.zeros(m), 1.0)
        est = adaline_noise_constants(env, n_draws=100, rng=make_rng(2))
        assert abs(est.sigma_v2 - 4.0 * m) < 1e-12


def test_noise_constants_alpha_reproducible_across_seeds():
    env = MomentEnv(np.eye(2), np.zeros(2), 1.0)
    a = adaline_noise_constants(env, n_draws=1_000_000, rng=make_rng(100))
    b = adaline_noise_constants(env, n_draws=1_000_000, rng=make_rng(200))
    combined = math.hypot(a.alpha_stderr, b.alpha_stderr)
    assert abs(a.alpha - b.alpha) <= 3.0 * combined


def test_gradient_noise_model_holds_empirically():
    # mean-zero within 4 stderr and power within the certified envelope
    rng = make_rng(31)
    r_h = np.eye(2)
    w_opt = np.array([1.0, -0.5])
    env = gaussian_linear_env(r_h, w_opt, 1.0)
    est = adaline_noise_constants(env, n_draws=400_000, rng=rng)
    model = SquareLossModel(dim=2)
    n = 100_000
    chol = np.linalg.cholesky(r_h)
    for _ in range(20):
        w = w_opt + rng.standard_normal(2) * rng.random() * 3.0
        h = rng.standard_normal((n, 2)) @ chol.T
        y = h @ w_opt + rng.standard_normal(n)
        v = stochastic_gradient(model, w, h, y) - 2.0 * (r_h @ w - r_h @ w_opt)
        se = v.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(v.mean(axis=0)) <= 4.0 * se)
        power = float((v ** 2).sum(axis=1).mean())
        envelope = est.alpha * float((w_opt - w) @ (w_opt - w)) + est.sigma_v2
        power_se = (v ** 2).sum(axis=1).std(ddof=1) / math.sqrt(n)
        assert power <= envelope + 4.0 * power_se


def test_moment_env_requires_square_loss():
    env = MomentEnv(np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(NoMomentsAvailable):
        true_gradient(LogisticModel(dim=2, rho=1.0), np.zeros(2), env)


def test_model_from_spec_strings():
    m = model_from_spec("logistic:rho=5", dim=4)
    assert isinstance(m, LogisticModel) and m.rho == 5.0
    m2 = model_from_spec("logistic:rho=0.1:hmax=2", dim=4)
    assert m2.feature_norm_bound == 2.0
    assert isinstance(model_from_spec("square", dim=2), SquareLossModel)
