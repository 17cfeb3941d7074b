import numpy as np
import pytest

from netdrift.drift import stagger_support
from netdrift.errors import EmptyEvalBatch, SingleClassBatch
from netdrift.metrics import (
    MetricTrace,
    accuracy,
    auc_from_scores,
    exact_excess_risk,
    excess_risk,
    quadratic_excess_risk,
    roc_curve,
    roc_from_scores,
    weighted_mse,
)
from netdrift.risk import LogisticModel, MomentEnv, SquareLossModel, gaussian_linear_env

from conftest import make_rng


def brute_force_auc(scores, labels):
    """P(score_pos > score_neg) with half credit for ties."""
    pos = scores[labels > 0]
    neg = scores[labels < 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# excess risk
# ---------------------------------------------------------------------------

def test_er_zero_when_weights_equal_reference():
    rng = make_rng(1)
    model = LogisticModel(dim=3, rho=0.5)
    w_ref = rng.standard_normal(3)
    weights = np.tile(w_ref, (4, 1))
    h = rng.standard_normal((100, 3))
    y = np.where(rng.random(100) < 0.5, 1.0, -1.0)
    per_node, network, _, _ = excess_risk(weights, w_ref, model, h, y)
    assert np.all(per_node == 0.0)
    assert network == 0.0


def test_er_single_node_reduces_to_plain_risk_difference():
    rng = make_rng(2)
    model = SquareLossModel(dim=2)
    w = rng.standard_normal((1, 2))
    w_ref = rng.standard_normal(2)
    h = rng.standard_normal((500, 2))
    y = rng.standard_normal(500)
    per_node, network, _, _ = excess_risk(w, w_ref, model, h, y)
    direct = np.mean((y - h @ w[0]) ** 2) - np.mean((y - h @ w_ref) ** 2)
    assert abs(per_node[0] - direct) < 1e-12
    assert abs(network - direct) < 1e-12


def test_er_analytic_matches_empirical_within_3_sigma():
    rng = make_rng(3)
    r_h = np.array([[1.0, 0.2], [0.2, 0.8]])
    w_opt = np.array([1.0, -0.5])
    env = gaussian_linear_env(r_h, w_opt, 0.5)
    model = SquareLossModel(dim=2)
    weights = w_opt + 0.3 * rng.standard_normal((5, 2))
    analytic = exact_excess_risk(weights, w_opt, model, env)
    assert np.allclose(analytic, quadratic_excess_risk(weights, w_opt, r_h))
    chol = np.linalg.cholesky(r_h)
    h = rng.standard_normal((200_000, 2)) @ chol.T
    y = h @ w_opt + np.sqrt(0.5) * rng.standard_normal(200_000)
    per_node, _, per_node_se, _ = excess_risk(weights, w_opt, model, h, y)
    assert np.all(np.abs(per_node - analytic) <= 3.0 * per_node_se)


def test_er_exact_discrete_support():
    env = stagger_support(0, 0.1)
    model = LogisticModel(dim=3, rho=0.1)
    rng = make_rng(4)
    weights = rng.standard_normal((3, 3))
    w_ref = rng.standard_normal(3)
    vals = exact_excess_risk(weights, w_ref, model, env)
    from netdrift.risk import loss
    for k in range(3):
        jk = float(env.probs @ loss(model, weights[k], env.features, env.labels))
        jr = float(env.probs @ loss(model, w_ref, env.features, env.labels))
        assert abs(vals[k] - (jk - jr)) < 1e-12


def test_er_empty_batch_raises():
    model = SquareLossModel(dim=2)
    with pytest.raises(EmptyEvalBatch):
        excess_risk(np.zeros((1, 2)), np.zeros(2), model,
                    np.zeros((0, 2)), np.zeros(0))


# ---------------------------------------------------------------------------
# weighted mse
# ---------------------------------------------------------------------------

def test_weighted_mse_uniform_choice():
    n, m = 4, 3
    e = np.array([0.5, -1.0, 2.0])
    weights = np.tile(-e, (n, 1))
    w_ref = np.zeros(m)
    t = np.eye(n * m) / n
    assert abs(weighted_mse(weights, w_ref, t) - float(e @ e)) < 1e-14


def test_weighted_mse_single_node_selector():
    rng = make_rng(5)
    weights = rng.standard_normal((3, 2))
    w_ref = rng.standard_normal(2)
    hessians = np.tile(2.0 * np.eye(2), (3, 1, 1))
    from netdrift.theory import metric_weighting
    t = metric_weighting("node-mse", hessians=hessians, k=1)
    err = w_ref - weights[1]
    assert abs(weighted_mse(weights, w_ref, t) - float(err @ err)) < 1e-14


def test_weighted_mse_equals_network_er_for_quadratic():
    rng = make_rng(6)
    r_h = np.array([[1.5, 0.1], [0.1, 0.7]])
    env = MomentEnv(r_h, r_h @ np.array([1.0, 2.0]), 0.2)
    model = SquareLossModel(dim=2)
    weights = rng.standard_normal((4, 2))
    w_opt = env.optimizer()
    analytic = exact_excess_risk(weights, w_opt, model, env).mean()
    hessians = np.tile(2.0 * r_h, (4, 1, 1))
    val = weighted_mse(weights, w_opt, "network-er", hessians=hessians)
    assert abs(val - analytic) < 1e-12


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------

def test_accuracy_perfect_and_inverted():
    rng = make_rng(7)
    w = np.array([1.0, 0.0])
    h = rng.standard_normal((2048, 2))
    h[:, 0] += np.where(rng.random(2048) < 0.5, 2.0, -2.0)
    y = np.where(h[:, 0] > 0, 1.0, -1.0)
    assert accuracy(w, h, y) == 1.0
    assert accuracy(-w, h, y) == 0.0


def test_accuracy_random_direction_near_half():
    rng = make_rng(8)
    n = 20_000
    h = rng.standard_normal((n, 2))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)  # labels independent of h
    acc = accuracy(rng.standard_normal(2), h, y)
    se = np.sqrt(0.25 / n)
    assert abs(acc - 0.5) < 3 * se


def test_accuracy_complement_is_exact():
    rng = make_rng(9)
    h = rng.standard_normal((2048, 2))
    y = np.where(rng.random(2048) < 0.5, 1.0, -1.0)
    w = rng.standard_normal(2)
    acc = accuracy(w, h, y)
    err = accuracy(w, h, -y)  # sign convention makes this the error rate
    assert acc + err == 1.0


def test_accuracy_sign_zero_counts_positive():
    h = np.array([[0.0, 1.0]])
    w = np.array([1.0, 0.0])  # score exactly 0
    assert accuracy(w, h, np.array([1.0])) == 1.0
    assert accuracy(w, h, np.array([-1.0])) == 0.0


# ---------------------------------------------------------------------------
# roc
# ---------------------------------------------------------------------------

def test_roc_perfect_separator():
    h = np.array([[1.0], [2.0], [-1.0], [-3.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    thresholds, pfa, pd = roc_curve(np.array([1.0]), h, y)
    assert pfa[0] == 0.0 and pd[0] == 0.0
    assert pfa[-1] == 1.0 and pd[-1] == 1.0
    # passes through the perfect corner
    assert any(f == 0.0 and d == 1.0 for f, d in zip(pfa, pd))
    assert abs(auc_from_scores(h[:, 0], y) - 1.0) < 1e-15


def test_roc_all_tied_scores_gives_chance_area():
    y = np.array([1.0, -1.0, 1.0, -1.0])
    scores = np.zeros(4)
    _, pfa, pd = roc_from_scores(scores, y)
    assert np.array_equal(pfa, np.array([0.0, 1.0]))
    assert np.array_equal(pd, np.array([0.0, 1.0]))
    assert abs(auc_from_scores(scores, y) - 0.5) < 1e-15


def test_roc_monotone_and_auc_matches_brute_force():
    rng = make_rng(10)
    for _ in range(20):
        n = int(rng.integers(10, 200))
        scores = np.round(rng.standard_normal(n), 1)  # force ties
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        if (y > 0).all() or (y < 0).all():
            continue
        _, pfa, pd = roc_from_scores(scores, y)
        assert np.all(np.diff(pfa) >= 0)
        assert np.all(np.diff(pd) >= 0)
        assert abs(auc_from_scores(scores, y) - brute_force_auc(scores, y)) < 1e-9


def test_roc_single_class_raises():
    with pytest.raises(SingleClassBatch):
        roc_from_scores(np.array([1.0, 2.0]), np.array([1.0, 1.0]))


# ---------------------------------------------------------------------------
# trace accumulation
# ---------------------------------------------------------------------------

def test_trace_mean_and_stderr():
    trace = MetricTrace(variant="x", horizon=3, n_nodes=2)
    values = [np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0]),
              np.array([2.0, 2.0, 2.0])]
    for v in values:
        trace.add_rep({"er_network": v}, {}, {"er_network": v.mean()})
    stat = trace.series["er_network"]
    stacked = np.stack(values)
    assert np.allclose(stat.mean, stacked.mean(axis=0))
    assert np.allclose(stat.stderr,
                       stacked.std(axis=0, ddof=1) / np.sqrt(3))
    assert trace.n_experiments == 3
    assert abs(trace.window_mean("er_network") - 2.0) < 1e-15


def test_trace_validation_flags_negative_er():
    trace = MetricTrace(variant="x", horizon=2, n_nodes=1)
    for _ in range(3):
        trace.add_rep({"er_network": np.array([-5.0, 1.0])}, {}, {})
    with pytest.raises(ValueError):
        trace.validate()
