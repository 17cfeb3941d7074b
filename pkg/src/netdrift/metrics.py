"""Performance metrics over weight trajectories.

Excess risk at time i is the expected risk of the estimate available at
time i-1 minus the risk of the time-i optimizer; the data expectation is
taken over a fresh evaluation batch (shared across learner variants at each
tick) and the trajectory expectation over experiment repetitions.  For
quadratic risks the data expectation has a closed form and is evaluated
exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvalBatch, MissingHessian, SingleClassBatch
from .risk import DiscreteEnv, MomentEnv, _log1pexp, loss


def _loss_matrix(model, weights, features, labels):
    """Losses of every (sample, node) pair: (B, N)."""
    margins = features @ weights.T
    if model.kind == "square":
        return (labels[:, None] - margins) ** 2
    reg = 0.5 * model.rho * (weights * weights).sum(axis=1)
    return reg[None, :] + _log1pexp(-labels[:, None] * margins)


def excess_risk(weights_prev, w_ref, model, eval_features, eval_labels):
    """Per-node and network excess risk estimated on an evaluation batch.

    weights_prev is (N, M): the estimates available before the current
    tick's data.  Returns (per_node (N,), network, per_node_se (N,),
    network_se); the shared batch makes the reference risk cancel exactly
    when an estimate equals the reference.
    """
    h = np.asarray(eval_features, dtype=float)
    y = np.asarray(eval_labels, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0:
        raise EmptyEvalBatch("excess risk needs a nonempty evaluation batch")
    weights_prev = np.atleast_2d(np.asarray(weights_prev, dtype=float))
    # evaluate the reference through the same vectorized path so that a
    # node equal to the reference cancels exactly
    stacked = np.concatenate([weights_prev, np.asarray(w_ref, dtype=float)[None, :]])
    losses = _loss_matrix(model, stacked, h, y)
    diffs = losses[:, :-1] - losses[:, -1:]  # (B, N)
    b = h.shape[0]
    per_node = diffs.mean(axis=0)
    per_node_se = diffs.std(axis=0, ddof=1) / np.sqrt(b)
    network_samples = diffs.mean(axis=1)
    network = float(network_samples.mean())
    network_se = float(network_samples.std(ddof=1) / np.sqrt(b))
    return per_node, network, per_node_se, network_se


def exact_excess_risk(weights_prev, w_ref, model, env):
    """Per-node excess risk with the data expectation in closed form.

    Supports linear-model moments (quadratic risk) and finite supports;
    the trajectory expectation still comes from experiment averaging.
    """
    weights_prev = np.atleast_2d(np.asarray(weights_prev, dtype=float))
    w_ref = np.asarray(w_ref, dtype=float)
    if isinstance(env, MomentEnv):
        if model.kind != "square":
            raise MissingHessian("moment handles only support the square loss")
        w_opt = env.optimizer()
        diff = weights_prev - w_opt
        vals = np.einsum("nj,jk,nk->n", diff, env.feature_covariance, diff)
        ref_diff = w_ref - w_opt
        return vals - ref_diff @ env.feature_covariance @ ref_diff
    if isinstance(env, DiscreteEnv):
        node_risks = env.probs @ _loss_matrix(model, weights_prev, env.features, env.labels)
        ref_risk = float(env.probs @ loss(model, w_ref, env.features, env.labels))
        return node_risks - ref_risk
    raise MissingHessian("exact excess risk needs an analytic distribution handle")


def quadratic_excess_risk(weights_prev, w_ref, feature_covariance):
    """Exact per-node excess risk for the square loss: (w-w°)' R_h (w-w°)."""
    diff = np.atleast_2d(weights_prev) - np.asarray(w_ref, dtype=float)
    return np.einsum("nm,mp,np->n", diff, feature_covariance, diff)


def squared_errors(weights, w_ref):
    """Per-node squared distance to the reference vector."""
    diff = np.atleast_2d(weights) - np.asarray(w_ref, dtype=float)
    return (diff * diff).sum(axis=1)


def weighted_mse(weights, w_ref, weighting, hessians=None):
    """Weighted network error x' T x on the stacked per-node errors.

    `weighting` is either an explicit (NM, NM) matrix or a selector string
    from {"node-er", "network-er", "node-mse", "network-mse"} (resolved via
    `theory.metric_weighting`, which needs `hessians` for the risk-weighted
    selectors).
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    n, m = weights.shape
    x = (np.asarray(w_ref, dtype=float) - weights).reshape(-1)
    if isinstance(weighting, str):
        from .theory import metric_weighting

        if weighting in ("node-er", "network-er") and hessians is None:
            raise MissingHessian(f"selector {weighting!r} needs Hessians at the optimizer")
        weighting = metric_weighting(weighting, hessians=hessians, n_nodes=n, dim=m)
    t = np.asarray(weighting, dtype=float)
    return float(x @ t @ x)


def accuracy(weights, eval_features, eval_labels):
    """Fraction of correct sign predictions; sign(0) counts as +1.

    `weights` may be a single vector or (N, M); the latter returns the
    average accuracy across nodes.
    """
    h = np.asarray(eval_features, dtype=float)
    y = np.asarray(eval_labels, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0:
        raise EmptyEvalBatch("accuracy needs a nonempty evaluation batch")
    w = np.asarray(weights, dtype=float)
    single = w.ndim == 1
    scores = h @ np.atleast_2d(w).T  # (B, N)
    pred = np.where(scores >= 0.0, 1.0, -1.0)
    acc = (pred == y[:, None]).mean(axis=0)
    return float(acc[0]) if single else acc


def roc_curve(w, eval_features, eval_labels):
    """Detection/false-alarm staircase swept over the classifier bias.

    Returns (thresholds, p_fa, p_d) where row j applies the rule
    sign(h'w - b) with b = thresholds[j]; includes the no-detection and
    all-detection endpoints.  Requires both classes in the batch.
    """
    h = np.asarray(eval_features, dtype=float)
    y = np.asarray(eval_labels, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0:
        raise EmptyEvalBatch("roc needs a nonempty evaluation batch")
    scores = h @ np.asarray(w, dtype=float)
    return roc_from_scores(scores, y)


def roc_from_scores(scores, labels):
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassBatch("roc needs both classes in the batch")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    pos = (y[order] > 0).astype(float)
    neg = 1.0 - pos
    # group ties: cut where the sorted score changes
    change = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    ends = np.concatenate([change, [scores.shape[0] - 1]])
    tp = np.cumsum(pos)[ends]
    fp = np.cumsum(neg)[ends]
    p_d = np.concatenate([[0.0], tp / n_pos])
    p_fa = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[ends]])
    return thresholds, p_fa, p_d


def auc(w, eval_features, eval_labels):
    """Area under the ROC staircase (ties get half credit)."""
    _, p_fa, p_d = roc_curve(w, eval_features, eval_labels)
    return float(np.trapezoid(p_d, p_fa))


def auc_from_scores(scores, labels):
    _, p_fa, p_d = roc_from_scores(scores, labels)
    return float(np.trapezoid(p_d, p_fa))


# ---------------------------------------------------------------------------
# trace accumulation over experiment repetitions
# ---------------------------------------------------------------------------

@dataclass
class SeriesStat:
    """Running mean/variance of a per-tick series across repetitions."""

    total: np.ndarray
    total_sq: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), 0)

    def add(self, values):
        values = np.asarray(values, dtype=float)
        self.total += values
        self.total_sq += values * values
        self.count += 1

    @property
    def mean(self):
        return self.total / self.count

    @property
    def stderr(self):
        if self.count < 2:
            return np.full_like(self.total, np.nan)
        var = (self.total_sq - self.total ** 2 / self.count) / (self.count - 1)
        return np.sqrt(np.clip(var, 0.0, None) / self.count)


@dataclass
class MetricTrace:
    """Per-variant, time-indexed metric series averaged over repetitions.

    `series` maps metric names to network-level (T,) stats; `node_series`
    holds per-node (T, N) stats where applicable; `window` holds per-rep
    steady-window reductions ((R,) or (R, N) arrays) used for long-run
    summaries; `roc_scores` maps designated ticks to pooled
    (scores, labels) pairs across repetitions.
    """

    variant: str
    horizon: int
    n_nodes: int
    series: dict = field(default_factory=dict)
    node_series: dict = field(default_factory=dict)
    window: dict = field(default_factory=dict)
    roc_scores: dict = field(default_factory=dict)
    n_experiments: int = 0

    def add_rep(self, rep_series, rep_node_series, rep_window, rep_roc=None):
        for name, values in rep_series.items():
            if name not in self.series:
                self.series[name] = SeriesStat.empty(np.shape(values))
            self.series[name].add(values)
        for name, values in rep_node_series.items():
            if name not in self.node_series:
                self.node_series[name] = SeriesStat.empty(np.shape(values))
            self.node_series[name].add(values)
        for name, value in rep_window.items():
            self.window.setdefault(name, []).append(np.asarray(value, dtype=float))
        if rep_roc:
            for tick, (scores, labels) in rep_roc.items():
                bucket = self.roc_scores.setdefault(tick, ([], []))
                bucket[0].append(np.asarray(scores, dtype=float))
                bucket[1].append(np.asarray(labels, dtype=float))
        self.n_experiments += 1

    def window_values(self, name) -> np.ndarray:
        """Per-repetition steady-window values, stacked (R,) or (R, N)."""
        return np.stack(self.window[name], axis=0)

    def window_mean(self, name) -> np.ndarray:
        return self.window_values(name).mean(axis=0)

    def window_stderr(self, name) -> np.ndarray:
        vals = self.window_values(name)
        return vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0])

    def pooled_roc(self, tick):
        scores, labels = self.roc_scores[tick]
        return np.concatenate(scores), np.concatenate(labels)

    def validate(self, slack_sigmas=4.0):
        """Excess risk must not go materially negative (wrong reference)."""
        for name in ("er_network",):
            if name in self.series:
                stat = self.series[name]
                bad = stat.mean < -slack_sigmas * np.nan_to_num(stat.stderr, nan=np.inf)
                if np.any(bad):
                    ticks = np.flatnonzero(bad)[:5]
                    raise ValueError(
                        f"{self.variant}: excess risk significantly negative at "
                        f"ticks {ticks + 1}; reference optimizer looks wrong"
                    )
        return True
