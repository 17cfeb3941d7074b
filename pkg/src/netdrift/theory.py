"""Closed-form performance predictors and bounds for diffusion learners.

The steady-state excess-risk predictor evaluates

    ER = mu^2 vec(A2' Rv A2)' (I - F)^{-1} vec(T),   F = B' kron B',
    B  = A2' (I - mu D) A1'

over the network-extended matrices (Ai = ai kron I_M, D block-diagonal with
per-node gradient-combination Hessians).  The tracking bound decomposes the
long-run excess risk into a steady-state term proportional to the step size,
a lagging term proportional to its inverse, and a constant floor set by the
optimizer's random-walk intensity; the contraction-series bound unrolls the
worst-case per-node mean-square-error recursion tick by tick.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionViolation,
    MissingNodeIndex,
    UnstableB,
    ZeroNoise,
)
from .risk import DiscreteEnv, MomentEnv, stochastic_gradient, true_gradient
from .topology import check_doubly_stochastic, preset_matrices

DENSE_SOLVE_CAP = 60  # largest NM for the direct (I - F) solve


# ---------------------------------------------------------------------------
# kron / vec utilities
# ---------------------------------------------------------------------------

def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def vec(m) -> np.ndarray:
    """Stack the columns of a matrix into a vector."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def unvec(v, rows, cols=None) -> np.ndarray:
    cols = rows if cols is None else cols
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F")


# ---------------------------------------------------------------------------
# steady-state predictor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteadyStateInputs:
    a1: np.ndarray          # (N, N) left-stochastic
    a2: np.ndarray          # (N, N) left-stochastic
    c: np.ndarray           # (N, N) right-stochastic
    hessians: np.ndarray    # (N, M, M) risk Hessians at the optimizer
    r_v: np.ndarray         # (NM, NM) stacked gradient-noise covariance
    mu: float
    weighting: np.ndarray   # (NM, NM) metric selector matrix

    @property
    def n_nodes(self) -> int:
        return self.a1.shape[0]

    @property
    def dim(self) -> int:
        return self.hessians.shape[1]


def gradient_combination_blocks(c, hessians) -> np.ndarray:
    """Per-node combined Hessians: block k is sum_l c[l, k] H_l."""
    c = np.asarray(c, dtype=float)
    hess = np.asarray(hessians, dtype=float)
    return np.einsum("lk,lmp->kmp", c, hess)


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    n, m, _ = blocks.shape
    out = np.zeros((n * m, n * m))
    for k in range(n):
        out[k * m:(k + 1) * m, k * m:(k + 1) * m] = blocks[k]
    return out


def transition_matrix(inputs: SteadyStateInputs) -> np.ndarray:
    """The error propagation matrix B = A2'(I - mu D)A1'."""
    m = inputs.dim
    a1_big = kron(inputs.a1, np.eye(m))
    a2_big = kron(inputs.a2, np.eye(m))
    d_big = _block_diag(gradient_combination_blocks(inputs.c, inputs.hessians))
    core = np.eye(inputs.n_nodes * m) - inputs.mu * d_big
    return a2_big.T @ core @ a1_big.T


def spectral_radius(b) -> float:
    return float(np.abs(np.linalg.eigvals(np.asarray(b, dtype=float))).max())


def steady_state_er(inputs: SteadyStateInputs, dense_cap=DENSE_SOLVE_CAP,
                    series_tol=1e-12) -> float:
    """Steady-state weighted error predicted from the noise covariance.

    Refuses (UnstableB) when the propagation matrix is not contracting.
    Uses the direct linear solve up to `dense_cap` total dimensions and the
    truncated geometric series with a spectral tail bound beyond it.
    """
    b = transition_matrix(inputs)
    rho = spectral_radius(b)
    if rho >= 1.0:
        raise UnstableB(rho)
    m = inputs.dim
    a2_big = kron(inputs.a2, np.eye(m))
    r_v = 0.5 * (inputs.r_v + inputs.r_v.T)
    y = inputs.mu ** 2 * (a2_big.T @ r_v @ a2_big)
    t = np.asarray(inputs.weighting, dtype=float)
    nm = b.shape[0]
    if nm <= dense_cap:
        f = np.kron(b.T, b.T)
        sigma = np.linalg.solve(np.eye(nm * nm) - f, vec(t))
        return float(vec(y) @ sigma)
    return _series_sum(b, y, t, rho, series_tol)


def steady_state_er_series(inputs: SteadyStateInputs, tol=1e-12) -> float:
    """Series-expansion evaluation: sum_j Tr(T' B^j Y (B^j)')."""
    b = transition_matrix(inputs)
    rho = spectral_radius(b)
    if rho >= 1.0:
        raise UnstableB(rho)
    m = inputs.dim
    a2_big = kron(inputs.a2, np.eye(m))
    r_v = 0.5 * (inputs.r_v + inputs.r_v.T)
    y = inputs.mu ** 2 * (a2_big.T @ r_v @ a2_big)
    return _series_sum(b, y, np.asarray(inputs.weighting, dtype=float), rho, tol)


def _series_sum(b, y, t, rho, tol, max_terms=200_000):
    acc = 0.0
    x = y.copy()
    contraction = rho * rho
    for _ in range(max_terms):
        term = float(np.tensordot(t, x))
        acc += term
        x = b @ x @ b.T
        # geometric tail estimate from the spectral radius
        if abs(term) * contraction / (1.0 - contraction) <= tol * max(abs(acc), 1e-300):
            break
    return acc


def metric_weighting(selector, hessians=None, k=None, n_nodes=None, dim=None):
    """Weighting matrices that turn the steady-state error into a metric.

    "node-er"     error in the risk of node k      E_kk kron (H_k / 2)
    "network-er"  average risk error               (1/N) diag{H_k / 2}
    "node-mse"    squared error at node k          E_kk kron I_M
    "network-mse" average squared error            (1/N) I_{MN}
    """
    if hessians is not None:
        hessians = np.asarray(hessians, dtype=float)
        n_nodes = hessians.shape[0]
        dim = hessians.shape[1]
    if n_nodes is None or dim is None:
        raise ValueError("selector needs hessians or explicit sizes")
    if selector == "network-mse":
        return np.eye(n_nodes * dim) / n_nodes
    if selector == "network-er":
        return _block_diag(0.5 * hessians) / n_nodes
    if k is None:
        raise MissingNodeIndex(f"selector {selector!r} needs a node index")
    e_kk = np.zeros((n_nodes, n_nodes))
    e_kk[k, k] = 1.0
    if selector == "node-mse":
        return kron(e_kk, np.eye(dim))
    if selector == "node-er":
        return kron(e_kk, 0.5 * hessians[k])
    raise ValueError(f"unknown weighting selector {selector!r}")


# ---------------------------------------------------------------------------
# gradient-noise covariance
# ---------------------------------------------------------------------------

def estimate_rv(model, w_ref, c, env, n_draws=100_000, rng=None):
    """Monte-Carlo estimate of the stacked gradient-noise covariance.

    Draws i.i.d. per-node samples at the reference point, forms each node's
    gradient noise, stacks the c-weighted combinations, and averages outer
    products.  Returns (r_v, frobenius_stderr); the matrix is symmetrized.
    """
    if rng is None:
        raise ValueError("an explicit numpy Generator is required")
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    w_ref = np.asarray(w_ref, dtype=float)
    m = w_ref.shape[0]
    n_draws = int(n_draws)
    h, y = _draw_node_samples(env, rng, n_draws, n, m)
    g_all = stochastic_gradient(model, w_ref, h.reshape(-1, m), y.reshape(-1))
    v = g_all.reshape(n_draws, n, m)
    if isinstance(env, (MomentEnv, DiscreteEnv)):
        grad_true, _ = true_gradient(model, w_ref, env)
        v = v - grad_true
    else:
        # sampler handles: center on the pooled empirical mean
        v = v - v.reshape(-1, m).mean(axis=0)
    g = np.einsum("lk,nlm->nkm", c, v).reshape(n_draws, n * m)
    r_v = g.T @ g / n_draws
    r_v = 0.5 * (r_v + r_v.T)
    # chunked Frobenius-norm spread as the reported uncertainty
    n_chunks = 10
    idx = np.array_split(np.arange(n_draws), n_chunks)
    frobs = [
        np.linalg.norm(g[i].T @ g[i] / len(i)) for i in idx if len(i) > 0
    ]
    se = float(np.std(frobs, ddof=1) / np.sqrt(len(frobs)))
    return r_v, se


def exact_rv(c, env, model=None, w_ref=None):
    """Exact stacked noise covariance for analytic distribution handles.

    Nodes draw independently from the same distribution, so the stacked
    covariance is (C'C) kron R_v1 with R_v1 the single-node gradient-noise
    covariance at the optimizer.
    """
    c = np.asarray(c, dtype=float)
    if isinstance(env, MomentEnv):
        r_v1 = 4.0 * env.noise_variance * env.feature_covariance
    elif isinstance(env, DiscreteEnv):
        if model is None or w_ref is None:
            raise ValueError("discrete handles need the model and reference point")
        g = stochastic_gradient(model, np.asarray(w_ref, dtype=float),
                                env.features, env.labels)
        mean = env.probs @ g
        centered = g - mean
        r_v1 = (centered.T * env.probs) @ centered
    else:
        raise ValueError("exact covariance needs an analytic handle")
    return kron(c.T @ c, r_v1)


def _draw_node_samples(env, rng, n_draws, n_nodes, dim):
    if isinstance(env, MomentEnv):
        chol = np.linalg.cholesky(env.feature_covariance)
        h = rng.standard_normal((n_draws, n_nodes, dim)) @ chol.T
        z = np.sqrt(env.noise_variance) * rng.standard_normal((n_draws, n_nodes))
        y = np.einsum("nlm,m->nl", h, env.optimizer()) + z
        return h, y
    h, y = env.sample(rng, n_draws * n_nodes)
    return h.reshape(n_draws, n_nodes, dim), y.reshape(n_draws, n_nodes)


# ---------------------------------------------------------------------------
# scalar bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConstants:
    """Gradient-noise and combination-matrix constants feeding the bounds."""

    alpha: float        # relative-noise coefficient
    sigma_v2: float     # absolute-noise floor
    q_trace: float = 0.0
    c_norm1: float = 1.0   # max absolute column sum of C
    c_star: float = 1.0    # min absolute column sum of C

    def __post_init__(self):
        if min(self.alpha, self.sigma_v2, self.q_trace) < 0:
            raise ValueError("noise constants must be nonnegative")
        if self.c_star > self.c_norm1 + 1e-12:
            raise ValueError("min column sum exceeds max column sum")

    @classmethod
    def from_parts(cls, alpha, sigma_v2, q_covariance=None, c=None):
        q_trace = 0.0 if q_covariance is None else float(np.trace(np.atleast_2d(q_covariance)))
        if c is None:
            c_norm1 = c_star = 1.0
        else:
            col_sums = np.abs(np.asarray(c, dtype=float)).sum(axis=0)
            c_norm1 = float(col_sums.max())
            c_star = float(col_sums.min())
        return cls(alpha=float(alpha), sigma_v2=float(sigma_v2),
                   q_trace=q_trace, c_norm1=c_norm1, c_star=c_star)


def mu_limit_stationary(lam_min, lam_max, alpha) -> float:
    """Largest admissible step size for the stationary convergence result."""
    return min(
        2.0 * lam_max / (lam_max ** 2 + alpha),
        2.0 * lam_min / (lam_min ** 2 + alpha),
    )


def mu_limit_tracking(nc: NoiseConstants, lam_min, lam_max) -> float:
    """Largest admissible step size for the tracking bound."""
    return 2.0 * lam_min * nc.c_star / (nc.c_norm1 ** 2 * (lam_max ** 2 + nc.alpha))


@dataclass(frozen=True)
class EpsilonBound:
    value: float
    mu: float
    mu_limit: float
    in_regime: bool


def epsilon_bound(nc: NoiseConstants, lam_min, lam_max, mu) -> EpsilonBound:
    """Stationary long-run per-node excess-risk ceiling, linear in mu."""
    limit = mu_limit_stationary(lam_min, lam_max, nc.alpha)
    value = 0.25 * nc.sigma_v2 * (lam_max / lam_min) * mu
    return EpsilonBound(value=value, mu=mu, mu_limit=limit,
                        in_regime=0.0 < mu < limit)


def simplified_er(mu, r_v_k_trace, n_nodes) -> float:
    """Small-step steady-state excess risk: mu Tr(R_vk) / (4N)."""
    if r_v_k_trace < 0:
        raise ValueError("noise covariance trace must be nonnegative")
    return mu * r_v_k_trace / (4.0 * n_nodes)


@dataclass(frozen=True)
class TrackingBound:
    total: float
    steady_term: float
    tracking_term: float
    const_term: float
    mu: float
    mu_limit: float
    in_regime: bool


def tracking_bound(nc: NoiseConstants, lam_min, lam_max, mu, dim) -> TrackingBound:
    """Long-run excess-risk ceiling under a random-walk optimizer.

    steady term  ~ mu     (gradient noise)
    tracking term ~ 1/mu  (lag behind the walk)
    constant term         (irreducible per-tick drift)
    """
    limit = mu_limit_tracking(nc, lam_min, lam_max)
    denom = 4.0 * lam_min * nc.c_star
    steady = nc.c_norm1 ** 2 * nc.sigma_v2 * lam_max * mu / denom
    tracking = nc.q_trace * lam_max / (denom * mu)
    const = 0.5 * dim * lam_max * nc.q_trace
    return TrackingBound(
        total=steady + tracking + const,
        steady_term=steady,
        tracking_term=tracking,
        const_term=const,
        mu=mu,
        mu_limit=limit,
        in_regime=0.0 < mu < limit,
    )


def optimal_mu(nc: NoiseConstants) -> float:
    """Step size minimizing the mu + 1/mu trade-off of the tracking bound."""
    if nc.sigma_v2 <= 0.0 or nc.q_trace <= 0.0:
        raise ZeroNoise("optimal step size needs sigma_v2 > 0 and Tr(Q) > 0")
    return float(np.sqrt(nc.q_trace / (nc.c_norm1 ** 2 * nc.sigma_v2)))


@dataclass(frozen=True)
class BoundSeries:
    values: np.ndarray   # (horizon + 1,), index i is the tick-i bound
    beta: float
    limit: float         # geometric limit (inf when not contracting)
    contracting: bool


def recursion_bound_trace(nc: NoiseConstants, lam_min, lam_max, mu, w0_bound,
                          horizon) -> BoundSeries:
    """Per-tick worst-node mean-square-error bound series.

    beta = 1 - 2 mu lam_min C* + mu^2 (lam_max^2 + alpha) ||C||_1^2;
    the series is beta^i W0 + (||C||_1^2 sigma_v^2 mu^2 + Tr(Q)) sum beta^j.
    Emitted even when beta >= 1, flagged non-contracting.
    """
    beta = 1.0 - 2.0 * mu * lam_min * nc.c_star \
        + mu ** 2 * (lam_max ** 2 + nc.alpha) * nc.c_norm1 ** 2
    drive = nc.c_norm1 ** 2 * nc.sigma_v2 * mu ** 2 + nc.q_trace
    powers = beta ** np.arange(horizon + 1)
    geo = np.concatenate([[0.0], np.cumsum(powers[:-1])])
    values = powers * w0_bound + drive * geo
    contracting = beta < 1.0
    limit = drive / (1.0 - beta) if contracting else np.inf
    return BoundSeries(values=values, beta=float(beta), limit=float(limit),
                       contracting=bool(contracting))


# ---------------------------------------------------------------------------
# cooperation ordering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderingResult:
    er_atc: float
    er_cta: float
    er_ind: float
    holds: bool


def ordering_check(a, hessians, r_v, mu, slack=1e-12) -> OrderingResult:
    """Steady-state excess risk of ATC, CTA, and non-cooperative learners.

    Requires a doubly stochastic combination matrix and identical Hessians
    across nodes (common risk); the predicted ordering
    atc <= cta <= non-cooperative must hold.
    """
    a = np.asarray(a, dtype=float)
    hessians = np.asarray(hessians, dtype=float)
    if not check_doubly_stochastic(a, tol=1e-8):
        raise AssumptionViolation("combination matrix must be doubly stochastic")
    if np.abs(hessians - hessians[0]).max() > 1e-8:
        raise AssumptionViolation("nodes must share a common risk Hessian")
    n = a.shape[0]
    weighting = metric_weighting("network-er", hessians=hessians)
    values = {}
    for name in ("atc", "cta", "noncoop"):
        comb = preset_matrices(name if name != "noncoop" else "non-cooperative",
                               a, n_nodes=n)
        inputs = SteadyStateInputs(
            a1=comb.a1, a2=comb.a2, c=comb.c, hessians=hessians,
            r_v=np.asarray(r_v, dtype=float), mu=mu, weighting=weighting,
        )
        values[name] = steady_state_er(inputs)
    holds = (values["atc"] <= values["cta"] + slack
             and values["cta"] <= values["noncoop"] + slack)
    return OrderingResult(
        er_atc=values["atc"], er_cta=values["cta"], er_ind=values["noncoop"],
        holds=bool(holds),
    )
