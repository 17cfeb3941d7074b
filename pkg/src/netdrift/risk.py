"""Loss/risk models: regularized logistic regression and the delta-rule
square loss.

Both models expose per-sample losses, single-sample stochastic gradients,
and population-level quantities (true gradient, Hessian, Hessian eigenvalue
bounds) evaluated against a *distribution handle*.  Three handles are
supported:

* ``MomentEnv``      -- second-order moments of a linear-model data source
                        (square loss only); population quantities are exact.
* ``DiscreteEnv``    -- a finite support with probabilities; population
                        quantities are exact weighted sums for any loss.
* ``SamplerEnv``     -- an i.i.d. sampler; population quantities are
                        Monte-Carlo estimates with reported standard errors.

The batch minimizer is deterministic full-gradient descent with backtracking
line search; it replaces any external solver when a reference optimizer is
needed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    NoMomentsAvailable,
    NonConvergence,
    UnboundedFeatures,
)

DEFAULT_EVAL_DRAWS = 20_000


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticModel:
    """Regularized log-loss: (rho/2)||w||^2 + log(1 + exp(-y h'w)).

    `feature_norm_bound` is an upper bound on ||h||; it certifies the
    Hessian upper eigenvalue bound rho + bound^2/4 and must be supplied by
    configuration (or derived from a finite feature domain).
    """

    dim: int
    rho: float
    feature_norm_bound: float | None = None

    kind = "logistic"


@dataclass(frozen=True)
class SquareLossModel:
    """Delta-rule quadratic loss |y - h'w|^2."""

    dim: int

    kind = "square"


def model_from_spec(spec: str, dim: int):
    """Parse a CLI model string: `logistic:rho=5[:hmax=2]` or `square`."""
    parts = spec.split(":")
    if parts[0] == "square":
        return SquareLossModel(dim=dim)
    if parts[0] == "logistic":
        rho = None
        hmax = None
        for p in parts[1:]:
            key, _, val = p.partition("=")
            if key == "rho":
                rho = float(val)
            elif key == "hmax":
                hmax = float(val)
            else:
                raise ValueError(f"unknown logistic option {key!r}")
        if rho is None:
            raise ValueError("logistic model needs rho=<value>")
        return LogisticModel(dim=dim, rho=rho, feature_norm_bound=hmax)
    raise ValueError(f"unknown risk model {spec!r}")


# ---------------------------------------------------------------------------
# distribution handles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentEnv:
    """Linear-model moments: feature covariance R_h, cross-covariance
    r_hy = R_h w_opt, and label noise variance."""

    feature_covariance: np.ndarray  # (M, M)
    cross_covariance: np.ndarray    # (M,)
    noise_variance: float = 0.0

    @property
    def dim(self) -> int:
        return self.feature_covariance.shape[0]

    def optimizer(self) -> np.ndarray:
        """Solve the normal equations R_h w = r_hy."""
        return np.linalg.solve(self.feature_covariance, self.cross_covariance)


@dataclass(frozen=True)
class DiscreteEnv:
    """Finite data distribution: support points, labels, probabilities."""

    features: np.ndarray  # (K, M)
    labels: np.ndarray    # (K,)
    probs: np.ndarray     # (K,), sums to 1

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def sample(self, rng, n):
        idx = rng.choice(self.probs.shape[0], size=n, p=self.probs)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class SamplerEnv:
    """Wraps a draw function (rng, n) -> (features (n, M), labels (n,))."""

    draw: object
    dim: int
    feature_norm_bound: float | None = None

    def sample(self, rng, n):
        return self.draw(rng, n)


def gaussian_linear_env(feature_covariance, w_opt, noise_variance) -> MomentEnv:
    """Moments of the linear model y = h'w_opt + z with h ~ N(0, R_h)."""
    r_h = np.asarray(feature_covariance, dtype=float)
    w_opt = np.asarray(w_opt, dtype=float)
    return MomentEnv(
        feature_covariance=r_h,
        cross_covariance=r_h @ w_opt,
        noise_variance=float(noise_variance),
    )


def sample_gaussian_linear(rng, n, feature_chol, w_opt, noise_std):
    """Draw n (h, y) pairs from the linear model."""
    h = rng.standard_normal((n, w_opt.shape[0])) @ feature_chol.T
    y = h @ w_opt + noise_std * rng.standard_normal(n)
    return h, y


# ---------------------------------------------------------------------------
# pointwise loss and gradients
# ---------------------------------------------------------------------------

def _sigmoid(z):
    # stable logistic function for array input
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z):
    # log(1 + e^z) without overflow: z + log1p(e^-z) for z > 0
    out = np.empty_like(z, dtype=float)
    pos = z > 0
    out[pos] = z[pos] + np.log1p(np.exp(-z[pos]))
    out[~pos] = np.log1p(np.exp(z[~pos]))
    return out


def _check_dims(model, w, h):
    if w.shape[-1] != model.dim or h.shape[-1] != model.dim:
        raise DimensionMismatch(
            f"model dim {model.dim}, w dim {w.shape[-1]}, feature dim {h.shape[-1]}"
        )


def loss(model, w, features, labels):
    """Per-sample loss.  Accepts a single sample or a batch (n, M)."""
    w = np.asarray(w, dtype=float)
    h = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=float))
    _check_dims(model, w, h)
    margin = h @ w
    if model.kind == "square":
        vals = (y - margin) ** 2
    else:
        vals = 0.5 * model.rho * (w @ w) + _log1pexp(-y * margin)
    return vals if np.ndim(features) > 1 else float(vals[0])


def stochastic_gradient(model, w, features, labels):
    """Single-sample gradient of the loss; batches return (n, M)."""
    w = np.asarray(w, dtype=float)
    h = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=float))
    _check_dims(model, w, h)
    if model.kind == "square":
        g = -2.0 * (y - h @ w)[:, None] * h
    else:
        g = model.rho * w - (y * _sigmoid(-y * (h @ w)))[:, None] * h
    return g if np.ndim(features) > 1 else g[0]


def aligned_gradients(model, points, features, labels):
    """Gradient of sample k's loss at point k, for all k at once: (N, M)."""
    points = np.asarray(points, dtype=float)
    h = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    margins = (h * points).sum(axis=1)
    if model.kind == "square":
        return -2.0 * (y - margins)[:, None] * h
    sig = _sigmoid(-y * margins)
    return model.rho * points - (y * sig)[:, None] * h


def pairwise_gradients(model, points, features, labels):
    """Gradients of each sample's loss at each evaluation point.

    points (K, M), features (N, M) -> (N, K, M): entry [l, k] is the
    gradient of sample l's loss evaluated at point k.  This is the exchange
    pattern of gradient-sharing diffusion, where node k applies neighbor
    gradients at its own combination point.
    """
    points = np.asarray(points, dtype=float)
    h = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    margins = h @ points.T  # (N, K)
    if model.kind == "square":
        resid = y[:, None] - margins
        return -2.0 * resid[:, :, None] * h[:, None, :]
    sig = _sigmoid(-y[:, None] * margins)
    return model.rho * points[None, :, :] - (y[:, None] * sig)[:, :, None] * h[:, None, :]


# ---------------------------------------------------------------------------
# population quantities
# ---------------------------------------------------------------------------

def risk_value(model, w, env, n_draws=DEFAULT_EVAL_DRAWS, rng=None):
    """Population risk J(w) under the given distribution handle."""
    w = np.asarray(w, dtype=float)
    if isinstance(env, MomentEnv):
        if model.kind != "square":
            raise NoMomentsAvailable("moment handles only support the square loss")
        w_opt = env.optimizer()
        diff = w - w_opt
        return float(env.noise_variance + diff @ env.feature_covariance @ diff)
    if isinstance(env, DiscreteEnv):
        vals = loss(model, w, env.features, env.labels)
        return float(env.probs @ vals)
    rng = _require_rng(rng)
    h, y = env.sample(rng, n_draws)
    return float(np.mean(loss(model, w, h, y)))


def true_gradient(model, w, env, n_draws=DEFAULT_EVAL_DRAWS, rng=None):
    """Population gradient of the risk.

    Returns (gradient, standard_error); the standard error is None when the
    handle is exact and a scalar combined-over-coordinates value otherwise.
    """
    w = np.asarray(w, dtype=float)
    if isinstance(env, MomentEnv):
        if model.kind != "square":
            raise NoMomentsAvailable("moment handles only support the square loss")
        return 2.0 * (env.feature_covariance @ w - env.cross_covariance), None
    if isinstance(env, DiscreteEnv):
        g = stochastic_gradient(model, w, env.features, env.labels)
        return env.probs @ g, None
    rng = _require_rng(rng)
    h, y = env.sample(rng, n_draws)
    g = stochastic_gradient(model, w, h, y)
    se = float(np.sqrt(g.var(axis=0, ddof=1).sum() / n_draws))
    return g.mean(axis=0), se


def hessian(model, w, env, n_draws=DEFAULT_EVAL_DRAWS, rng=None):
    """Population Hessian of the risk at w.

    Square loss: 2 R_h exactly.  Logistic: rho I plus the expectation of
    h h' sigma'(h'w), with sigma' the label-independent logistic curvature;
    estimated by Monte-Carlo for sampler handles.
    """
    w = np.asarray(w, dtype=float)
    if model.kind == "square":
        if isinstance(env, MomentEnv):
            return 2.0 * env.feature_covariance
        if isinstance(env, DiscreteEnv):
            return 2.0 * (env.features.T * env.probs) @ env.features
        raise NoMomentsAvailable("square-loss hessian needs moments or support")
    if isinstance(env, MomentEnv):
        raise NoMomentsAvailable("logistic hessian cannot use linear-model moments")
    if isinstance(env, DiscreteEnv):
        h, p = env.features, env.probs
    else:
        rng = _require_rng(rng)
        h, _ = env.sample(rng, n_draws)
        p = np.full(h.shape[0], 1.0 / h.shape[0])
    z = h @ w
    sig = _sigmoid(z)
    curv = sig * (1.0 - sig)
    mat = (h.T * (p * curv)) @ h
    mat = 0.5 * (mat + mat.T)
    return model.rho * np.eye(model.dim) + mat


def hessian_bounds(model, env):
    """Certified eigenvalue bounds (lambda_min, lambda_max) of the Hessian.

    Logistic needs a feature-norm bound (from the model or the handle's
    finite support); the curvature of the logistic function never exceeds
    1/4, so lambda_max = rho + bound^2 / 4 and lambda_min = rho.
    """
    if model.kind == "square":
        if isinstance(env, MomentEnv):
            eig = np.linalg.eigvalsh(2.0 * env.feature_covariance)
        elif isinstance(env, DiscreteEnv):
            eig = np.linalg.eigvalsh(
                2.0 * (env.features.T * env.probs) @ env.features
            )
        else:
            raise NoMomentsAvailable("square-loss bounds need moments or support")
        return float(eig[0]), float(eig[-1])
    bound = model.feature_norm_bound
    if bound is None and isinstance(env, DiscreteEnv):
        bound = float(np.sqrt((env.features ** 2).sum(axis=1).max()))
    if bound is None and isinstance(env, SamplerEnv) and env.feature_norm_bound:
        bound = env.feature_norm_bound
    if bound is None:
        raise UnboundedFeatures(
            "logistic eigenvalue bounds need a feature-norm bound"
        )
    if model.rho <= 0:
        raise UnboundedFeatures("logistic lower bound requires rho > 0")
    return float(model.rho), float(model.rho + 0.25 * bound * bound)


# ---------------------------------------------------------------------------
# batch minimizer
# ---------------------------------------------------------------------------

def empirical_risk_and_gradient(model, w, features, labels, weights=None):
    """(Weighted) empirical risk and its gradient over a sample batch."""
    h = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    w = np.asarray(w, dtype=float)
    if weights is None:
        p = np.full(h.shape[0], 1.0 / h.shape[0])
    else:
        p = np.asarray(weights, dtype=float)
        p = p / p.sum()
    margin = h @ w
    if model.kind == "square":
        resid = y - margin
        value = float(p @ resid ** 2)
        grad = -2.0 * (p * resid) @ h
    else:
        z = -y * margin
        value = 0.5 * model.rho * float(w @ w) + float(p @ _log1pexp(z))
        grad = model.rho * w - ((p * y * _sigmoid(z)) @ h)
    return value, grad


def batch_minimize(model, features, labels, weights=None, tol=1e-8,
                   max_iter=100_000, w0=None):
    """Deterministic minimizer of the empirical regularized risk.

    Full-gradient descent with Armijo backtracking from w0 (default zero);
    stops when the gradient norm drops below `tol`.  Raises NonConvergence
    with the final gradient norm if the iteration cap is hit.
    """
    h = np.asarray(features, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0:
        raise DimensionMismatch("batch_minimize needs a nonempty (n, M) batch")
    w = np.zeros(model.dim) if w0 is None else np.array(w0, dtype=float)
    value, grad = empirical_risk_and_gradient(model, w, features, labels, weights)
    step = 1.0
    for _ in range(int(max_iter)):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) <= tol:
            return w
        # backtracking: halve until Armijo decrease, then try growing again
        step = min(step * 2.0, 1e8)
        while True:
            trial = w - step * grad
            tval, tgrad = empirical_risk_and_gradient(
                model, trial, features, labels, weights
            )
            if tval <= value - 1e-4 * step * gnorm2:
                break
            if step < 1e-18:
                # float resolution exhausted; tol is below what the
                # objective can certify
                raise NonConvergence(
                    f"line search stalled at gradient norm "
                    f"{np.sqrt(gnorm2):.3e} (tol {tol:g})",
                    grad_norm=float(np.sqrt(gnorm2)),
                )
            step *= 0.5
        w, value, grad = trial, tval, tgrad
    raise NonConvergence(
        f"batch minimizer hit the {max_iter}-iteration cap "
        f"(gradient norm {np.linalg.norm(grad):.3e})",
        grad_norm=float(np.linalg.norm(grad)),
        iterations=int(max_iter),
    )


# ---------------------------------------------------------------------------
# gradient-noise constants for the linear/square-loss model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConstantsEstimate:
    alpha: float
    sigma_v2: float
    alpha_stderr: float = 0.0
    certified: bool = True


def adaline_noise_constants(env: MomentEnv, n_draws=200_000, rng=None,
                            feature_sampler=None):
    """Relative/absolute gradient-noise constants of the square-loss model.

    alpha is 4 E{ sigma_max(R_h - h h')^2 }, estimated by Monte-Carlo over
    the feature distribution (Gaussian with covariance R_h unless a sampler
    is supplied; standard error reported); sigma_v2 = 4 Tr(R_h) sigma_z^2 is
    exact.
    """
    if not isinstance(env, MomentEnv):
        raise NoMomentsAvailable("noise constants need linear-model moments")
    rng = _require_rng(rng)
    r_h = env.feature_covariance
    m = r_h.shape[0]
    if feature_sampler is not None:
        draws = feature_sampler(rng, int(n_draws))
    else:
        chol = np.linalg.cholesky(r_h)
        draws = rng.standard_normal((int(n_draws), m)) @ chol.T
    # sigma_max(R_h - h h') for each draw; M is small so direct eigh is fine
    outer = draws[:, :, None] * draws[:, None, :]
    diffs = r_h[None, :, :] - outer
    svals = np.abs(np.linalg.eigvalsh(diffs)).max(axis=1)
    vals = 4.0 * svals ** 2
    alpha = float(vals.mean())
    alpha_se = float(vals.std(ddof=1) / np.sqrt(vals.shape[0]))
    sigma_v2 = 4.0 * float(np.trace(r_h)) * env.noise_variance
    return NoiseConstantsEstimate(
        alpha=alpha, sigma_v2=sigma_v2, alpha_stderr=alpha_se, certified=True
    )


def estimate_noise_constants(model, env, w_ref, rng=None, n_points=20,
                             n_draws=20_000, radius=1.0):
    """Empirical (alpha, sigma_v2) fit for models without closed forms.

    Samples gradient-noise power at points around w_ref and least-squares
    fits E||v||^2 ~ alpha ||w_ref - w||^2 + sigma_v2.  Declared an estimate,
    not a certificate.
    """
    rng = _require_rng(rng)
    w_ref = np.asarray(w_ref, dtype=float)
    dist2 = np.empty(n_points)
    power = np.empty(n_points)
    for j in range(n_points):
        scale = radius * (j + 1) / n_points
        w = w_ref + scale * rng.standard_normal(w_ref.shape[0])
        g_true, _ = true_gradient(model, w, env, n_draws=n_draws, rng=rng)
        h, y = _draw_from(env, rng, n_draws)
        v = stochastic_gradient(model, w, h, y) - g_true
        dist2[j] = float(((w_ref - w) ** 2).sum())
        power[j] = float((v ** 2).sum(axis=1).mean())
    design = np.stack([dist2, np.ones(n_points)], axis=1)
    coef, *_ = np.linalg.lstsq(design, power, rcond=None)
    alpha = max(float(coef[0]), 0.0)
    sigma_v2 = max(float(coef[1]), 0.0)
    return NoiseConstantsEstimate(
        alpha=alpha, sigma_v2=sigma_v2, alpha_stderr=np.nan, certified=False
    )


def _draw_from(env, rng, n):
    if isinstance(env, MomentEnv):
        chol = np.linalg.cholesky(env.feature_covariance)
        w_opt = env.optimizer()
        return sample_gaussian_linear(rng, n, chol, w_opt,
                                      np.sqrt(env.noise_variance))
    return env.sample(rng, n)


def _require_rng(rng):
    if rng is None:
        raise ValueError("an explicit numpy Generator is required")
    return rng
