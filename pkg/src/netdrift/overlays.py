"""Assembles theory-predictor inputs from a resolved experiment.

All predictors are evaluated at the initial data distribution (the
stationary formulas assume it persists; the tracking bound additionally
consumes the optimizer-walk covariance).  Hessians, eigenvalue bounds, and
noise constants are exact where the distribution handle allows and declared
estimates otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .drift import RandomWalkOptimizerStream, StaggerStream
from .errors import UnboundedFeatures
from .risk import (
    DiscreteEnv,
    MomentEnv,
    adaline_noise_constants,
    batch_minimize,
    estimate_noise_constants,
    hessian,
    hessian_bounds,
)
from .theory import (
    NoiseConstants,
    SteadyStateInputs,
    epsilon_bound,
    estimate_rv,
    exact_rv,
    metric_weighting,
    optimal_mu,
    recursion_bound_trace,
    simplified_er,
    steady_state_er,
    tracking_bound,
)

CALIBRATION_DRAWS = 50_000


@dataclass
class TheoryContext:
    """Everything the closed-form predictors need, from one distribution."""

    model: object
    env: object
    w_ref: np.ndarray
    lam_min: float
    lam_max: float
    bounds_certified: bool
    alpha: float
    sigma_v2: float
    alpha_stderr: float
    noise_certified: bool
    q_covariance: np.ndarray | None
    n_nodes: int

    def noise_constants(self, c=None) -> NoiseConstants:
        return NoiseConstants.from_parts(
            self.alpha, self.sigma_v2, q_covariance=self.q_covariance, c=c
        )

    def hessians(self) -> np.ndarray:
        h = hessian(self.model, self.w_ref, self.env)
        return np.repeat(h[None, :, :], self.n_nodes, axis=0)


def build_context(plan, rng) -> TheoryContext:
    proc = plan.drift_factory(np.random.SeedSequence(plan.master_seed,
                                                     spawn_key=(plan.repetitions,)))
    start = 1 if isinstance(proc, StaggerStream) else 0
    env = proc.distribution(start)
    w_ref = _reference_for_env(plan.model, env, rng)
    try:
        lam_min, lam_max = hessian_bounds(plan.model, env)
        certified = True
    except UnboundedFeatures:
        # fall back to an empirical feature-norm cap, declared an estimate
        h, _ = env.sample(rng, CALIBRATION_DRAWS)
        cap = float(np.sqrt((h ** 2).sum(axis=1).max()))
        lam_min = plan.model.rho
        lam_max = plan.model.rho + 0.25 * cap * cap
        certified = False
    if plan.model.kind == "square" and isinstance(env, MomentEnv):
        est = adaline_noise_constants(env, rng=rng)
    else:
        est = estimate_noise_constants(plan.model, env, w_ref, rng=rng)
    q_cov = proc.q_covariance if isinstance(proc, RandomWalkOptimizerStream) else None
    return TheoryContext(
        model=plan.model, env=env, w_ref=w_ref,
        lam_min=lam_min, lam_max=lam_max, bounds_certified=certified,
        alpha=est.alpha, sigma_v2=est.sigma_v2, alpha_stderr=est.alpha_stderr,
        noise_certified=est.certified,
        q_covariance=q_cov, n_nodes=plan.n_nodes,
    )


def _reference_for_env(model, env, rng):
    if isinstance(env, MomentEnv):
        return env.optimizer()
    if isinstance(env, DiscreteEnv):
        return batch_minimize(model, env.features, env.labels,
                              weights=env.probs, tol=1e-10)
    h, y = env.sample(rng, CALIBRATION_DRAWS)
    return batch_minimize(model, h, y, tol=1e-7)


def steady_state_inputs(ctx: TheoryContext, comb, mu, rng, rv_draws=100_000,
                        rv_mode="estimated") -> SteadyStateInputs:
    hessians = ctx.hessians()
    if rv_mode == "exact":
        r_v = exact_rv(comb.c, ctx.env, model=ctx.model, w_ref=ctx.w_ref)
    else:
        r_v, _ = estimate_rv(ctx.model, ctx.w_ref, comb.c, ctx.env,
                             n_draws=rv_draws, rng=rng)
    return SteadyStateInputs(
        a1=comb.a1, a2=comb.a2, c=comb.c, hessians=hessians, r_v=r_v,
        mu=mu, weighting=metric_weighting("network-er", hessians=hessians),
    )


def evaluate_formula(formula, ctx: TheoryContext, spec, rng,
                     rv_draws=100_000, horizon=None, w0_bound=None) -> dict:
    """One predictor evaluated for a learner; JSON-ready result dict."""
    comb = spec.combination
    c = None if comb is None else comb.c
    nc = ctx.noise_constants(c=c)
    mu = spec.step_size
    tags = []
    if not ctx.bounds_certified:
        tags.append("eigen-bounds-estimated")
    if not ctx.noise_certified:
        tags.append("noise-constants-estimated")
    if formula == "steady-state-er":
        inputs = steady_state_inputs(ctx, comb, mu, rng, rv_draws=rv_draws)
        value = steady_state_er(inputs)
        return {"formula": formula, "value": value, "tags": tags}
    if formula == "simplified-er":
        r_v1 = exact_rv(np.eye(1), _single_node_env(ctx), model=ctx.model,
                        w_ref=ctx.w_ref) if _has_exact(ctx) else None
        if r_v1 is None:
            r_v_full, _ = estimate_rv(ctx.model, ctx.w_ref, np.eye(1), ctx.env,
                                      n_draws=rv_draws, rng=rng)
            trace = float(np.trace(r_v_full))
        else:
            trace = float(np.trace(r_v1))
        value = simplified_er(mu, trace, ctx.n_nodes)
        return {"formula": formula, "value": value,
                "rv_trace": trace, "tags": tags}
    if formula == "epsilon-bound":
        res = epsilon_bound(nc, ctx.lam_min, ctx.lam_max, mu)
        if not res.in_regime:
            tags.append("step-size-out-of-regime")
        return {"formula": formula, "value": res.value,
                "mu_limit": res.mu_limit, "in_regime": res.in_regime,
                "tags": tags}
    if formula == "tracking-bound":
        res = tracking_bound(nc, ctx.lam_min, ctx.lam_max, mu,
                             dim=ctx.model.dim)
        if not res.in_regime:
            tags.append("step-size-out-of-regime")
        return {"formula": formula, "value": res.total,
                "components": {"steady": res.steady_term,
                               "tracking": res.tracking_term,
                               "constant": res.const_term},
                "mu_limit": res.mu_limit, "in_regime": res.in_regime,
                "tags": tags}
    if formula == "optimal-mu":
        value = optimal_mu(nc)
        return {"formula": formula, "value": value, "tags": tags}
    if formula == "recursion-bound":
        horizon = horizon or 1000
        if w0_bound is None:
            w0_bound = float((ctx.w_ref ** 2).sum())
        series = recursion_bound_trace(nc, ctx.lam_min, ctx.lam_max, mu,
                                       w0_bound, horizon)
        if not series.contracting:
            tags.append("not-contracting")
        return {"formula": formula, "value": series.limit,
                "beta": series.beta, "contracting": series.contracting,
                "tags": tags, "series": series.values.tolist()}
    raise ValueError(f"unknown formula {formula!r}")


def _has_exact(ctx):
    return isinstance(ctx.env, (MomentEnv, DiscreteEnv))


def _single_node_env(ctx):
    return ctx.env
