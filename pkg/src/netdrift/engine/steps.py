"""Single-tick learner updates.

The general diffusion update interleaves three stages: combine estimates
through a1, adapt against c-combined stochastic gradients evaluated at the
combined point, then combine the adapted estimates through a2.  The
adapt-then-combine, combine-then-adapt, and non-cooperative learners are the
(I, A, C), (A, I, C), and (I, I, I) instances of the same code path.  The
consensus learner differs in one essential way: its gradient is evaluated at
the node's previous estimate, not at the combined point.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import Divergence
from ..risk import aligned_gradients, pairwise_gradients, stochastic_gradient
from ..theory import NoiseConstants, mu_limit_stationary, mu_limit_tracking
from ..topology import CombinationSet

DIVERGENCE_LIMIT = 1e12

DIFFUSION_VARIANTS = ("general-diffusion", "atc", "cta", "non-cooperative")
ALL_VARIANTS = DIFFUSION_VARIANTS + ("consensus", "cfg", "tha")


@dataclass(frozen=True)
class LearnerSpec:
    """One learner's variant, matrices, and step-size policy."""

    name: str
    variant: str
    step_size: float
    combination: CombinationSet | None = None
    step_schedule: str = "constant"
    initial_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ALL_VARIANTS:
            raise ValueError(f"unknown learner variant {self.variant!r}")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.step_schedule not in ("constant", "inverse-sqrt"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")
        if self.step_schedule == "inverse-sqrt" and self.variant != "consensus":
            raise ValueError(
                "the diminishing schedule is reserved for the consensus learner"
            )
        if self.variant in DIFFUSION_VARIANTS + ("consensus",) and self.combination is None:
            raise ValueError(f"variant {self.variant!r} needs combination matrices")

    def step_size_at(self, i: int) -> float:
        """Step size applied during tick i (1-based)."""
        if self.step_schedule == "inverse-sqrt":
            return self.step_size / np.sqrt(i)
        return self.step_size


@dataclass
class NetworkState:
    """Per-node weights; a single row for centralized learners."""

    weights: np.ndarray  # (N, M) or (1, M)
    time: int = 0


def init_state(spec: LearnerSpec, n_nodes: int, dim: int) -> NetworkState:
    rows = 1 if spec.variant == "cfg" else n_nodes
    if spec.initial_weights is not None:
        w = np.array(spec.initial_weights, dtype=float).reshape(rows, dim)
    else:
        w = np.zeros((rows, dim))
    return NetworkState(weights=w, time=0)


def _is_identity(m: np.ndarray) -> bool:
    return np.array_equal(m, np.eye(m.shape[0]))


def _checked(weights: np.ndarray, time: int, mu: float) -> np.ndarray:
    bad = ~np.isfinite(weights) | (np.abs(weights) > DIVERGENCE_LIMIT)
    if bad.any():
        node = int(np.flatnonzero(bad.any(axis=1))[0])
        raise Divergence(node=node, time=time, step_size=mu)
    return weights


def diffusion_step(state: NetworkState, spec: LearnerSpec, model,
                   features, labels) -> NetworkState:
    """One combine / adapt / combine tick over all nodes.

    Gradients of neighbor samples are evaluated at the receiving node's
    combined point, so with c = I node k applies its own sample's gradient
    at phi_k.
    """
    i = state.time + 1
    mu = spec.step_size_at(i)
    comb = spec.combination
    w = state.weights
    phi = w if _is_identity(comb.a1) else comb.a1.T @ w
    if _is_identity(comb.c):
        grads = aligned_gradients(model, phi, features, labels)
        psi = phi - mu * grads
    else:
        g = pairwise_gradients(model, phi, features, labels)  # (l, k, m)
        psi = phi - mu * np.einsum("lk,lkm->km", comb.c, g)
    w_new = psi if _is_identity(comb.a2) else comb.a2.T @ psi
    return NetworkState(weights=_checked(w_new, i, mu), time=i)


def consensus_step(state: NetworkState, spec: LearnerSpec, model,
                   features, labels) -> NetworkState:
    """Combine neighbors' estimates while adapting against the gradient at
    the node's own previous estimate."""
    i = state.time + 1
    mu = spec.step_size_at(i)
    a = spec.combination.a1
    w = state.weights
    grads = aligned_gradients(model, w, features, labels)
    w_new = a.T @ w - mu * grads
    return NetworkState(weights=_checked(w_new, i, mu), time=i)


def cfg_step(state: NetworkState, spec: LearnerSpec, model,
             features, labels) -> NetworkState:
    """Centralized full-gradient baseline: average all node gradients at a
    single iterate."""
    i = state.time + 1
    mu = spec.step_size_at(i)
    w = state.weights[0]
    grads = stochastic_gradient(model, w, features, labels)  # (N, M)
    w_new = (w - mu * grads.mean(axis=0))[None, :]
    return NetworkState(weights=_checked(w_new, i, mu), time=i)


def tha_average(state: NetworkState) -> np.ndarray:
    """Arithmetic node average; a read-only observer of the trajectories."""
    return state.weights.mean(axis=0)


def step(state: NetworkState, spec: LearnerSpec, model, features, labels) -> NetworkState:
    if spec.variant in DIFFUSION_VARIANTS:
        return diffusion_step(state, spec, model, features, labels)
    if spec.variant == "consensus":
        return consensus_step(state, spec, model, features, labels)
    if spec.variant == "cfg":
        return cfg_step(state, spec, model, features, labels)
    if spec.variant == "tha":
        # averaging observes non-cooperative trajectories without feedback
        noncoop = LearnerSpec(
            name=spec.name, variant="non-cooperative",
            step_size=spec.step_size, combination=spec.combination,
        )
        return diffusion_step(state, noncoop, model, features, labels)
    raise ValueError(f"unknown learner variant {spec.variant!r}")


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    stationary_ok: bool
    tracking_ok: bool
    stationary_limit: float
    tracking_limit: float
    messages: tuple = ()


def stability_check(mu, lam_min, lam_max, noise: NoiseConstants) -> StabilityReport:
    """Advisory step-size check against both admissibility conditions.

    Evaluates the stationary-convergence and the tracking-bound step-size
    ceilings; a violation is reported but never blocks a run.
    """
    stat_limit = mu_limit_stationary(lam_min, lam_max, noise.alpha)
    track_limit = mu_limit_tracking(noise, lam_min, lam_max)
    stationary_ok = 0.0 < mu < stat_limit
    tracking_ok = 0.0 < mu < track_limit
    messages = []
    if not stationary_ok:
        messages.append(
            f"step size {mu:.4g} exceeds the stationary-convergence ceiling "
            f"{stat_limit:.4g}"
        )
    if not tracking_ok:
        messages.append(
            f"step size {mu:.4g} exceeds the tracking-bound ceiling "
            f"{track_limit:.4g}"
        )
    return StabilityReport(
        ok=stationary_ok and tracking_ok,
        stationary_ok=stationary_ok,
        tracking_ok=tracking_ok,
        stationary_limit=stat_limit,
        tracking_limit=track_limit,
        messages=tuple(messages),
    )
