"""Experiment orchestration.

One experiment repetition streams `horizon` ticks from a freshly seeded
drift process and steps every requested learner on the *same* per-tick
samples (paired comparison).  Repetition r draws its randomness from
SeedSequence(master_seed, spawn_key=(r,)), so repetitions can run
concurrently without changing any result; traces are folded in repetition
order regardless of completion order.

A square-loss run against a random-walk (or stationary) linear-model stream
with analytic metrics dispatches to the compiled/numpy window backends; all
other configurations take the generic per-tick path built on the step
functions.
"""

import hashlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..drift import RandomWalkOptimizerStream, StaggerStream, reference_optimizer
from ..errors import Divergence, ValidationError
from ..metrics import MetricTrace, accuracy, exact_excess_risk, excess_risk, squared_errors
from ..risk import DiscreteEnv, batch_minimize
from . import backend
from .codes import CFG, CONSENSUS, DIFFUSION, THA
from .steps import DIFFUSION_VARIANTS, LearnerSpec, init_state, step, tha_average


@dataclass
class RunPlan:
    """Fully resolved inputs for run_experiment."""

    model: object
    learners: list
    drift_factory: object          # SeedSequence -> DriftProcess
    horizon: int
    repetitions: int
    master_seed: int
    n_nodes: int
    eval_batch_size: int = 2000
    steady_window: float = 0.5
    roc_ticks: tuple = ()
    metrics: tuple = ("er",)       # subset of {"er", "mse", "accuracy"}
    exact_risk: bool | None = None  # None: use closed forms when available
    reference: str = "auto"        # "auto" | "pooled"
    reference_window: int = 1
    threads: int = 1
    track_sample_digest: bool = False

    def __post_init__(self):
        if self.repetitions < 1 or self.horizon < 1:
            raise ValidationError("repetitions and horizon must be >= 1")
        names = [l.name for l in self.learners]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate learner names: {names}")

    @property
    def window_ticks(self) -> int:
        return max(1, int(np.ceil(self.steady_window * self.horizon)))


@dataclass
class ExperimentResult:
    traces: dict
    backend: str
    metadata: dict = field(default_factory=dict)


def run_experiment(plan: RunPlan) -> ExperimentResult:
    traces = {
        spec.name: MetricTrace(
            variant=spec.name, horizon=plan.horizon,
            n_nodes=_metric_rows(spec, plan.n_nodes),
        )
        for spec in plan.learners
    }
    digests = {spec.name: hashlib.sha256() for spec in plan.learners}

    def fold(rep_records):
        for name, rec in rep_records.items():
            traces[name].add_rep(
                rec["series"], rec["node_series"], rec["window"], rec.get("roc")
            )
            if "digest" in rec:
                digests[name].update(rec["digest"])

    if plan.threads <= 1:
        for rep in range(plan.repetitions):
            fold(_run_rep(plan, rep))
    else:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            futures = [pool.submit(_run_rep, plan, rep) for rep in range(plan.repetitions)]
            for fut in futures:  # fold in repetition order
                fold(fut.result())

    metadata = {
        "master_seed": plan.master_seed,
        "horizon": plan.horizon,
        "repetitions": plan.repetitions,
        "n_nodes": plan.n_nodes,
        "learners": [spec.name for spec in plan.learners],
        "paired_sampling": True,
        "shared_eval_batches": True,
    }
    if plan.track_sample_digest:
        metadata["sample_digests"] = {
            name: h.hexdigest() for name, h in digests.items()
        }
    return ExperimentResult(traces=traces, backend=backend.backend_name(),
                            metadata=metadata)


def _metric_rows(spec: LearnerSpec, n_nodes: int) -> int:
    return 1 if spec.variant in ("cfg", "tha") else n_nodes


def _run_rep(plan: RunPlan, rep: int) -> dict:
    ss = np.random.SeedSequence(plan.master_seed, spawn_key=(rep,))
    proc = plan.drift_factory(ss)
    if _fast_path_ok(plan, proc):
        return _run_rep_fast(plan, proc)
    return _run_rep_generic(plan, proc)


def _fast_path_ok(plan: RunPlan, proc) -> bool:
    return (
        plan.model.kind == "square"
        and isinstance(proc, RandomWalkOptimizerStream)
        and plan.exact_risk is not False
        and not plan.roc_ticks
        and "accuracy" not in plan.metrics
        and not plan.track_sample_digest
        and all(spec.variant in DIFFUSION_VARIANTS + ("consensus", "cfg", "tha")
                for spec in plan.learners)
    )


# ---------------------------------------------------------------------------
# fast path: square loss against a linear-model stream, analytic metrics
# ---------------------------------------------------------------------------

_VARIANT_CODES = {v: DIFFUSION for v in DIFFUSION_VARIANTS}
_VARIANT_CODES.update({"consensus": CONSENSUS, "cfg": CFG, "tha": THA})


def _kernel_args(spec: LearnerSpec, n_nodes: int):
    eye = np.eye(n_nodes)
    if spec.combination is None:
        a1 = a2 = c = eye
    else:
        a1 = np.ascontiguousarray(spec.combination.a1)
        a2 = np.ascontiguousarray(spec.combination.a2)
        c = np.ascontiguousarray(spec.combination.c)
    return (
        _VARIANT_CODES[spec.variant], a1, a2, c,
        bool(np.array_equal(c, eye)),
        bool(np.array_equal(a1, eye)),
        bool(np.array_equal(a2, eye)),
    )


def _run_rep_fast(plan: RunPlan, proc) -> dict:
    n, m = plan.n_nodes, plan.model.dim
    horizon = plan.horizon
    r_h = np.ascontiguousarray(proc.feature_covariance)
    impl = backend.select_backend()
    states, outs, args = {}, {}, {}
    for spec in plan.learners:
        rows = _metric_rows(spec, n)
        states[spec.name] = np.ascontiguousarray(init_state(spec, n, m).weights)
        outs[spec.name] = {
            key: np.empty((horizon, rows)) for key in ("er", "pred", "filt")
        }
        args[spec.name] = _kernel_args(spec, n)

    done = 0
    while done < horizon:
        chunk = proc.next_chunk()
        length = min(chunk.length, horizon - done)
        feats = np.ascontiguousarray(chunk.features[:length])
        labels = np.ascontiguousarray(chunk.labels[:length])
        wopt = np.ascontiguousarray(chunk.optimizers[:length])
        ticks = np.arange(done + 1, done + length + 1, dtype=float)
        for spec in plan.learners:
            mu = (spec.step_size / np.sqrt(ticks)
                  if spec.step_schedule == "inverse-sqrt"
                  else np.full(length, spec.step_size))
            code, a1, a2, c, c_id, a1_id, a2_id = args[spec.name]
            out = outs[spec.name]
            fail = impl.run_square_window(
                code, states[spec.name], a1, a2, c, c_id, a1_id, a2_id,
                mu, feats, labels, wopt, r_h,
                out["er"][done:done + length],
                out["pred"][done:done + length],
                out["filt"][done:done + length],
            )
            if fail >= 0:
                w = states[spec.name]
                bad = ~np.isfinite(w) | (np.abs(w) > 1e12)
                node = int(np.flatnonzero(bad.any(axis=1))[0]) if bad.any() else 0
                raise Divergence(node=node, time=done + fail + 1,
                                 step_size=spec.step_size)
        done += length

    records = {}
    w_ticks = plan.window_ticks
    for spec in plan.learners:
        out = outs[spec.name]
        series = {
            "er_network": out["er"].mean(axis=1),
            "mse_pred": out["pred"].mean(axis=1),
            "mse_filt": out["filt"].mean(axis=1),
        }
        node_series = {
            "er_node": out["er"],
            "mse_pred_node": out["pred"],
            "mse_filt_node": out["filt"],
        }
        window = {
            "er_network": series["er_network"][-w_ticks:].mean(),
            "er_node": out["er"][-w_ticks:].mean(axis=0),
            "mse_pred": series["mse_pred"][-w_ticks:].mean(),
            "mse_filt": series["mse_filt"][-w_ticks:].mean(),
        }
        records[spec.name] = {
            "series": series, "node_series": node_series, "window": window,
        }
    return records


# ---------------------------------------------------------------------------
# generic path
# ---------------------------------------------------------------------------

def _resolve_exact(plan: RunPlan, proc) -> bool:
    if plan.exact_risk is not None:
        return plan.exact_risk
    if isinstance(proc, RandomWalkOptimizerStream):
        return plan.model.kind == "square"
    return isinstance(proc, StaggerStream)


def _run_rep_generic(plan: RunPlan, proc) -> dict:
    n, m = plan.n_nodes, plan.model.dim
    horizon = plan.horizon
    exact = _resolve_exact(plan, proc)
    want_mse = "mse" in plan.metrics
    want_acc = "accuracy" in plan.metrics
    want_er = "er" in plan.metrics
    need_eval = want_acc or (want_er and not exact) or bool(plan.roc_ticks)

    states = {spec.name: init_state(spec, n, m) for spec in plan.learners}
    rows = {spec.name: _metric_rows(spec, n) for spec in plan.learners}
    rec = {
        spec.name: {
            "series": {}, "node_series": {}, "window": {}, "roc": {},
        }
        for spec in plan.learners
    }
    buf = {
        spec.name: {
            "er": np.zeros((horizon, rows[spec.name])),
            "pred": np.zeros((horizon, rows[spec.name])),
            "filt": np.zeros((horizon, rows[spec.name])),
            "acc": np.zeros(horizon),
        }
        for spec in plan.learners
    }
    digests = {spec.name: hashlib.sha256() for spec in plan.learners} \
        if plan.track_sample_digest else None

    ref_cache = {}
    history = deque(maxlen=max(1, plan.reference_window))
    pooled = plan.reference == "pooled"

    done = 0
    while done < horizon:
        chunk = proc.next_chunk()
        length = min(chunk.length, horizon - done)
        for j in range(length):
            i = chunk.start_time + j
            feats = chunk.features[j]
            labels = chunk.labels[j]
            history.append((feats, labels))
            w_ref = _resolve_reference(plan, proc, chunk, j, i, pooled,
                                       ref_cache, history)
            env = proc.distribution(i) if exact else None
            if need_eval:
                eval_h, eval_y = proc.eval_batch(i, plan.eval_batch_size)
            for spec in plan.learners:
                name = spec.name
                state = states[name]
                w_eval = (tha_average(state)[None, :] if spec.variant == "tha"
                          else state.weights)
                b = buf[name]
                if want_er and w_ref is not None:
                    if exact:
                        b["er"][i - 1] = exact_excess_risk(
                            w_eval, w_ref, plan.model, env)
                    else:
                        per_node, _, _, _ = excess_risk(
                            w_eval, w_ref, plan.model, eval_h, eval_y)
                        b["er"][i - 1] = per_node
                if want_mse and w_ref is not None:
                    b["pred"][i - 1] = squared_errors(w_eval, w_ref)
                if want_acc:
                    acc = accuracy(w_eval, eval_h, eval_y)
                    b["acc"][i - 1] = float(np.mean(acc))
                if digests is not None:
                    digests[name].update(feats.tobytes())
                    digests[name].update(labels.tobytes())
                states[name] = step(state, spec, plan.model, feats, labels)
                if want_mse and w_ref is not None:
                    w_after = (tha_average(states[name])[None, :]
                               if spec.variant == "tha" else states[name].weights)
                    b["filt"][i - 1] = squared_errors(w_after, w_ref)
            if i in plan.roc_ticks:
                for spec in plan.learners:
                    w_after = (states[spec.name].weights[0]
                               if spec.variant == "cfg"
                               else tha_average(states[spec.name]))
                    rec[spec.name]["roc"][i] = (eval_h @ w_after, eval_y.copy())
        done += length

    w_ticks = plan.window_ticks
    for spec in plan.learners:
        name = spec.name
        b = buf[name]
        series, node_series, window = {}, {}, {}
        if want_er:
            series["er_network"] = b["er"].mean(axis=1)
            node_series["er_node"] = b["er"]
            window["er_network"] = series["er_network"][-w_ticks:].mean()
            window["er_node"] = b["er"][-w_ticks:].mean(axis=0)
        if want_mse:
            series["mse_pred"] = b["pred"].mean(axis=1)
            series["mse_filt"] = b["filt"].mean(axis=1)
            node_series["mse_pred_node"] = b["pred"]
            node_series["mse_filt_node"] = b["filt"]
            window["mse_pred"] = series["mse_pred"][-w_ticks:].mean()
            window["mse_filt"] = series["mse_filt"][-w_ticks:].mean()
        if want_acc:
            series["accuracy"] = b["acc"]
            window["accuracy"] = b["acc"][-w_ticks:].mean()
        rec[name]["series"] = series
        rec[name]["node_series"] = node_series
        rec[name]["window"] = window
        if digests is not None:
            rec[name]["digest"] = digests[name].digest()
    return rec


def _resolve_reference(plan, proc, chunk, j, i, pooled, ref_cache, history):
    """The time-i optimizer: exact when the stream knows it, else computed."""
    if not pooled:
        if chunk.optimizers is not None:
            return chunk.optimizers[j]
        if isinstance(proc, StaggerStream):
            key = proc.distribution_key(i)
            if key not in ref_cache:
                env = proc.distribution(i)
                ref_cache[key] = batch_minimize(
                    plan.model, env.features, env.labels, weights=env.probs,
                    tol=1e-9,
                )
            return ref_cache[key]
    if "er" in plan.metrics or "mse" in plan.metrics:
        feats = [f for f, _ in history]
        labels = [l for _, l in history]
        return reference_optimizer(feats, labels, plan.model, tol=1e-7)
    return None
