"""Per-node data streams and true-optimizer trajectories.

Every process owns two child random streams (training draws, evaluation
draws) derived from its seed, and emits data in fixed-size chunks so that a
given seed always yields a bit-identical stream no matter how the consumer
paces its reads.  Data at time i is drawn from the time-i distribution; all
nodes share that distribution, so the network-wide optimizer coincides with
every node's optimizer.

Processes:

* ``RandomWalkOptimizerStream`` -- linear-model labels y = h'w_i + z where
  the optimizer w_i performs a random walk with increment covariance Q
  (Q = 0 recovers the stationary case).  The exact optimizer trajectory is
  emitted with the data.
* ``GaussianPairStream``        -- two Gaussian classes N(+m_i, I) and
  N(-m_i, I) whose shared mean m_i performs a random walk; gradual concept
  drift with no closed-form optimizer.
* ``StaggerStream``             -- categorical attributes on the grid
  {0, 0.5, 1}^3 with rule-based labels that switch every 40 ticks
  (instantaneous concept drift), plus independent label-flip noise.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import TickBeyondHorizon
from .risk import DiscreteEnv, MomentEnv, SamplerEnv, batch_minimize

CHUNK_TICKS = 512

STAGGER_GRID = (0.0, 0.5, 1.0)
STAGGER_SEGMENT = 40
STAGGER_HORIZON = 120


@dataclass
class StreamChunk:
    """A contiguous run of ticks: per-node samples plus the optimizer path."""

    start_time: int            # time index of the first tick (1-based)
    features: np.ndarray       # (L, N, M)
    labels: np.ndarray         # (L, N)
    optimizers: np.ndarray | None  # (L, M) exact per-tick optimizer, if known

    @property
    def length(self) -> int:
        return self.features.shape[0]


class DriftProcess:
    """Base class wiring seeds and chunk bookkeeping."""

    kind = "base"

    def __init__(self, dim, n_nodes, seed):
        self.dim = int(dim)
        self.n_nodes = int(n_nodes)
        self.seed = seed
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        stream_ss, eval_ss = root.spawn(2)
        self._rng = np.random.Generator(np.random.PCG64(stream_ss))
        self._eval_rng = np.random.Generator(np.random.PCG64(eval_ss))
        self._next_time = 1

    # -- interface ----------------------------------------------------------

    def next_chunk(self) -> StreamChunk:
        start = self._next_time
        chunk = self._generate(start)
        self._next_time = start + chunk.length
        return chunk

    def chunks(self, horizon: int):
        """Yield chunks until `horizon` ticks have been produced."""
        produced = self._next_time - 1
        while produced < horizon:
            chunk = self.next_chunk()
            produced += chunk.length
            yield chunk

    def distribution(self, i: int):
        """Distribution handle for the time-i data (for risk evaluation)."""
        raise NotImplementedError

    def distribution_key(self, i: int):
        """Hashable key identifying the time-i distribution (for caching)."""
        return i

    def eval_batch(self, i: int, n: int):
        """Fresh evaluation samples from the time-i distribution.

        Drawn from a random stream independent of the training draws, so
        metric evaluation never perturbs trajectories.
        """
        raise NotImplementedError

    def _generate(self, start: int) -> StreamChunk:
        raise NotImplementedError


class RandomWalkOptimizerStream(DriftProcess):
    """Linear-model data whose generating vector follows a random walk."""

    kind = "random-walk-optimizer"

    def __init__(self, base, q_covariance, feature_covariance, noise_variance,
                 n_nodes, seed):
        base = np.asarray(base, dtype=float)
        super().__init__(base.shape[0], n_nodes, seed)
        self.q_covariance = np.zeros((self.dim, self.dim)) if q_covariance is None \
            else np.asarray(q_covariance, dtype=float)
        self.feature_covariance = np.asarray(feature_covariance, dtype=float)
        self.noise_variance = float(noise_variance)
        self._chol_rh = np.linalg.cholesky(self.feature_covariance)
        self._chol_q = _psd_cholesky(self.q_covariance)
        self._walking = bool(np.any(self.q_covariance != 0.0))
        self._w_path = [base]          # w at the end of each generated chunk
        self._opt_history = np.empty((0, self.dim))

    @property
    def q_trace(self) -> float:
        return float(np.trace(self.q_covariance))

    def _generate(self, start):
        length = CHUNK_TICKS
        n, m = self.n_nodes, self.dim
        if self._walking:
            q = self._rng.standard_normal((length, m)) @ self._chol_q.T
            wopt = self._w_path[-1] + np.cumsum(q, axis=0)
        else:
            wopt = np.broadcast_to(self._w_path[-1], (length, m)).copy()
        h = self._rng.standard_normal((length, n, m)) @ self._chol_rh.T
        z = np.sqrt(self.noise_variance) * self._rng.standard_normal((length, n))
        y = np.einsum("tnm,tm->tn", h, wopt) + z
        self._w_path.append(wopt[-1].copy())
        self._opt_history = np.concatenate([self._opt_history, wopt], axis=0)
        return StreamChunk(start, h, y, wopt)

    def optimizer_at(self, i: int) -> np.ndarray:
        if i == 0:
            return self._w_path[0]
        if i > self._opt_history.shape[0]:
            raise TickBeyondHorizon(f"tick {i} not generated yet")
        return self._opt_history[i - 1]

    def distribution(self, i: int) -> MomentEnv:
        w = self.optimizer_at(i)
        return MomentEnv(
            feature_covariance=self.feature_covariance,
            cross_covariance=self.feature_covariance @ w,
            noise_variance=self.noise_variance,
        )

    def eval_batch(self, i, n):
        w = self.optimizer_at(i)
        h = self._eval_rng.standard_normal((n, self.dim)) @ self._chol_rh.T
        y = h @ w + np.sqrt(self.noise_variance) * self._eval_rng.standard_normal(n)
        return h, y


class GaussianPairStream(DriftProcess):
    """Two-Gaussian classification stream with a randomly walking mean.

    Class labels are +/-1 with probability 1/2; features come from
    N(label * m_i, I_2); labels then flip independently with probability
    `label_noise`.  The mean m_i performs a random walk with increment
    covariance `mean_walk_cov`.
    """

    kind = "random-walk-mean"

    def __init__(self, mean_walk_cov, n_nodes, label_noise, seed,
                 mean0=(1.0, 1.0)):
        mean0 = np.asarray(mean0, dtype=float)
        super().__init__(mean0.shape[0], n_nodes, seed)
        self.mean_walk_cov = np.zeros((self.dim, self.dim)) if mean_walk_cov is None \
            else np.asarray(mean_walk_cov, dtype=float)
        self.label_noise = float(label_noise)
        self._chol_q = _psd_cholesky(self.mean_walk_cov)
        self._walking = bool(np.any(self.mean_walk_cov != 0.0))
        self._mean_path = [mean0]
        self._mean_history = np.empty((0, self.dim))

    def _generate(self, start):
        length = CHUNK_TICKS
        n, m = self.n_nodes, self.dim
        if self._walking:
            q = self._rng.standard_normal((length, m)) @ self._chol_q.T
            means = self._mean_path[-1] + np.cumsum(q, axis=0)
        else:
            means = np.broadcast_to(self._mean_path[-1], (length, m)).copy()
        cls = np.where(self._rng.random((length, n)) < 0.5, 1.0, -1.0)
        h = cls[:, :, None] * means[:, None, :] + self._rng.standard_normal((length, n, m))
        flips = self._rng.random((length, n)) < self.label_noise
        y = np.where(flips, -cls, cls)
        self._mean_path.append(means[-1].copy())
        self._mean_history = np.concatenate([self._mean_history, means], axis=0)
        return StreamChunk(start, h, y, None)

    def mean_at(self, i: int) -> np.ndarray:
        if i == 0:
            return self._mean_path[0]
        if i > self._mean_history.shape[0]:
            raise TickBeyondHorizon(f"tick {i} not generated yet")
        return self._mean_history[i - 1]

    def _draw(self, rng, n, mean):
        cls = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        h = cls[:, None] * mean[None, :] + rng.standard_normal((n, self.dim))
        flips = rng.random(n) < self.label_noise
        return h, np.where(flips, -cls, cls)

    def distribution(self, i: int) -> SamplerEnv:
        mean = self.mean_at(i)
        return SamplerEnv(
            draw=lambda rng, n: self._draw(rng, n, mean), dim=self.dim
        )

    def eval_batch(self, i, n):
        return self._draw(self._eval_rng, n, self.mean_at(i))


def stagger_concept(i: int, cycle: bool = False) -> int:
    """Active concept index (0, 1, 2) at 1-based tick i."""
    if i < 1:
        raise ValueError("time starts at 1")
    if not cycle and i > STAGGER_HORIZON:
        raise TickBeyondHorizon(
            f"tick {i} is past the {STAGGER_HORIZON}-tick concept schedule"
        )
    return ((i - 1) // STAGGER_SEGMENT) % 3


def stagger_rule(concept: int, features) -> np.ndarray:
    """Boolean concept rules on (color, shape, size) grid features."""
    h = np.atleast_2d(np.asarray(features, dtype=float))
    if concept == 0:
        out = (h[:, 0] == 1.0) & (h[:, 2] == 0.0)
    elif concept == 1:
        out = (h[:, 0] == 0.0) | (h[:, 1] == 0.5)
    elif concept == 2:
        out = (h[:, 2] == 0.5) | (h[:, 2] == 1.0)
    else:
        raise ValueError(f"no such concept {concept}")
    return out if np.ndim(features) > 1 else bool(out[0])


def stagger_support(concept: int, label_noise: float) -> DiscreteEnv:
    """Exact finite distribution of (features, label) under one concept."""
    grid = np.array(
        [[a, b, c] for a in STAGGER_GRID for b in STAGGER_GRID for c in STAGGER_GRID]
    )
    clean = np.where(stagger_rule(concept, grid), 1.0, -1.0)
    feats = np.concatenate([grid, grid], axis=0)
    labels = np.concatenate([clean, -clean])
    p_point = 1.0 / grid.shape[0]
    probs = np.concatenate(
        [np.full(grid.shape[0], p_point * (1.0 - label_noise)),
         np.full(grid.shape[0], p_point * label_noise)]
    )
    return DiscreteEnv(features=feats, labels=labels, probs=probs)


class StaggerStream(DriftProcess):
    """Instantaneous concept drift over categorical attribute rules."""

    kind = "stagger"

    def __init__(self, n_nodes, label_noise, seed, cycle=False):
        super().__init__(3, n_nodes, seed)
        self.label_noise = float(label_noise)
        self.cycle = bool(cycle)
        self._support_cache = {}

    def _generate(self, start):
        if not self.cycle and start > STAGGER_HORIZON:
            raise TickBeyondHorizon(
                f"tick {start} is past the {STAGGER_HORIZON}-tick concept schedule"
            )
        length = CHUNK_TICKS
        if not self.cycle:
            length = min(length, STAGGER_HORIZON - start + 1)
        n = self.n_nodes
        h = 0.5 * self._rng.integers(0, 3, size=(length, n, 3)).astype(float)
        flips = self._rng.random((length, n)) < self.label_noise
        y = np.empty((length, n))
        for t in range(length):
            concept = stagger_concept(start + t, self.cycle)
            clean = np.where(stagger_rule(concept, h[t]), 1.0, -1.0)
            y[t] = np.where(flips[t], -clean, clean)
        return StreamChunk(start, h, y, None)

    def distribution(self, i: int) -> DiscreteEnv:
        concept = stagger_concept(i, self.cycle)
        if concept not in self._support_cache:
            self._support_cache[concept] = stagger_support(concept, self.label_noise)
        return self._support_cache[concept]

    def distribution_key(self, i: int):
        return stagger_concept(i, self.cycle)

    def eval_batch(self, i, n):
        env = self.distribution(i)
        return env.sample(self._eval_rng, n)


class ReplayStream(DriftProcess):
    """Re-plays a stream previously dumped with `dump_stream`."""

    kind = "replay"

    def __init__(self, path):
        feats, labels, opts = [], [], []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                feats.append(rec["features"])
                labels.append(rec["labels"])
                opts.append(rec.get("optimizer"))
        h = np.asarray(feats, dtype=float)
        super().__init__(h.shape[2], h.shape[1], 0)
        self._features = h
        self._labels = np.asarray(labels, dtype=float)
        self._optimizers = None if opts[0] is None else np.asarray(opts, dtype=float)

    def _generate(self, start):
        total = self._features.shape[0]
        if start > total:
            raise TickBeyondHorizon(f"replay stream ends at tick {total}")
        stop = min(start - 1 + CHUNK_TICKS, total)
        sl = slice(start - 1, stop)
        opts = None if self._optimizers is None else self._optimizers[sl]
        return StreamChunk(start, self._features[sl], self._labels[sl], opts)

    def eval_batch(self, i, n):
        raise TickBeyondHorizon("replay streams carry no evaluation distribution")


class DatasetStream(DriftProcess):
    """Streams a fixed dataset, split evenly across nodes.

    Each node receives one sample per tick from its shard, cycling when the
    shard is exhausted.  The evaluation distribution is the empirical
    distribution of the whole dataset, so excess risk is measured against
    the dataset-wide optimizer.
    """

    kind = "dataset"

    def __init__(self, features, labels, n_nodes, seed, shuffle=True):
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        super().__init__(features.shape[1], n_nodes, seed)
        order = self._rng.permutation(labels.shape[0]) if shuffle \
            else np.arange(labels.shape[0])
        per = labels.shape[0] // n_nodes
        if per < 1:
            raise ValueError("fewer samples than nodes")
        keep = order[: per * n_nodes]
        self._features = features[keep].reshape(n_nodes, per, self.dim)
        self._labels = labels[keep].reshape(n_nodes, per)
        self._per_node = per
        self._env = DiscreteEnv(
            features=features[keep],
            labels=labels[keep],
            probs=np.full(per * n_nodes, 1.0 / (per * n_nodes)),
        )

    def _generate(self, start):
        length = CHUNK_TICKS
        idx = (np.arange(start - 1, start - 1 + length)) % self._per_node
        h = self._features[:, idx, :].transpose(1, 0, 2).copy()
        y = self._labels[:, idx].T.copy()
        return StreamChunk(start, h, y, None)

    def distribution(self, i: int) -> DiscreteEnv:
        return self._env

    def distribution_key(self, i: int):
        return 0

    def eval_batch(self, i, n):
        return self._env.sample(self._eval_rng, n)


def dump_stream(process: DriftProcess, horizon: int, path) -> None:
    """Write `horizon` ticks as line-delimited JSON records."""
    with open(path, "w") as fh:
        for chunk in process.chunks(horizon):
            stop = min(chunk.length, horizon - chunk.start_time + 1)
            for t in range(stop):
                rec = {
                    "i": chunk.start_time + t,
                    "features": chunk.features[t].tolist(),
                    "labels": chunk.labels[t].tolist(),
                    "optimizer": None if chunk.optimizers is None
                    else chunk.optimizers[t].tolist(),
                }
                fh.write(json.dumps(rec) + "\n")


def reference_optimizer(feature_history, label_history, model, tol=1e-8):
    """Pooled-sample reference optimizer.

    Stacks the supplied per-tick sample blocks (most recent window) and runs
    the deterministic batch minimizer; strong convexity makes the result
    independent of initialization.
    """
    h = np.concatenate([np.atleast_2d(f) for f in feature_history], axis=0)
    y = np.concatenate([np.atleast_1d(l) for l in label_history], axis=0)
    return batch_minimize(model, h, y, tol=tol)


def process_from_spec(spec: str, n_nodes: int, label_noise: float, seed,
                      dim: int = 2, base=None, feature_covariance=None,
                      noise_variance: float = 1.0):
    """Build a drift process from a CLI string.

    Accepts `stationary-gauss2d`, `rw-mean[:cov=V]`, `rw-opt[:trq=V]`,
    `stagger[:cycle=true|false]`, or `replay:<path>`.
    """
    name, _, rest = spec.partition(":")
    opts = {}
    if rest and name != "replay":
        for item in rest.split(":"):
            key, _, val = item.partition("=")
            opts[key] = val
    if name == "stationary-gauss2d":
        return GaussianPairStream(None, n_nodes, label_noise, seed)
    if name == "rw-mean":
        cov = float(opts.get("cov", 0.01)) * np.eye(2)
        return GaussianPairStream(cov, n_nodes, label_noise, seed)
    if name == "rw-opt":
        trq = float(opts.get("trq", 0.0))
        q = (trq / dim) * np.eye(dim)
        rh = np.eye(dim) if feature_covariance is None else feature_covariance
        w0 = np.ones(dim) if base is None else np.asarray(base, dtype=float)
        return RandomWalkOptimizerStream(w0, q, rh, noise_variance, n_nodes, seed)
    if name == "stagger":
        cycle = opts.get("cycle", "false").lower() == "true"
        return StaggerStream(n_nodes, label_noise, seed, cycle=cycle)
    if name == "replay":
        return ReplayStream(rest)
    raise ValueError(f"unknown drift process {spec!r}")


def _psd_cholesky(q: np.ndarray) -> np.ndarray:
    """Cholesky-like factor of a PSD matrix (handles the zero matrix)."""
    if not np.allclose(q, q.T):
        raise ValueError("covariance must be symmetric")
    if np.allclose(q, 0.0):
        return np.zeros_like(q)
    # eigenvalue factorization tolerates semidefiniteness
    vals, vecs = np.linalg.eigh(q)
    if vals.min() < -1e-12 * max(vals.max(), 1.0):
        raise ValueError("covariance must be positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))
