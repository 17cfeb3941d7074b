"""Network graphs and combination matrices for distributed learners.

A network is an undirected connected graph with mandatory self-loops; each
node combines information only from its neighborhood.  Information flow is
governed by a triple of nonnegative matrices (a1, a2, c): a1 and a2 are
left-stochastic (columns sum to one) and weight estimate exchange before and
after adaptation, c is right-stochastic (rows sum to one) and weights
gradient exchange.  Entries outside the neighborhood must be zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricAdjacency,
    DegenerateNeighborhood,
    DisconnectedGraph,
    StochasticityViolation,
)

STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class Network:
    """Undirected connected graph over n_nodes with self-loops."""

    adjacency: np.ndarray  # (N, N) bool, symmetric, True diagonal

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, k: int) -> np.ndarray:
        """Indices of the neighborhood of node k (includes k itself)."""
        return np.flatnonzero(self.adjacency[k])

    def degree(self, k: int) -> int:
        """Size of the neighborhood of node k, counting the self-loop."""
        return int(self.adjacency[k].sum())

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)


@dataclass(frozen=True)
class CombinationSet:
    """The matrix triple (a1, a2, c) driving one diffusion learner."""

    a1: np.ndarray
    a2: np.ndarray
    c: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.a1.shape[0]


def _bfs_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    queue = [0]
    seen[0] = True
    while queue:
        k = queue.pop()
        for j in np.flatnonzero(adj[k]):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def build_network(adjacency) -> Network:
    """Validate an adjacency relation and wrap it as a Network.

    Requires a symmetric boolean matrix; self-loops are forced on the
    diagonal.  Raises AsymmetricAdjacency or DisconnectedGraph.
    """
    adj = np.asarray(adjacency, dtype=bool).copy()
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise AsymmetricAdjacency(f"adjacency must be square, got shape {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise AsymmetricAdjacency("adjacency relation is not symmetric")
    np.fill_diagonal(adj, True)
    if not _bfs_connected(adj):
        raise DisconnectedGraph("network is not connected")
    adj.setflags(write=False)
    return Network(adjacency=adj)


def ring_network(n: int) -> Network:
    adj = np.eye(n, dtype=bool)
    for k in range(n):
        adj[k, (k + 1) % n] = True
        adj[k, (k - 1) % n] = True
    return build_network(adj)


def complete_network(n: int) -> Network:
    return build_network(np.ones((n, n), dtype=bool))


def random_geometric_network(n: int, radius: float, seed: int,
                             max_attempts: int = 100) -> Network:
    """Connected random geometric graph on the unit square.

    Nodes are placed uniformly at random and linked when within `radius`.
    Resamples (deterministically from `seed`) until connected.
    """
    for attempt in range(max_attempts):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        )
        pts = rng.random((n, 2))
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        adj = d2 <= radius * radius
        np.fill_diagonal(adj, True)
        if _bfs_connected(adj):
            return build_network(adj)
    raise DisconnectedGraph(
        f"no connected geometric graph found in {max_attempts} attempts "
        f"(n={n}, radius={radius}, seed={seed})"
    )


def load_edge_list(path, n_nodes=None) -> Network:
    """Read a `u v` per-line, 0-indexed edge list into a Network."""
    edges = []
    max_node = -1
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise AsymmetricAdjacency(
                    f"{path}:{line_no}: expected 'u v', got {line!r}"
                )
            u, v = int(parts[0]), int(parts[1])
            edges.append((u, v))
            max_node = max(max_node, u, v)
    n = n_nodes if n_nodes is not None else max_node + 1
    adj = np.eye(n, dtype=bool)
    for u, v in edges:
        adj[u, v] = True
        adj[v, u] = True
    return build_network(adj)


def network_from_spec(spec: str) -> Network:
    """Build a network from a CLI string.

    Accepts `ring:N`, `complete:N`, `random-geometric:N:radius:seed`, or a
    path to an edge-list file.
    """
    parts = spec.split(":")
    if parts[0] == "ring":
        return ring_network(int(parts[1]))
    if parts[0] == "complete":
        return complete_network(int(parts[1]))
    if parts[0] == "random-geometric":
        return random_geometric_network(int(parts[1]), float(parts[2]), int(parts[3]))
    return load_edge_list(spec)


def metropolis_weights(net: Network) -> np.ndarray:
    """Symmetric doubly stochastic combination matrix from node degrees.

    Off-diagonal weight between neighbors l and k is
    min(1/(|N_l|-1), 1/(|N_k|-1)); the diagonal absorbs the remainder.
    A single-node network yields the 1x1 identity.
    """
    n = net.n_nodes
    if n == 1:
        return np.ones((1, 1))
    deg = net.degrees()
    if np.any(deg < 2):
        raise DegenerateNeighborhood(
            "metropolis weights need every node to have a non-self neighbor"
        )
    inv = 1.0 / (deg - 1)
    a = np.minimum(inv[:, None], inv[None, :])
    a[~net.adjacency] = 0.0
    np.fill_diagonal(a, 0.0)
    np.fill_diagonal(a, 1.0 - a.sum(axis=0))
    return a


def check_doubly_stochastic(m, tol: float = STOCHASTIC_TOL) -> bool:
    """True iff entries are nonnegative and all row/column sums are 1."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if np.any(m < -tol):
        return False
    ok_rows = np.all(np.abs(m.sum(axis=1) - 1.0) <= tol)
    ok_cols = np.all(np.abs(m.sum(axis=0) - 1.0) <= tol)
    return bool(ok_rows and ok_cols)


def _check_left_stochastic(m: np.ndarray, name: str, tol: float) -> None:
    sums = m.sum(axis=0)
    if np.any(m < -tol) or np.any(np.abs(sums - 1.0) > tol):
        raise StochasticityViolation(name, "columns", np.round(sums, 6))


def _check_right_stochastic(m: np.ndarray, name: str, tol: float) -> None:
    sums = m.sum(axis=1)
    if np.any(m < -tol) or np.any(np.abs(sums - 1.0) > tol):
        raise StochasticityViolation(name, "rows", np.round(sums, 6))


def combination_set(a1, a2, c, tol: float = STOCHASTIC_TOL) -> CombinationSet:
    """Validate and freeze an explicit (a1, a2, c) triple."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_left_stochastic(a1, "a1", tol)
    _check_left_stochastic(a2, "a2", tol)
    _check_right_stochastic(c, "c", tol)
    for m in (a1, a2, c):
        m.setflags(write=False)
    return CombinationSet(a1=a1, a2=a2, c=c)


def preset_matrices(variant: str, a=None, *, n_nodes=None, c=None) -> CombinationSet:
    """Map a learner variant to its (a1, a2, c) triple.

    adapt-then-combine uses (I, A, C), combine-then-adapt uses (A, I, C),
    non-cooperative uses (I, I, I).  C defaults to the identity (no gradient
    exchange).  Pass all three matrices via `combination_set` for the general
    form.
    """
    variant = variant.lower()
    if variant in ("non-cooperative", "noncoop"):
        if n_nodes is None:
            if a is None:
                raise ValueError("non-cooperative preset needs n_nodes or a")
            n_nodes = np.asarray(a).shape[0]
        eye = np.eye(n_nodes)
        return combination_set(eye, eye, eye)
    if a is None:
        raise ValueError(f"variant {variant!r} needs a combination matrix")
    a = np.asarray(a, dtype=float)
    eye = np.eye(a.shape[0])
    cmat = eye if c is None else np.asarray(c, dtype=float)
    if variant == "atc":
        return combination_set(eye, a, cmat)
    if variant == "cta":
        return combination_set(a, eye, cmat)
    raise ValueError(f"unknown learner variant {variant!r}")


def check_neighborhood_support(net: Network, comb: CombinationSet) -> bool:
    """True iff every matrix in the triple vanishes outside neighborhoods."""
    outside = ~net.adjacency
    return not (
        np.any(comb.a1[outside] != 0.0)
        or np.any(comb.a2[outside] != 0.0)
        or np.any(comb.c[outside] != 0.0)
    )
