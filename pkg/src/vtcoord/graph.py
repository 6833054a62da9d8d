"""Communication topologies and the Laplacian algebra used by the controller analysis.

The spectral decomposition is always computed on the symmetric normalized
Laplacian ``D^{-1/2} L D^{-1/2}`` and mapped to the random-walk Laplacian
``D^{-1} L`` by the similarity ``D^{-1/2}``.  For repeated eigenvalues any
orthonormal basis of the symmetric eigenspace is accepted; downstream code
only relies on the eigenvalues and on the constant zero-mode column.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

CONNECTIVITY_TOL = 1e-10


class TopologyError(ValueError):
    """Raised for malformed or unusable communication graphs."""


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph without self-loops.

    ``edges`` holds normalized pairs ``(i, j)`` with ``i < j``.
    """

    n_agents: int
    edges: frozenset
    kind: str = "custom"

    def __post_init__(self):
        if self.n_agents < 1:
            raise TopologyError("n_agents must be positive")
        for i, j in self.edges:
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise TopologyError(f"edge ({i}, {j}) has an index outside [0, {self.n_agents})")
            if i >= j:
                raise TopologyError(f"edge ({i}, {j}) is not normalized as i < j")

    @property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_agents, self.n_agents))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self) -> list[tuple[int, ...]]:
        """Sorted static neighbor tuple of every agent."""
        nbrs: list[set[int]] = [set() for _ in range(self.n_agents)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return [tuple(sorted(s)) for s in nbrs]

    def is_connected(self) -> bool:
        """Breadth-first reachability from agent 0."""
        nbrs = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for w in nbrs[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == self.n_agents

    def relabeled(self, perm: Sequence[int]) -> "Topology":
        """Graph with vertex ``v`` renamed to ``perm[v]``."""
        if sorted(perm) != list(range(self.n_agents)):
            raise TopologyError("perm must be a permutation of the agent indices")
        return Topology(self.n_agents, _normalize_edges((perm[i], perm[j]) for i, j in self.edges), self.kind)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "n_agents": self.n_agents,
            "edges": [list(e) for e in sorted(self.edges)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Topology":
        kind = obj.get("kind", "custom")
        if kind == "custom":
            edges = obj.get("edges")
            if edges is None:
                raise TopologyError("custom topology requires 'edges'")
            n = obj.get("n_agents")
            if n is None:
                n = 1 + max((max(e) for e in edges), default=-1)
            return build_topology(int(n), "custom", [tuple(e) for e in edges])
        if "n_agents" not in obj:
            raise TopologyError(f"topology of kind '{kind}' requires 'n_agents'")
        return build_topology(int(obj["n_agents"]), kind)


def _normalize_edges(pairs: Iterable[tuple[int, int]]) -> frozenset:
    out = set()
    for i, j in pairs:
        i, j = int(i), int(j)
        if i == j:
            raise TopologyError(f"self-loop at vertex {i}")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def build_topology(n: int, kind: str, edges: Sequence[tuple[int, int]] | None = None) -> Topology:
    """Build a ``complete``, ``path``, ``ring``, ``star`` or ``custom`` graph on ``n`` agents."""
    if n < 2:
        raise TopologyError("a topology needs at least 2 agents")
    if kind == "complete":
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    elif kind == "path":
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "ring":
        if n < 3:
            raise TopologyError("a ring needs at least 3 agents")
        pairs = [(i, (i + 1) % n) for i in range(n)]
    elif kind == "star":
        pairs = [(0, i) for i in range(1, n)]
    elif kind == "custom":
        if not edges:
            raise TopologyError("custom edge list is empty")
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) has an index outside [0, {n})")
        pairs = list(edges)
    else:
        raise TopologyError(f"unknown topology kind '{kind}'")
    return Topology(n, _normalize_edges(pairs), kind)


def random_connected_topology(n: int, rng: np.random.Generator, p_extra: float = 0.3) -> Topology:
    """Random spanning tree plus independent extra edges; always connected."""
    order = rng.permutation(n)
    pairs = []
    for pos in range(1, n):
        parent = order[rng.integers(0, pos)]
        pairs.append((order[pos], parent))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_extra:
                pairs.append((i, j))
    return Topology(n, _normalize_edges(pairs), "custom")


def laplacian_matrices(t: Topology) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(L, D, normalized L)``; isolated vertices are rejected."""
    adj = t.adjacency
    deg = adj.sum(axis=1)
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        raise TopologyError(f"vertex {int(isolated[0])} is isolated; the degree matrix is singular")
    D = np.diag(deg)
    L = D - adj
    s = 1.0 / np.sqrt(deg)
    L_norm = s[:, None] * L * s[None, :]
    # exact symmetry; the elementwise products above are already symmetric up to rounding
    L_norm = 0.5 * (L_norm + L_norm.T)
    return L, D, L_norm


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the random-walk Laplacian ``D^{-1} L``.

    ``eigenvectors[:, 0]`` is the all-ones vector paired with ``eigenvalues[0] == 0``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degrees: np.ndarray
    random_walk_laplacian: np.ndarray

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        """``V diag(lambda) V^{-1}``; equals ``random_walk_laplacian`` up to rounding."""
        V = self.eigenvectors
        return V @ np.diag(self.eigenvalues) @ np.linalg.inv(V)

    @property
    def inverse_eigenvectors(self) -> np.ndarray:
        # columns of D^{1/2} V are orthonormal up to the zero-mode rescaling
        return np.linalg.inv(self.eigenvectors)


def spectral_decomposition(t: Topology) -> SpectralDecomposition:
    L, D, L_norm = laplacian_matrices(t)
    deg = np.diag(D)
    lam, U = np.linalg.eigh(L_norm)
    order = np.argsort(lam, kind="stable")
    lam, U = lam[order], U[:, order]
    if t.n_agents > 1 and lam[1] <= CONNECTIVITY_TOL:
        raise TopologyError(f"graph is disconnected (second eigenvalue {lam[1]:.3e})")
    lam[0] = 0.0
    V = U / np.sqrt(deg)[:, None]
    V[:, 0] = 1.0
    for col in range(1, V.shape[1]):
        idx = np.argmax(np.abs(V[:, col]))
        if V[idx, col] < 0:
            V[:, col] = -V[:, col]
    return SpectralDecomposition(lam, V, deg, L / deg[:, None])


def is_connected_spectral(t: Topology) -> bool:
    """Connectivity via the second normalized-Laplacian eigenvalue."""
    try:
        _, _, L_norm = laplacian_matrices(t)
    except TopologyError:
        return False
    lam = np.linalg.eigvalsh(L_norm)
    return bool(lam[1] > CONNECTIVITY_TOL)


def realize_links(t: Topology, drop_probability: float, rng_seed: int, step_index: int) -> list[tuple[int, ...]]:
    """Neighbor sets after independent per-edge Bernoulli drops for one step.

    The draw depends only on ``(rng_seed, step_index)`` so any step can be
    replayed in isolation.
    """
    if drop_probability <= 0.0:
        return t.neighbors()
    edges = sorted(t.edges)
    rng = np.random.default_rng([int(rng_seed), int(step_index)])
    keep = rng.random(len(edges)) >= drop_probability
    nbrs: list[set[int]] = [set() for _ in range(t.n_agents)]
    for (i, j), k in zip(edges, keep):
        if k:
            nbrs[i].add(j)
            nbrs[j].add(i)
    return [tuple(sorted(s)) for s in nbrs]
