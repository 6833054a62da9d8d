"""Independent reference computations used by the tests."""
import itertools

import numpy as np

from vtcoord.graph import random_connected_topology
from vtcoord.mission import GammaBounds
from vtcoord.mpc import Consensus, MpcConfig, OrderedSeparation, Race


def _null_space(A, tol=1e-12):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vt = np.linalg.svd(A)
    rank = int((s > tol * max(1.0, s.max())).sum())
    return vt[rank:].T


def _opposing(K):
    # rows that can never be active together: u <= a with -u <= a, rate upper with rate lower
    pairs = set()
    for s in range(K):
        pairs.add((s, K + s))
        pairs.add((2 * K + s, 3 * K + s))
    return pairs


def brute_force_qp(H, g, G, b, tol=1e-9):
    """Global minimizer by enumerating working sets in order of size.

    Each candidate set is solved by null-space elimination; the first set
    whose solution is primal feasible with nonnegative multipliers is the
    optimum (the problem is strictly convex).
    """
    n = len(g)
    K = n
    bad = _opposing(K) if G.shape[0] == 4 * K else set()
    rows = range(G.shape[0])
    for size in range(0, n + 1):
        for W in itertools.combinations(rows, size):
            if any((i, j) in bad for i, j in itertools.combinations(W, 2)):
                continue
            A = G[list(W)]
            if size and np.linalg.matrix_rank(A) < size:
                continue
            x_p = np.linalg.lstsq(A, b[list(W)], rcond=None)[0] if size else np.zeros(n)
            Z = _null_space(A)
            if Z.shape[1]:
                y = np.linalg.solve(Z.T @ H @ Z, -Z.T @ (H @ x_p + g))
                x = x_p + Z @ y
            else:
                x = x_p
            if (G @ x - b).max() > tol:
                continue
            if size:
                lam = np.linalg.lstsq(A.T, -(H @ x + g), rcond=None)[0]
                if lam.min() < -tol:
                    continue
            return x
    raise AssertionError("no KKT point found")


def random_qp_instance(rng, K, n_neighbors=None):
    """Random local problem ``(cfg, init, neighbors, t_k, agent)`` where bounds often bind."""
    w = tuple(float(x) for x in np.exp(rng.uniform(np.log(0.1), np.log(20.0), 3)))
    h = float(rng.uniform(0.05, 0.5))
    gb = GammaBounds(float(rng.uniform(0.0, 0.9)), float(rng.uniform(1.1, 2.0)), float(rng.uniform(0.2, 3.0)))
    pick = rng.integers(0, 4)
    if pick == 0:
        cost = Consensus(True)
    elif pick == 1:
        cost = Consensus(False)
    elif pick == 2:
        cost = OrderedSeparation(-3.0, 0.0, float(rng.uniform(0.0, 20.0)))
    else:
        cost = Race((15.0, 25.0, 35.0, 45.0, 55.0, 65.0), 0.0, float(rng.uniform(0.0, 20.0)))
    cfg = MpcConfig(w, K, h, gb, cost=cost)
    n_nb = int(rng.integers(0, 5)) if n_neighbors is None else n_neighbors
    agent = 5
    nb = {j: rng.uniform(-6, 6, K + 1) for j in range(n_nb)}
    init = (float(rng.uniform(-4, 4)), float(rng.uniform(cfg.rate_min, cfg.rate_max)))
    return cfg, init, nb, float(rng.uniform(0, 10)), agent


def random_k1_consensus_instance(rng):
    """Horizon-1 normalized-consensus instance on a random connected graph with slack bounds.

    Returns ``(cfg, init, neighbors, mean_gap, alpha, rate_prev)``: the
    broadcast and shifted state are built from a previous step so the closed
    form can be evaluated independently.
    """
    n = int(rng.integers(2, 11))
    topo = random_connected_topology(n, rng)
    i = int(rng.integers(0, n))
    nbrs = topo.neighbors()[i]
    h = float(rng.uniform(0.01, 0.3))
    w = tuple(float(x) for x in np.exp(rng.uniform(np.log(0.1), np.log(10.0), 3)))
    cfg = MpcConfig(w, 1, h, GammaBounds(-1e6, 1e6, 1e9), cost=Consensus(True))
    prev_delta1 = rng.uniform(-3, 3, n)
    prev_rate1 = rng.uniform(-0.5, 0.5, n)
    alpha = float(rng.uniform(-0.2, 0.2))
    bundle = {j: np.array([0.0, prev_delta1[j]]) for j in nbrs}
    init = (prev_delta1[i] - alpha, prev_rate1[i])
    mean_gap = float(np.mean([prev_delta1[i] - prev_delta1[j] for j in nbrs]))
    return cfg, init, bundle, mean_gap, alpha, float(prev_rate1[i])
