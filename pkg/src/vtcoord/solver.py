"""Local problem solvers.

The horizon-``K`` problem is condensed onto the controls ``u[0..K-1]``:
predicted deviations are affine in ``u`` so the cost becomes
``0.5 u'Hu + g'u`` subject to ``G u <= b``.  Constraint rows are ordered

    [ u <= accel_max  (K) | -u <= accel_max (K) | rate <= rate_max (K) | -rate <= -rate_min (K) ]

with rate rows for slots ``tau = 1..K``.  A primal active-set method solves
the QP; ties in constraint selection go to the lowest row index so results
are reproducible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mpc import (
    Consensus,
    MpcConfig,
    NeighborBundle,
    OrderedSeparation,
    Race,
    in_window,
    predict,
)

KKT_TOL = 1e-9
FEAS_TOL = 1e-12
INIT_RATE_TOL = 1e-9
MAX_PATTERN_PASSES = 10


class SolverError(RuntimeError):
    """QP iteration cap exceeded; carries the best iterate."""

    def __init__(self, message: str, u: np.ndarray, residual: float):
        super().__init__(message)
        self.u = u
        self.residual = residual


class InfeasibleInitError(ValueError):
    """Initial rate deviation lies outside the admissible band."""


@dataclass(frozen=True)
class GainPair:
    a: float
    b: float
    b_pace: float


def gains(w1: float, w2: float, w3: float, h: float) -> GainPair:
    """Coefficients of the unconstrained horizon-1 control law."""
    if min(w1, w2, w3, h) <= 0:
        raise ValueError(f"weights and step must be positive, got w=({w1}, {w2}, {w3}), h={h}")
    den = w3 + w2 * h ** 2 + w1 * h ** 4 / 4.0
    a = w1 * h ** 2 / (2.0 * den)
    b = (w2 * h + w1 * h ** 3 / 2.0) / den
    b_pace = w2 * h / (w3 + w2 * h ** 2)
    return GainPair(a, b, b_pace)


def solve_k1_unconstrained(rate_prev: float, mean_gap: float | None, alpha: float, g: GainPair) -> float:
    """Closed-form horizon-1 control.

    ``mean_gap`` is the neighbor average of ``delta_i,1 - delta_j,1`` from the
    previous step; ``None`` means no neighbor was heard and only the
    pace-keeping and effort terms remain.
    """
    if mean_gap is None:
        return -g.b_pace * rate_prev
    return -g.a * mean_gap - g.b * rate_prev + g.a * alpha


@lru_cache(maxsize=64)
def prediction_maps(K: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``(M_delta, M_rate)`` with ``delta[1:] = c_delta + M_delta u`` and likewise for rate."""
    Md = np.zeros((K, K))
    Mr = np.zeros((K, K))
    for tau in range(1, K + 1):
        for s in range(tau):
            Md[tau - 1, s] = h * h * (tau - s - 0.5)
            Mr[tau - 1, s] = h
    Md.setflags(write=False)
    Mr.setflags(write=False)
    return Md, Mr


@dataclass
class CondensedQp:
    hessian: np.ndarray
    gradient: np.ndarray
    G: np.ndarray
    b: np.ndarray
    delta0: float
    rate0: float
    h: float

    @property
    def horizon(self) -> int:
        return len(self.gradient)

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.hessian @ u + self.gradient @ u)


def _coordination_targets(cfg: MpcConfig, agent: int, neighbors: NeighborBundle, t_k: float,
                          delta_lin: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-slot weights ``c`` and targets ``m`` with ``F = scale * sum_tau c (delta - m)^2 + const``.

    Piecewise terms are frozen at ``delta_lin`` (slots 1..K).
    """
    K = cfg.horizon
    if not neighbors:
        return np.zeros(K), np.zeros(K), 0.0
    ids = np.array(sorted(neighbors), dtype=int)
    nb = np.array([np.asarray(neighbors[j], dtype=float)[1:] for j in ids])
    n = len(ids)
    c = cfg.cost
    scale = 1.0 / n if c.normalize else 1.0
    if isinstance(c, Consensus):
        return np.full(K, float(n)), nb.mean(axis=0), scale
    ind = in_window(delta_lin, t_k, c.gamma1, c.gamma2)
    if isinstance(c, OrderedSeparation):
        offs = (agent - ids)[:, None] * c.delta_sep
        targets = nb - np.where(ind[None, :], offs, 0.0)
        return np.full(K, float(n)), targets.mean(axis=0), scale
    if isinstance(c, Race):
        # outside the window every neighbor pulls; inside only those ahead
        active = np.where(ind[None, :], nb > delta_lin[None, :], True)
        cnt = active.sum(axis=0).astype(float)
        tot = np.where(active, nb, 0.0).sum(axis=0)
        m = np.divide(tot, cnt, out=np.zeros(K), where=cnt > 0)
        return cnt, m, scale
    raise TypeError(f"unknown cost variant {c!r}")


def condense(cfg: MpcConfig, init: tuple[float, float], neighbors: NeighborBundle, t_k: float,
             agent: int = 0, u_lin: np.ndarray | None = None) -> CondensedQp:
    """Assemble the control-only QP for one agent at one step."""
    K, h = cfg.horizon, cfg.h
    w1, w2, w3 = cfg.weights
    delta0, rate0 = init
    if not (cfg.rate_min - INIT_RATE_TOL <= rate0 <= cfg.rate_max + INIT_RATE_TOL):
        raise InfeasibleInitError(
            f"agent {agent}: initial rate deviation {rate0:.6g} outside [{cfg.rate_min:.6g}, {cfg.rate_max:.6g}]"
        )
    Md, Mr = prediction_maps(K, float(h))
    taus = np.arange(1, K + 1)
    c_delta = delta0 + taus * h * rate0
    c_rate = np.full(K, rate0)
    delta_lin = c_delta if u_lin is None else c_delta + Md @ u_lin
    cw, m, scale = _coordination_targets(cfg, agent, neighbors, t_k, delta_lin)
    wc = w1 * scale * cw
    H = 2.0 * (Md.T @ (wc[:, None] * Md) + w2 * (Mr.T @ Mr) + w3 * np.eye(K))
    H = 0.5 * (H + H.T)
    grad = 2.0 * (Md.T @ (wc * (c_delta - m)) + w2 * (Mr.T @ c_rate))
    I = np.eye(K)
    G = np.vstack([I, -I, Mr, -Mr])
    amax = cfg.accel_max
    b = np.concatenate([
        np.full(K, amax),
        np.full(K, amax),
        cfg.rate_max - c_rate,
        c_rate - cfg.rate_min,
    ])
    return CondensedQp(H, grad, G, b, float(delta0), float(rate0), float(h))


@dataclass
class QpResult:
    u: np.ndarray
    active: tuple
    multipliers: np.ndarray
    iterations: int
    kkt_residual: float


def _polish(H, g, G, b, W):
    """Minimizer and multipliers of the QP with rows ``W`` held as equalities."""
    n = H.shape[0]
    if not W:
        return np.linalg.solve(H, -g), np.zeros(0)
    A = G[W]
    m = len(W)
    KKT = np.zeros((n + m, n + m))
    KKT[:n, :n] = H
    KKT[:n, n:] = A.T
    KKT[n:, :n] = A
    rhs = np.concatenate([-g, b[W]])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _independent(G, W, i) -> bool:
    """Whether row ``i`` is linearly independent of the working rows."""
    if not W:
        return True
    A = G[W + [i]]
    return np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, np.abs(A).max())) == len(W) + 1


def kkt_residual(H, g, G, b, u, W, lam) -> float:
    """Largest KKT violation.

    Stationarity is measured relative to ``max(1, |g|_inf)`` and
    complementarity relative to ``max(1, |lam|_inf)``; primal and dual
    feasibility are absolute.
    """
    stat = H @ u + g
    if W:
        stat = stat + G[W].T @ lam
    slack = G @ u - b
    res = [np.abs(stat).max() / max(1.0, np.abs(g).max()), max(0.0, slack.max())]
    if W:
        res.append(max(0.0, -lam.min()))
        res.append(np.abs(lam * slack[W]).max() / max(1.0, np.abs(lam).max()))
    return float(max(res))


def _solve_scalar(H, g, G, b, x, tolerance) -> QpResult:
    """Horizon-1 shortcut: clip the stationary point at the first blocking row.

    Gives the same iterate, working set and multiplier as the general loop.
    """
    target = -g[0] / H[0, 0]
    p = target - x[0]
    if abs(p) > 1e-10 * max(1.0, abs(x[0])):
        Gp = G[:, 0] * p
        slack = np.maximum(b - G[:, 0] * x[0], 0.0)
        cand = [i for i in np.flatnonzero(Gp > 1e-12 * abs(p)) if slack[i] < Gp[i]]
        if cand:
            i = min(cand, key=lambda i: (slack[i] / Gp[i], i))
            u = x + slack[i] / Gp[i] * np.array([p])
            lam = np.array([-(H[0, 0] * u[0] + g[0]) / G[i, 0]])
            return QpResult(u, (int(i),), lam, 2, kkt_residual(H, g, G, b, u, [int(i)], lam))
    u = np.array([target])
    return QpResult(u, (), np.zeros(0), 1, kkt_residual(H, g, G, b, u, [], np.zeros(0)))


def solve_qp(qp: CondensedQp, tolerance: float = KKT_TOL, max_iter: int | None = None,
             x0: np.ndarray | None = None) -> QpResult:
    """Primal active-set method for a strictly convex QP with a feasible start.

    Starts from ``x0`` (default ``u = 0``, feasible whenever the initial rate
    is admissible) with an empty working set.  Each iteration moves toward the
    exact minimizer on the current working set; the first blocking row (lowest
    index on ties) is added, otherwise the row with the most negative
    multiplier (lowest index on ties) is dropped.
    """
    H, g, G, b = qp.hessian, qp.gradient, qp.G, qp.b
    n = len(g)
    if max_iter is None:
        max_iter = 100 * n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if n == 1:
        return _solve_scalar(H, g, G, b, x, tolerance)
    W: list[int] = []
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        target, lam = _polish(H, g, G, b, W)
        p = target - x
        pn = np.abs(p).max()
        best, block = 1.0, -1
        if pn > 1e-10 * max(1.0, np.abs(x).max()):
            Gp = G @ p
            slack = np.maximum(b - G @ x, 0.0)
            cand = [i for i in np.flatnonzero(Gp > 1e-12 * pn) if i not in W and slack[i] < Gp[i]]
            # blocking rows in ratio order, lowest index on ties
            for i in sorted(cand, key=lambda i: (slack[i] / Gp[i], i)):
                if _independent(G, W, i):
                    best, block = slack[i] / Gp[i], int(i)
                    break
        if block >= 0:
            x = x + best * p
            W.append(block)
            continue
        x = target
        if not W or lam.min() >= -tolerance:
            res = kkt_residual(H, g, G, b, x, W, lam)
            order = np.argsort(W, kind="stable")
            return QpResult(x, tuple(int(W[i]) for i in order), lam[order] if W else lam, it, res)
        lo = lam.min()
        j = min(W[i] for i in range(len(W)) if lam[i] == lo)
        W.remove(j)
    res = kkt_residual(H, g, G, b, x, W, lam if len(lam) == len(W) else np.zeros(len(W)))
    raise SolverError(f"active-set iteration cap {max_iter} exceeded (residual {res:.3e})", x, res)


@dataclass
class LocalSolution:
    u: np.ndarray
    delta: np.ndarray
    rate: np.ndarray
    active: tuple
    iterations: int
    passes: int
    kkt_residual: float
    solve_time: float = field(default=0.0, compare=False)


def solve_local(cfg: MpcConfig, init: tuple[float, float], neighbors: NeighborBundle, t_k: float,
                agent: int = 0, tolerance: float = KKT_TOL) -> LocalSolution:
    """Solve one agent's local problem.

    Piecewise cost terms (window indicator, ``max(0, .)``) are frozen at the
    zero-input prediction, solved, and re-frozen at the new solution until the
    pattern repeats (at most ``MAX_PATTERN_PASSES`` passes).
    """
    t0 = time.perf_counter()
    piecewise = not isinstance(cfg.cost, Consensus) and bool(neighbors)
    u_lin = None
    seen = []
    iters = 0
    passes = 0
    while True:
        passes += 1
        qp = condense(cfg, init, neighbors, t_k, agent, u_lin)
        res = solve_qp(qp, tolerance)
        iters += res.iterations
        if not piecewise or passes >= MAX_PATTERN_PASSES:
            break
        key = (qp.hessian.tobytes(), qp.gradient.tobytes())
        if key in seen:
            break
        seen.append(key)
        nxt = condense(cfg, init, neighbors, t_k, agent, res.u)
        if np.array_equal(nxt.hessian, qp.hessian) and np.array_equal(nxt.gradient, qp.gradient):
            break
        u_lin = res.u
    delta, rate = predict(init[0], init[1], res.u, cfg.h)
    return LocalSolution(res.u, delta, rate, res.active, iters, passes, res.kkt_residual,
                         time.perf_counter() - t0)
