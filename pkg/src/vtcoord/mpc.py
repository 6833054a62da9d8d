"""Deviation-state bookkeeping, local cost functions and the path-following correction.

Agent ``i`` works with deviation sequences ``delta[tau] = gamma(t_k + tau h) - (t_k + tau h)``
and ``rate[tau] = gamma_dot - 1`` for ``tau = 0..K`` plus controls ``u[0..K-1]``.
Neighbor information is a mapping ``j -> delta_j`` holding the sequence that
``j`` broadcast at the previous step.  Coordination terms compare slots
``tau = 1..K`` only; slot 0 is fixed by the initial condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .mission import GammaBounds

RECURSION_TOL = 1e-12

NeighborBundle = Mapping[int, np.ndarray]


def predict(delta0: float, rate0: float, u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Roll the double integrator forward under ``u``."""
    K = len(u)
    delta = np.empty(K + 1)
    rate = np.empty(K + 1)
    delta[0], rate[0] = delta0, rate0
    for tau in range(K):
        delta[tau + 1] = delta[tau] + h * rate[tau] + 0.5 * h * h * u[tau]
        rate[tau + 1] = rate[tau] + h * u[tau]
    return delta, rate


@dataclass
class AgentState:
    delta: np.ndarray
    rate: np.ndarray
    control: np.ndarray
    step: int = 0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        self.control = np.asarray(self.control, dtype=float)
        K = len(self.control)
        if len(self.delta) != K + 1 or len(self.rate) != K + 1:
            raise ValueError(
                f"sequence lengths must be K+1, K+1, K; got {len(self.delta)}, {len(self.rate)}, {K}"
            )

    @property
    def horizon(self) -> int:
        return len(self.control)

    def recursion_residual(self, h: float) -> float:
        d, r, u = self.delta, self.rate, self.control
        res_d = d[1:] - (d[:-1] + h * r[:-1] + 0.5 * h * h * u)
        res_r = r[1:] - (r[:-1] + h * u)
        return float(max(np.abs(res_d).max(initial=0.0), np.abs(res_r).max(initial=0.0)))


def bootstrap_state(gamma0: float, gamma_dot0: float, K: int, h: float) -> AgentState:
    """Zero-input prediction used before the first optimization."""
    delta, rate = predict(gamma0, gamma_dot0 - 1.0, np.zeros(K), h)
    return AgentState(delta, rate, np.zeros(K), step=0)


def shift_initialize(prev: AgentState, alpha: float) -> tuple[float, float]:
    """Initial condition for step ``k`` from the optimizer of step ``k-1``."""
    return float(prev.delta[1] - alpha), float(prev.rate[1])


def alpha_correction(reference_pos, reference_vel, actual_pos, beta: float, delta_reg: float) -> float:
    """Along-track projection of the path-following error, in seconds.

    Positive when the vehicle lags its reference, negative when it is ahead.
    """
    ref = np.asarray(reference_pos, dtype=float)
    vel = np.asarray(reference_vel, dtype=float)
    err = ref - np.asarray(actual_pos, dtype=float)
    return float(beta * err.dot(vel) / (np.linalg.norm(vel) + delta_reg))


@dataclass(frozen=True)
class Consensus:
    normalize: bool = True
    name: str = field(default="consensus", init=False)


@dataclass(frozen=True)
class OrderedSeparation:
    """Keep the separation ``(j - i) * delta_sep`` while inside ``[gamma1, gamma2]``."""

    delta_sep: float
    gamma1: float
    gamma2: float
    normalize: bool = False
    name: str = field(default="ordered", init=False)


@dataclass(frozen=True)
class Race:
    """Penalize every neighbor that is ahead while inside ``[gamma1, gamma2]``.

    ``tie_tolerance`` widens the exact-tie test of the priority term; 0 keeps
    exact floating equality.
    """

    psi: tuple
    gamma1: float
    gamma2: float
    normalize: bool = False
    tie_tolerance: float = 0.0
    name: str = field(default="race", init=False)

    def __post_init__(self):
        if len(set(self.psi)) != len(self.psi):
            raise ValueError("race priorities psi must be mutually distinct")


CostVariant = Union[Consensus, OrderedSeparation, Race]


@dataclass(frozen=True)
class MpcConfig:
    weights: tuple
    horizon: int
    h: float
    gamma_bounds: GammaBounds
    beta: float = 1.0
    delta_reg: float = 1e-6
    cost: CostVariant = Consensus()

    def __post_init__(self):
        if len(self.weights) != 3 or min(self.weights) <= 0:
            raise ValueError(f"weights must be three positive numbers, got {self.weights}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be an integer >= 1, got {self.horizon}")
        if not self.h > 0:
            raise ValueError(f"step h must be positive, got {self.h}")
        if not (self.beta > 0 and self.delta_reg > 0):
            raise ValueError("beta and delta_reg must be positive")

    @property
    def rate_min(self) -> float:
        return self.gamma_bounds.delta_rate_min

    @property
    def rate_max(self) -> float:
        return self.gamma_bounds.delta_rate_max

    @property
    def accel_max(self) -> float:
        return self.gamma_bounds.accel_max


def in_window(delta: np.ndarray, t_k: float, gamma1: float, gamma2: float) -> np.ndarray:
    """Indicator ``gamma1 <= delta + t_k <= gamma2`` per slot."""
    g = np.asarray(delta, dtype=float) + t_k
    return (g >= gamma1) & (g <= gamma2)


def _stack(neighbors: NeighborBundle) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array(sorted(neighbors), dtype=int)
    seqs = np.array([np.asarray(neighbors[j], dtype=float) for j in ids])
    return ids, seqs


def cost_consensus(delta: np.ndarray, neighbors: NeighborBundle, normalize: bool = True) -> float:
    if not neighbors:
        return 0.0
    _, nb = _stack(neighbors)
    d = np.asarray(delta, dtype=float)
    total = float(((d[1:] - nb[:, 1:]) ** 2).sum())
    return total / len(neighbors) if normalize else total


def cost_ordered(delta: np.ndarray, neighbors: NeighborBundle, agent: int, delta_sep: float,
                 gamma1: float, gamma2: float, t_k: float, normalize: bool = False) -> float:
    if not neighbors:
        return 0.0
    ids, nb = _stack(neighbors)
    d = np.asarray(delta, dtype=float)[1:]
    gap = d[None, :] - nb[:, 1:]
    ind = in_window(d, t_k, gamma1, gamma2)
    # (i - j) is the same for 0- and 1-based labels
    shifted = gap + (agent - ids)[:, None] * delta_sep
    total = float(np.where(ind[None, :], shifted ** 2, gap ** 2).sum())
    return total / len(neighbors) if normalize else total


def cost_race(delta: np.ndarray, neighbors: NeighborBundle, psi_i: float, gamma1: float, gamma2: float,
              t_k: float, normalize: bool = False, tie_tolerance: float = 0.0) -> float:
    if not neighbors:
        return 0.0
    _, nb = _stack(neighbors)
    d = np.asarray(delta, dtype=float)[1:]
    ahead = nb[:, 1:] - d[None, :]
    ind = in_window(d, t_k, gamma1, gamma2)
    if tie_tolerance > 0:
        tie = np.abs(ahead) <= tie_tolerance
    else:
        tie = ahead == 0.0
    inside = np.maximum(0.0, ahead) ** 2 + tie * psi_i
    total = float(np.where(ind[None, :], inside, ahead ** 2).sum())
    return total / len(neighbors) if normalize else total


def coordination_cost(delta: np.ndarray, neighbors: NeighborBundle, cfg: MpcConfig, agent: int, t_k: float) -> float:
    c = cfg.cost
    if isinstance(c, Consensus):
        return cost_consensus(delta, neighbors, c.normalize)
    if isinstance(c, OrderedSeparation):
        return cost_ordered(delta, neighbors, agent, c.delta_sep, c.gamma1, c.gamma2, t_k, c.normalize)
    if isinstance(c, Race):
        return cost_race(delta, neighbors, c.psi[agent], c.gamma1, c.gamma2, t_k, c.normalize, c.tie_tolerance)
    raise TypeError(f"unknown cost variant {c!r}")


def total_cost(z: AgentState, neighbors: NeighborBundle, cfg: MpcConfig, t_k: float, agent: int = 0) -> float:
    """Weighted sum of coordination, pace-keeping and effort terms."""
    w1, w2, w3 = cfg.weights
    F = coordination_cost(z.delta, neighbors, cfg, agent, t_k) if neighbors else 0.0
    return float(w1 * F + w2 * np.sum(z.rate[1:] ** 2) + w3 * np.sum(z.control ** 2))
