"""Synchronous-round simulation of the distributed controller.

Round ``k`` (``t_k = k h``): every agent measures its path-following error,
forms ``alpha``, shifts its previous optimizer, solves its local problem
against the sequences its neighbors broadcast in round ``k - 1`` and only then
are the new sequences exchanged.  Round 0 is the zero-input bootstrap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import Topology, realize_links
from .mission import DesiredTrajectory, GammaBounds, eval_trajectory, min_pairwise_distance
from .mpc import AgentState, MpcConfig, alpha_correction, bootstrap_state, shift_initialize
from .solver import InfeasibleInitError, SolverError, solve_local

DEFAULT_EPSILON = 0.01


class SimulationAborted(RuntimeError):
    """Solver failure or infeasible initial data; ``trace`` holds the completed rounds."""

    def __init__(self, message: str, trace: "SimTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Impulse:
    step: int
    agent: int
    along: float


@dataclass(frozen=True)
class DisturbanceModel:
    """``none``, ``synthetic`` (``alpha_i^k = amp_i exp(-nu k h)``) or ``tracker``.

    The tracker keeps a position error ``e_i`` that decays as ``exp(-nu h)``
    per step and receives along-track kicks from ``impulses``; ``alpha`` is
    then the projection of the error on the reference velocity.
    """

    kind: str = "none"
    d: float = 0.0
    nu: float = 1.0
    amplitudes: Optional[tuple] = None
    impulses: tuple = ()
    e0: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("none", "synthetic", "tracker"):
            raise ValueError(f"unknown disturbance kind '{self.kind}'")
        if self.kind != "none" and not self.nu > 0:
            raise ValueError(f"disturbance decay rate nu must be positive, got {self.nu}")
        if self.kind == "synthetic" and self.amplitudes is not None:
            if any(abs(x) > self.d for x in self.amplitudes):
                raise ValueError("synthetic amplitudes must not exceed d in magnitude")

    def synthetic_amplitudes(self, n: int) -> np.ndarray:
        if self.amplitudes is not None:
            if len(self.amplitudes) < n:
                raise ValueError(f"need {n} synthetic amplitudes, got {len(self.amplitudes)}")
            return np.asarray(self.amplitudes[:n], dtype=float)
        return self.d * np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])


@dataclass
class Scenario:
    name: str
    topology: Topology
    trajectories: list
    gamma_bounds: GammaBounds
    mpc: MpcConfig
    gamma0: np.ndarray
    gamma_dot0: np.ndarray
    T: float
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    drop_probability: float = 0.0
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    separation: float = 0.0
    corridor: Optional[tuple] = None
    source: Optional[dict] = None

    def __post_init__(self):
        n = self.topology.n_agents
        self.gamma0 = np.asarray(self.gamma0, dtype=float)
        self.gamma_dot0 = np.asarray(self.gamma_dot0, dtype=float)
        for label, v in (("initial.gamma0", self.gamma0), ("initial.gamma_dot0", self.gamma_dot0)):
            if v.shape != (n,):
                raise ValueError(f"{label}: expected {n} entries, got {v.size}")
        if len(self.trajectories) != n:
            raise ValueError(f"trajectories: expected {n} entries, got {len(self.trajectories)}")
        if (self.gamma0 < 0).any():
            raise ValueError("initial.gamma0: entries must be nonnegative")
        if abs(self.T / self.mpc.h - round(self.T / self.mpc.h)) > 1e-9 * max(1.0, self.T / self.mpc.h):
            raise ValueError(f"mission.T: {self.T} is not a multiple of h={self.mpc.h}")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("links.drop_probability: must lie in [0, 1]")

    @property
    def n_agents(self) -> int:
        return self.topology.n_agents

    @property
    def steps(self) -> int:
        return int(round(self.T / self.mpc.h))


class SimTrace:
    """Per-round, per-agent record; rows ``0..n_rounds-1`` are filled."""

    def __init__(self, n_agents: int, max_rounds: int, h: float):
        N, R = n_agents, max_rounds
        self.n_agents = N
        self.h = h
        self.n_rounds = 0
        self.t = np.zeros(R)
        self.delta0 = np.zeros((R, N))
        self.rate0 = np.zeros((R, N))
        self.delta1 = np.zeros((R, N))
        self.rate1 = np.zeros((R, N))
        self.u = np.zeros((R, N))
        self.alpha = np.zeros((R, N))
        self.gamma = np.zeros((R, N))
        self.ref = np.zeros((R, N, 3))
        self.act = np.zeros((R, N, 3))
        self.qp_iterations = np.zeros((R, N), dtype=int)
        self.solve_time = np.zeros((R, N))
        self.neighbors: list = []
        self.active_sets: list = []

    def append_round(self, t, delta0, rate0, delta1, rate1, u, alpha, ref, act, neighbors, iters, active, times):
        k = self.n_rounds
        if k >= len(self.t):
            raise IndexError("trace capacity exhausted")
        self.t[k] = t
        self.delta0[k] = delta0
        self.rate0[k] = rate0
        self.delta1[k] = delta1
        self.rate1[k] = rate1
        self.u[k] = u
        self.alpha[k] = alpha
        self.gamma[k] = np.asarray(delta0) + t
        self.ref[k] = ref
        self.act[k] = act
        self.qp_iterations[k] = iters
        self.solve_time[k] = times
        self.neighbors.append(list(neighbors))
        self.active_sets.append(list(active))
        self.n_rounds += 1

    def _sl(self, arr):
        return arr[: self.n_rounds]

    @property
    def times(self) -> np.ndarray:
        return self._sl(self.t)

    @property
    def max_gap(self) -> np.ndarray:
        d = self._sl(self.delta0)
        return d.max(axis=1) - d.min(axis=1)

    @property
    def max_rate(self) -> np.ndarray:
        return np.abs(self._sl(self.rate0)).max(axis=1)

    @property
    def min_separation(self) -> np.ndarray:
        return np.array([min_pairwise_distance(p) for p in self._sl(self.ref)])

    def any_active(self) -> bool:
        return any(len(a) > 0 for row in self.active_sets for a in row)

    def field(self, name: str) -> np.ndarray:
        return self._sl(getattr(self, name))


def kinematic_tracker_step(error: np.ndarray, reference: np.ndarray, nu: float, impulse: np.ndarray, h: float):
    """Advance the tracking error one step; returns ``(new_error, actual_position)``."""
    e = np.asarray(error, dtype=float) * math.exp(-nu * h) + np.asarray(impulse, dtype=float)
    return e, np.asarray(reference, dtype=float) + e


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def run(sc: Scenario, solver_tolerance: float = 1e-9) -> SimTrace:
    """Execute the mission; raises :class:`SimulationAborted` carrying the partial trace."""
    cfg = sc.mpc
    N, K, h = sc.n_agents, cfg.horizon, cfg.h
    steps = sc.steps
    trace = SimTrace(N, steps + 1, h)
    dist = sc.disturbance

    states = [bootstrap_state(sc.gamma0[i], sc.gamma_dot0[i], K, h) for i in range(N)]
    for i, s in enumerate(states):
        r1 = s.rate[1]
        if not (cfg.rate_min <= r1 <= cfg.rate_max):
            raise SimulationAborted(
                f"agent {i}: initial predicted rate deviation {r1:.6g} outside "
                f"[{cfg.rate_min:.6g}, {cfg.rate_max:.6g}]", trace)

    err = np.zeros((N, 3))
    impulses: dict[int, list[Impulse]] = {}
    if dist.kind == "tracker":
        for imp in dist.impulses:
            impulses.setdefault(imp.step, []).append(imp)
    amps = dist.synthetic_amplitudes(N) if dist.kind == "synthetic" else None

    def positions(gammas, errors):
        ref = np.empty((N, 3))
        for i in range(N):
            ref[i] = eval_trajectory(sc.trajectories[i], gammas[i])[0]
        return ref, ref + errors

    if dist.kind == "tracker" and dist.e0 is not None:
        for i in range(N):
            _, v, _ = eval_trajectory(sc.trajectories[i], sc.gamma0[i])
            err[i] = dist.e0[i] * _unit(v)
    ref0, act0 = positions(sc.gamma0, err)
    static = sc.topology.neighbors()
    trace.append_round(
        0.0, [s.delta[0] for s in states], [s.rate[0] for s in states],
        [s.delta[1] for s in states], [s.rate[1] for s in states],
        np.zeros(N), np.zeros(N), ref0, act0, static, np.zeros(N, dtype=int), [()] * N, np.zeros(N),
    )

    broadcast = [s.delta.copy() for s in states]
    for k in range(1, steps + 1):
        t_k = k * h
        nbrs = realize_links(sc.topology, sc.drop_probability, sc.seed, k)
        alpha = np.zeros(N)
        act = np.zeros((N, 3))
        if dist.kind == "synthetic":
            alpha = amps * math.exp(-dist.nu * k * h)
        elif dist.kind == "tracker":
            kicks = impulses.get(k, [])
            for i in range(N):
                g_pre = states[i].delta[1] + t_k
                ref_i, vel, _ = eval_trajectory(sc.trajectories[i], g_pre)
                vel = vel * (1.0 + states[i].rate[1])
                kick = np.zeros(3)
                for imp in kicks:
                    if imp.agent == i:
                        kick = kick + imp.along * _unit(vel)
                err[i], act[i] = kinematic_tracker_step(err[i], ref_i, dist.nu, kick, h)
                alpha[i] = alpha_correction(ref_i, vel, act[i], cfg.beta, cfg.delta_reg)
        new_states = []
        row = {"d0": np.zeros(N), "r0": np.zeros(N), "iters": np.zeros(N, dtype=int), "times": np.zeros(N)}
        active = []
        for i in range(N):
            init = shift_initialize(states[i], alpha[i])
            bundle = {j: broadcast[j] for j in nbrs[i]}
            try:
                sol = solve_local(cfg, init, bundle, t_k, i, solver_tolerance)
            except (SolverError, InfeasibleInitError) as exc:
                raise SimulationAborted(f"round {k}, agent {i}: {exc}", trace) from exc
            new_states.append(AgentState(sol.delta, sol.rate, sol.u, k))
            row["d0"][i], row["r0"][i] = init
            row["iters"][i] = sol.iterations
            row["times"][i] = sol.solve_time
            active.append(sol.active)
        gam = row["d0"] + t_k
        ref, act_default = positions(gam, err if dist.kind == "tracker" else np.zeros((N, 3)))
        if dist.kind != "tracker":
            act = act_default
        trace.append_round(
            t_k, row["d0"], row["r0"],
            [s.delta[1] for s in new_states], [s.rate[1] for s in new_states],
            [s.control[0] for s in new_states], alpha, ref, act, nbrs, row["iters"], active, row["times"],
        )
        states = new_states
        broadcast = [s.delta.copy() for s in states]
    return trace


def consensus_time(trace: SimTrace, epsilon: float = DEFAULT_EPSILON, start: int = 0) -> Optional[float]:
    """First recorded time from which gaps and rate deviations stay within ``epsilon``.

    Only rounds ``start..`` are considered.
    """
    gap = trace.max_gap[start:]
    rate = trace.max_rate[start:]
    ok = (gap <= epsilon) & (rate <= epsilon)
    if ok.size == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    first = 0 if bad.size == 0 else int(bad[-1]) + 1
    return float(trace.times[start + first])


@dataclass
class CorridorMetrics:
    passage_order: list
    min_distance: float
    min_distance_corridor: float
    collision: bool
    collision_count: int
    post_corridor_consensus_time: Optional[float]


def corridor_metrics(trace: SimTrace, entry: float, exit: float, separation: float,
                     epsilon: float = DEFAULT_EPSILON, release: Optional[float] = None) -> CorridorMetrics:
    """Passage order, separation and collisions from a corridor run (reference positions).

    ``release`` is the virtual time after which every agent is back to plain
    consensus (defaults to ``exit``); post-corridor consensus is measured from
    the first round where all agents are past it.
    """
    gam = trace.field("gamma")
    N = trace.n_agents
    first_cross = []
    for i in range(N):
        idx = np.flatnonzero(gam[:, i] >= entry)
        first_cross.append(idx[0] if idx.size else math.inf)
    order = sorted(range(N), key=lambda i: (first_cross[i], i))
    ref = trace.field("ref")
    if N < 2:
        return CorridorMetrics(order, math.inf, math.inf, False, 0, consensus_time(trace, epsilon))
    iu = np.triu_indices(N, k=1)
    diff = ref[:, :, None, :] - ref[:, None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))[:, iu[0], iu[1]]
    inside = (gam >= entry) & (gam <= exit)
    both = inside[:, iu[0]] & inside[:, iu[1]]
    d_corr = np.where(both, dist, math.inf)
    below = dist < separation
    # a collision is a maximal run of rounds in which one pair stays below the threshold
    starts = below[1:] & ~below[:-1]
    count = int(starts.sum() + below[0].sum())
    rel = exit if release is None else release
    past = np.flatnonzero((gam > rel).all(axis=1))
    post = consensus_time(trace, epsilon, int(past[0])) if past.size else None
    return CorridorMetrics(order, float(dist.min()), float(d_corr.min()), bool(count > 0), count, post)
