"""Grid sweeps over horizon, agent count and step size."""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .report import timing
from .scenario import ScenarioError, scenario_from_dict
from .sim import SimulationAborted, consensus_time, run


@dataclass
class Cell:
    n_agents: Optional[int]
    horizon: Optional[int]
    h: Optional[float]
    status: str
    consensus_time: Optional[float] = None
    max_solve_time: Optional[float] = None
    mean_solve_time: Optional[float] = None
    wall_time: float = 0.0
    message: str = ""


def _overrides(n, K, h) -> list:
    out = []
    if n is not None:
        out.append(("topology.n_agents", n))
    if K is not None:
        out.append(("mpc.horizon", K))
    if h is not None:
        out.append(("mpc.h", h))
    return out


def run_cell(doc: dict, n=None, K=None, h=None, extra: Sequence = ()) -> Cell:
    t0 = time.perf_counter()
    try:
        sc = scenario_from_dict(doc, list(extra) + _overrides(n, K, h))
        tr = run(sc)
    except (ScenarioError, SimulationAborted, ValueError) as exc:
        return Cell(n, K, h, "failed", wall_time=time.perf_counter() - t0, message=str(exc))
    tm = timing(tr)
    return Cell(n, K, h, "ok", consensus_time(tr, sc.epsilon), tm["max_solve_time"], tm["mean_solve_time"],
                time.perf_counter() - t0)


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(doc: dict, horizons=None, n_agents=None, steps=None, workers: int = 1,
              extra: Sequence = ()) -> list[Cell]:
    """One simulation per grid point; a failing cell is recorded, not raised."""
    grid = list(itertools.product(n_agents or [None], horizons or [None], steps or [None]))
    args = [(doc, n, K, h, tuple(extra)) for n, K, h in grid]
    if workers <= 1:
        return [_run_cell_args(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, args))


@dataclass
class TrendCheck:
    name: str
    passed: bool
    detail: str


def check_trends(cells: Sequence[Cell]) -> list[TrendCheck]:
    """Horizon/agent-count trends over an (N, K) grid.

    (a) consensus time strictly decreases with K at fixed N,
    (b) consensus time does not increase with N at fixed K,
    (c) mean solve time at K=1 is below that at K=10 for every N.
    """
    tab = {(c.n_agents, c.horizon): c for c in cells}
    Ns = sorted({c.n_agents for c in cells if c.n_agents is not None})
    Ks = sorted({c.horizon for c in cells if c.horizon is not None})

    def ct(n, k):
        c = tab.get((n, k))
        return None if c is None or c.status != "ok" else c.consensus_time

    bad_a, bad_b, bad_c = [], [], []
    for n in Ns:
        for k1, k2 in zip(Ks, Ks[1:]):
            a, b = ct(n, k1), ct(n, k2)
            if a is None or b is None or not b < a:
                bad_a.append(f"N={n}: K={k1} -> {a}, K={k2} -> {b}")
    for k in Ks:
        for n1, n2 in zip(Ns, Ns[1:]):
            a, b = ct(n1, k), ct(n2, k)
            if a is None or b is None or not b <= a:
                bad_b.append(f"K={k}: N={n1} -> {a}, N={n2} -> {b}")
    if 1 in Ks and 10 in Ks:
        for n in Ns:
            c1, c10 = tab.get((n, 1)), tab.get((n, 10))
            m1 = None if c1 is None else c1.mean_solve_time
            m10 = None if c10 is None else c10.mean_solve_time
            if m1 is None or m10 is None or not m1 < m10:
                bad_c.append(f"N={n}: K=1 -> {m1}, K=10 -> {m10}")
    else:
        bad_c.append("grid lacks K=1 or K=10")
    return [
        TrendCheck("consensus time strictly decreases with K", not bad_a, "; ".join(bad_a) or "ok"),
        TrendCheck("consensus time non-increasing with N", not bad_b, "; ".join(bad_b) or "ok"),
        TrendCheck("mean solve time K=1 below K=10", not bad_c, "; ".join(bad_c) or "ok"),
    ]
