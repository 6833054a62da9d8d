"""Trace, summary and plot writers.

Floats are written with ``repr`` so identical runs give identical bytes.
Wall-clock solve times live in a separate timing file for the same reason.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .sim import Scenario, SimTrace, consensus_time, corridor_metrics

TRACE_COLUMNS = [
    "k", "t", "agent", "delta0", "rate0", "delta1", "rate1", "u", "alpha", "gamma",
    "ref_x", "ref_y", "ref_z", "act_x", "act_y", "act_z", "neighbors", "qp_iterations", "active_set",
]

CONSENSUS_CRITERION = (
    "first t_k with max pairwise |delta_i0 - delta_j0| <= epsilon and max |rate_i0| <= epsilon "
    "that holds at every later recorded step"
)


def _f(x) -> str:
    return repr(float(x))


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(trace.n_rounds):
            for i in range(trace.n_agents):
                ref, act = trace.ref[k, i], trace.act[k, i]
                w.writerow([
                    k, _f(trace.t[k]), i,
                    _f(trace.delta0[k, i]), _f(trace.rate0[k, i]),
                    _f(trace.delta1[k, i]), _f(trace.rate1[k, i]),
                    _f(trace.u[k, i]), _f(trace.alpha[k, i]), _f(trace.gamma[k, i]),
                    _f(ref[0]), _f(ref[1]), _f(ref[2]), _f(act[0]), _f(act[1]), _f(act[2]),
                    ";".join(str(j) for j in trace.neighbors[k][i]),
                    int(trace.qp_iterations[k, i]),
                    ";".join(str(j) for j in trace.active_sets[k][i]),
                ])


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def summarize(sc: Scenario, trace: SimTrace, digest: str, aborted: Optional[str] = None) -> dict:
    cfg = sc.mpc
    cost = cfg.cost
    out = {
        "scenario": sc.name,
        "digest": digest,
        "n_agents": sc.n_agents,
        "mpc": {
            "horizon": cfg.horizon,
            "h": cfg.h,
            "weights": list(cfg.weights),
            "cost": cost.name,
            "normalize": cost.normalize,
        },
        "gamma_bounds": {
            "rate_min": sc.gamma_bounds.rate_min,
            "rate_max": sc.gamma_bounds.rate_max,
            "accel_max": sc.gamma_bounds.accel_max,
        },
        "steps_planned": sc.steps,
        "steps_recorded": trace.n_rounds,
        "epsilon": sc.epsilon,
        "consensus_criterion": CONSENSUS_CRITERION,
        "consensus_time": _num(consensus_time(trace, sc.epsilon)),
        "final_max_gap": _num(trace.max_gap[-1]) if trace.n_rounds else None,
        "final_max_rate": _num(trace.max_rate[-1]) if trace.n_rounds else None,
        "min_separation": _num(trace.min_separation.min()) if trace.n_rounds and sc.n_agents > 1 else None,
        "constraints_ever_active": trace.any_active(),
        "aborted": aborted,
    }
    if sc.corridor is not None and trace.n_rounds:
        release = getattr(cost, "gamma2", None)
        m = corridor_metrics(trace, sc.corridor[0], sc.corridor[1], sc.separation, sc.epsilon, release)
        out["corridor"] = {
            "entry": sc.corridor[0],
            "exit": sc.corridor[1],
            "separation": sc.separation,
            "passage_order": m.passage_order,
            "min_distance": _num(m.min_distance),
            "min_distance_in_corridor": _num(m.min_distance_corridor),
            "collision": m.collision,
            "collision_count": m.collision_count,
            "post_corridor_consensus_time": _num(m.post_corridor_consensus_time),
        }
    return out


def timing(trace: SimTrace) -> dict:
    st = trace.field("solve_time")[1:]
    if st.size == 0:
        return {"max_solve_time": None, "mean_solve_time": None, "solves": 0}
    return {"max_solve_time": float(st.max()), "mean_solve_time": float(st.mean()), "solves": int(st.size)}


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- minimal SVG line plots -------------------------------------------------

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf"]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 10))
        v += step
    return out


def _panel(x, series: Sequence[tuple], title: str, ylabel: str, ox: float, oy: float,
           w: float, h: float, hline: Optional[float] = None) -> list[str]:
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(s[1], dtype=float) for s in series]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys] + ([np.array([hline])] if hline is not None else []))
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(x.min()), float(x.max()) if x.size else 1.0
    if xhi <= xlo:
        xhi = xlo + 1.0
    left, top = ox + 60, oy + 30
    pw, ph = w - 80, h - 70

    def sx(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return top + ph - (v - ylo) / (yhi - ylo) * ph

    el = [f'<rect x="{left:.1f}" y="{top:.1f}" width="{pw:.1f}" height="{ph:.1f}" fill="none" stroke="#333"/>',
          f'<text x="{left + pw / 2:.1f}" y="{oy + 18:.1f}" text-anchor="middle" font-size="14">{title}</text>',
          f'<text x="{left + pw / 2:.1f}" y="{top + ph + 36:.1f}" text-anchor="middle" font-size="12">time (s)</text>',
          f'<text x="{ox + 14:.1f}" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
          f'transform="rotate(-90 {ox + 14:.1f} {top + ph / 2:.1f})">{ylabel}</text>']
    for tv in _ticks(xlo, xhi):
        el.append(f'<text x="{sx(tv):.1f}" y="{top + ph + 16:.1f}" text-anchor="middle" font-size="10">{tv:g}</text>')
    for tv in _ticks(ylo, yhi):
        el.append(f'<text x="{left - 6:.1f}" y="{sy(tv) + 3:.1f}" text-anchor="end" font-size="10">{tv:g}</text>')
        el.append(f'<line x1="{left:.1f}" x2="{left + pw:.1f}" y1="{sy(tv):.1f}" y2="{sy(tv):.1f}" stroke="#eee"/>')
    if hline is not None:
        el.append(f'<line x1="{left:.1f}" x2="{left + pw:.1f}" y1="{sy(hline):.1f}" y2="{sy(hline):.1f}" '
                  f'stroke="#000" stroke-dasharray="4 3"/>')
    stride = max(1, len(x) // 1500)
    for n, ((label, _), y) in enumerate(zip(series, ys)):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[::stride], y[::stride]) if math.isfinite(b))
        color = PALETTE[n % len(PALETTE)]
        el.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        el.append(f'<text x="{left + pw + 4:.1f}" y="{top + 12 + 12 * n:.1f}" font-size="10" fill="{color}">{label}</text>')
    return el


def write_plots_svg(sc: Scenario, trace: SimTrace, path) -> None:
    """Virtual time per agent and minimum pairwise reference distance, stacked."""
    t = trace.times
    gam = trace.field("gamma")
    W, H = 760, 300
    series = [(f"agent {i}", gam[:, i]) for i in range(sc.n_agents)]
    el = _panel(t, series, "virtual time over time", "gamma (s)", 0, 0, W, H)
    if sc.n_agents > 1:
        el += _panel(t, [("min distance", trace.min_separation)], "minimum pairwise distance", "distance (m)",
                     0, H, W, H, hline=sc.separation if sc.separation > 0 else None)
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{2 * H}" font-family="sans-serif">',
           '<rect width="100%" height="100%" fill="white"/>'] + el + ["</svg>"]
    Path(path).write_text("\n".join(svg) + "\n", encoding="utf-8")
