"""Command line entry point: ``vtcoord run | certify | sweep``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import CertificateError, certify, feasibility_margins, h_max, mode_matrices, spectral_radius
from .graph import TopologyError, spectral_decomposition
from .mpc import Consensus
from .report import summarize, timing, write_json, write_plots_svg, write_trace_csv
from .scenario import (
    ScenarioError,
    apply_overrides,
    builtin_scenario_path,
    digest,
    read_scenario_file,
    scenario_from_dict,
)
from .sim import SimulationAborted, run
from .solver import gains
from .sweep import check_trends, run_sweep

OUT_ENV = "VTCOORD_OUT"
DEFAULT_OUT = "vtcoord-out"

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _resolve(path: str) -> Path:
    if path.startswith("builtin:"):
        p = builtin_scenario_path(path.split(":", 1)[1])
    else:
        p = Path(path)
    if not p.is_file():
        raise UsageError(f"scenario file not found: {path}")
    return p


def _load_doc(path: str, overrides) -> dict:
    try:
        doc = read_scenario_file(_resolve(path))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    return apply_overrides(doc, overrides)


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def cmd_run(args) -> int:
    doc = _load_doc(args.scenario, args.set)
    sc = scenario_from_dict(doc)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aborted = None
    try:
        trace = run(sc)
    except SimulationAborted as exc:
        trace, aborted = exc.trace, str(exc)
    files = {
        "trace": out / "trace.csv",
        "summary": out / "summary.json",
        "plots": out / "plots.svg",
        "timing": out / "timing.json",
    }
    write_trace_csv(trace, files["trace"])
    summary = summarize(sc, trace, digest(doc), aborted)
    write_json(summary, files["summary"])
    write_plots_svg(sc, trace, files["plots"])
    tm = timing(trace)
    write_json(tm, files["timing"])
    report = {
        "scenario_digest": summary["digest"],
        "consensus_time": summary["consensus_time"],
        "max_solve_time": tm["max_solve_time"],
        "mean_solve_time": tm["mean_solve_time"],
        "certificate": _certificate_summary(sc),
        "files": {k: str(v) for k, v in files.items()},
    }
    print(json.dumps(report, indent=2))
    if aborted:
        print(f"error: simulation aborted: {aborted}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def _certificate_summary(sc):
    if sc.mpc.horizon != 1 or not _normalized_consensus(sc):
        return None
    try:
        cert = certify(spectral_decomposition(sc.topology), gains(*sc.mpc.weights, sc.mpc.h), sc.mpc.h,
                       _nu(sc, None))
    except TopologyError:
        return None
    return {"valid": cert.valid, "r_h": None if not cert.valid else cert.r_h}


def _normalized_consensus(sc) -> bool:
    return isinstance(sc.mpc.cost, Consensus) and sc.mpc.cost.normalize


def _nu(sc, override):
    if override is not None:
        return float(override)
    if sc.disturbance.kind != "none":
        return sc.disturbance.nu
    return 1.0


def certificate_report(sc, nu=None, d=None) -> tuple[dict, list[str]]:
    """Certificate and margins for a scenario; returns ``(json, warnings)``."""
    warnings = []
    spec = spectral_decomposition(sc.topology)
    g = gains(*sc.mpc.weights, sc.mpc.h)
    h = sc.mpc.h
    rho = [float(spectral_radius(m)) for m in mode_matrices(g, h, spec)]
    out = {"rho": rho, "eigenvalues": [float(x) for x in spec.eigenvalues], "a_h": g.a, "b_h": g.b, "h": h}
    if sc.mpc.horizon != 1:
        warnings.append(f"horizon K={sc.mpc.horizon}: certificates exist only for K=1; "
                        "reporting spectral radii of the K=1 law only")
        return out, warnings
    if not _normalized_consensus(sc):
        warnings.append(f"cost '{sc.mpc.cost.name}' (normalize={sc.mpc.cost.normalize}) is not the "
                        "normalized consensus law; reporting spectral radii only")
        return out, warnings
    nu_v = _nu(sc, nu)
    d_v = float(d) if d is not None else (sc.disturbance.d if sc.disturbance.kind == "synthetic" else 0.0)
    cert = certify(spec, g, h, nu_v)
    out.update(cert.to_json())
    out["h_max"] = h_max(spec, sc.mpc.weights, nu_v)
    init_norm = float(max(np.abs(sc.gamma0 + h * (sc.gamma_dot0 - 1.0)).max(), np.abs(sc.gamma_dot0 - 1.0).max()))
    out["init_norm"] = init_norm
    out["d"] = d_v
    if cert.valid:
        out["margins"] = feasibility_margins(cert, sc.gamma_bounds, d_v, init_norm, sc.n_agents).to_json()
    else:
        out["margins"] = None
    return out, warnings


def cmd_certify(args) -> int:
    doc = _load_doc(args.scenario, args.set)
    sc = scenario_from_dict(doc)
    try:
        out, warnings = certificate_report(sc, args.nu, args.d)
    except TopologyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def _fmt(x):
    return "" if x is None else repr(float(x))


def cmd_sweep(args) -> int:
    doc = _load_doc(args.scenario, args.set)
    scenario_from_dict(doc)  # validate once before fanning out
    if not (args.horizon or args.n_agents or args.h):
        raise UsageError("give at least one axis: --horizon, --n-agents or --h")
    cells = run_sweep(doc, args.horizon, args.n_agents, args.h, args.workers)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_agents", "horizon", "h", "status", "consensus_time", "message"])
        for c in cells:
            w.writerow(["" if c.n_agents is None else c.n_agents, "" if c.horizon is None else c.horizon,
                        _fmt(c.h), c.status, _fmt(c.consensus_time), c.message])
    with open(out / "sweep_timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_agents", "horizon", "h", "max_solve_time", "mean_solve_time", "wall_time"])
        for c in cells:
            w.writerow(["" if c.n_agents is None else c.n_agents, "" if c.horizon is None else c.horizon,
                        _fmt(c.h), _fmt(c.max_solve_time), _fmt(c.mean_solve_time), _fmt(c.wall_time)])
    _write_table(cells, out / "table.csv")
    for c in cells:
        label = ", ".join(f"{k}={v}" for k, v in (("N", c.n_agents), ("K", c.horizon), ("h", c.h)) if v is not None)
        val = "FAILED: " + c.message if c.status != "ok" else (
            "no consensus" if c.consensus_time is None else f"consensus {c.consensus_time:.2f} s")
        print(f"{label}: {val}")
    rc = EXIT_OK
    if args.assert_trends:
        for chk in check_trends(cells):
            print(f"[{'PASS' if chk.passed else 'FAIL'}] {chk.name}: {chk.detail}")
            if not chk.passed:
                rc = EXIT_DOMAIN
    return rc


def _write_table(cells, path) -> None:
    """Agent-count blocks of horizon columns, one row per metric."""
    Ns = sorted({c.n_agents for c in cells}, key=lambda v: (v is None, v))
    Ks = sorted({c.horizon for c in cells}, key=lambda v: (v is None, v))
    hs = sorted({c.h for c in cells}, key=lambda v: (v is None, v))
    tab = {(c.n_agents, c.horizon, c.h): c for c in cells}
    cols = [(n, k, h) for n in Ns for k in Ks for h in hs]

    def label(n, k, h):
        return " ".join(s for s in (f"N={n}" if n is not None else "", f"K={k}" if k is not None else "",
                                    f"h={h}" if h is not None else "") if s)

    def val(c, attr):
        if c is None or c.status != "ok":
            return "failed"
        v = getattr(c, attr)
        return "" if v is None else f"{v:.6g}"

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + [label(*c) for c in cols])
        w.writerow(["consensus_time_s"] + [val(tab.get(c), "consensus_time") for c in cols])
        w.writerow(["max_solve_time_s"] + [val(tab.get(c), "max_solve_time") for c in cols])
        w.writerow(["mean_solve_time_s"] + [val(tab.get(c), "mean_solve_time") for c in cols])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vtcoord",
        description="Distributed MPC time coordination: simulate, certify and sweep scenarios.",
        epilog=f"Scenario paths may be given as builtin:NAME for packaged scenarios. "
               f"Outputs go to --out, else ${OUT_ENV}, else ./{DEFAULT_OUT}.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file or builtin:NAME")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override applied after parsing, e.g. mpc.horizon=5 (repeatable)")

    r = sub.add_parser("run", help="simulate a scenario and write trace, summary, plots and timing")
    common(r)
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)

    for name in ("certify", "analyze"):
        c = sub.add_parser(name, help="print the K=1 convergence certificate and feasibility margins as JSON")
        common(c)
        c.add_argument("--nu", type=float, help="disturbance decay rate (default: scenario value or 1)")
        c.add_argument("--d", type=float, help="disturbance amplitude (default: scenario value or 0)")
        c.set_defaults(func=cmd_certify)

    s = sub.add_parser("sweep", help="run a grid of scenarios and aggregate consensus and solve times")
    common(s)
    s.add_argument("--horizon", type=_int_list, help="comma-separated horizons K")
    s.add_argument("--n-agents", type=_int_list, help="comma-separated agent counts N (vectors use their prefix)")
    s.add_argument("--h", type=_float_list, help="comma-separated step sizes")
    s.add_argument("--out", help="output directory")
    s.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
    s.add_argument("--assert-trends", action="store_true",
                   help="check horizon/agent-count trends over the grid; exit 1 if any fails")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, CertificateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
