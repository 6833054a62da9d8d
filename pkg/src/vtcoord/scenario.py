"""Scenario files (JSON, ``"schema": 1``) and dotted-path overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import Topology, TopologyError
from .mission import (
    BoundsError,
    GammaBounds,
    PhysicalBounds,
    concentric_circles,
    derive_gamma_bounds,
    speed_range,
    trajectory_from_json,
)
from .mpc import Consensus, MpcConfig, OrderedSeparation, Race
from .sim import DisturbanceModel, Impulse, Scenario

SCHEMA_VERSION = 1
SPEED_TOL = 1e-6


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ScenarioError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ScenarioError(text, "override key is empty")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(doc: dict, overrides) -> dict:
    """Return a copy of ``doc`` with each ``a.b.c=value`` applied in order."""
    out = copy.deepcopy(doc)
    for item in overrides or ():
        key, value = parse_override(item) if isinstance(item, str) else item
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise ScenarioError(key, f"no list element '{p}'") from None
                continue
            if p not in node or not isinstance(node[p], (dict, list)):
                node[p] = {}
            node = node[p]
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = value
            except (ValueError, IndexError):
                raise ScenarioError(key, f"no list element '{last}'") from None
        else:
            node[last] = value
    return out


def digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _get(doc: dict, key: str, default=None, required: bool = False):
    node = doc
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            if required:
                raise ScenarioError(key, "missing required field")
            return default
        node = node[p]
    return node


def _vector(doc, key, n, default=None):
    v = _get(doc, key, default, required=default is None)
    if np.isscalar(v):
        return np.full(n, float(v))
    v = list(v)
    if len(v) < n:
        raise ScenarioError(key, f"needs {n} entries, got {len(v)}")
    # longer vectors are truncated to the first n agents (agent-count sweeps)
    try:
        return np.asarray(v[:n], dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(key, "entries must be numbers") from None


def _topology(doc) -> Topology:
    t = _get(doc, "topology", required=True)
    try:
        topo = Topology.from_json(t)
    except (TopologyError, TypeError, ValueError) as exc:
        raise ScenarioError("topology", str(exc)) from None
    return topo


def _trajectories(doc, n):
    tr = _get(doc, "trajectories", required=True)
    if isinstance(tr, dict):
        gen = tr.get("generator")
        if gen != "concentric_circles":
            raise ScenarioError("trajectories.generator", f"unknown generator '{gen}'")
        try:
            return concentric_circles(
                n, tr.get("center", [0.0, 0.0, 0.0]), float(tr["base_radius"]), float(tr["radius_step"]),
                float(tr["speed"]), float(tr["duration"]), float(tr.get("z_amplitude", 0.0)),
                float(tr.get("z_omega", 0.0)),
            )
        except KeyError as exc:
            raise ScenarioError(f"trajectories.{exc.args[0]}", "missing required field") from None
    if len(tr) < n:
        raise ScenarioError("trajectories", f"needs {n} entries, got {len(tr)}")
    out = []
    for i, obj in enumerate(tr[:n]):
        try:
            out.append(trajectory_from_json(obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioError(f"trajectories[{i}]", str(exc)) from None
    return out


def _bounds(doc, trajs) -> GammaBounds:
    phys = _get(doc, "bounds")
    gb = _get(doc, "gamma_bounds")
    if (phys is None) == (gb is None):
        raise ScenarioError("bounds", "give exactly one of 'bounds' (physical) or 'gamma_bounds'")
    try:
        if gb is not None:
            return GammaBounds(float(gb["rate_min"]), float(gb["rate_max"]), float(gb["accel_max"]))
        pb = PhysicalBounds(**{k: float(phys[k]) for k in
                               ("v_min", "v_max", "a_max", "v_d_min", "v_d_max", "a_d_max")})
    except KeyError as exc:
        field = "gamma_bounds" if gb is not None else "bounds"
        raise ScenarioError(f"{field}.{exc.args[0]}", "missing required field") from None
    except BoundsError as exc:
        raise ScenarioError("gamma_bounds" if gb is not None else "bounds", str(exc)) from None
    for i, tr in enumerate(trajs):
        lo, hi, acc = speed_range(tr, 401)
        if lo < pb.v_d_min - SPEED_TOL or hi > pb.v_d_max + SPEED_TOL:
            raise ScenarioError(
                f"trajectories[{i}]",
                f"speed range [{lo:.4g}, {hi:.4g}] outside [v_d_min, v_d_max] = [{pb.v_d_min}, {pb.v_d_max}]",
            )
        if acc > pb.a_d_max + SPEED_TOL:
            raise ScenarioError(f"trajectories[{i}]", f"acceleration {acc:.4g} exceeds a_d_max = {pb.a_d_max}")
    try:
        return derive_gamma_bounds(pb)
    except BoundsError as exc:
        raise ScenarioError("bounds", str(exc)) from None


def _cost(doc, n):
    c = _get(doc, "cost", {"variant": "consensus"})
    variant = c.get("variant", "consensus")
    try:
        if variant == "consensus":
            return Consensus(bool(c.get("normalize", True)))
        if variant == "ordered":
            return OrderedSeparation(float(c["delta"]), float(c["gamma1"]), float(c["gamma2"]),
                                     bool(c.get("normalize", False)))
        if variant == "race":
            psi = tuple(float(x) for x in c["psi"])
            if len(psi) < n:
                raise ScenarioError("cost.psi", f"needs {n} entries, got {len(psi)}")
            return Race(psi[:n], float(c["gamma1"]), float(c["gamma2"]), bool(c.get("normalize", False)),
                        float(c.get("tie_tolerance", 0.0)))
    except KeyError as exc:
        raise ScenarioError(f"cost.{exc.args[0]}", "missing required field") from None
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("cost", str(exc)) from None
    raise ScenarioError("cost.variant", f"unknown variant '{variant}'")


def _disturbance(doc, n) -> DisturbanceModel:
    d = _get(doc, "disturbance", {"kind": "none"})
    kind = d.get("kind", "none")
    try:
        if kind == "none":
            return DisturbanceModel()
        if kind == "synthetic":
            amps = d.get("amplitudes")
            return DisturbanceModel("synthetic", float(d["d"]), float(d["nu"]),
                                    None if amps is None else tuple(float(x) for x in amps[:n]))
        if kind == "tracker":
            imps = []
            for m, imp in enumerate(d.get("impulses", [])):
                if not 0 <= int(imp["agent"]) < n:
                    raise ScenarioError(f"disturbance.impulses[{m}].agent", "index out of range")
                if int(imp["step"]) < 1:
                    raise ScenarioError(f"disturbance.impulses[{m}].step", "must be >= 1")
                imps.append(Impulse(int(imp["step"]), int(imp["agent"]), float(imp["along"])))
            e0 = d.get("e0")
            return DisturbanceModel("tracker", 0.0, float(d["nu"]), None, tuple(imps),
                                    None if e0 is None else tuple(float(x) for x in e0[:n]))
    except KeyError as exc:
        raise ScenarioError(f"disturbance.{exc.args[0]}", "missing required field") from None
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("disturbance", str(exc)) from None
    raise ScenarioError("disturbance.kind", f"unknown kind '{kind}'")


def scenario_from_dict(doc: dict, overrides=None) -> Scenario:
    doc = apply_overrides(doc, overrides)
    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        raise ScenarioError("schema", f"expected {SCHEMA_VERSION}, got {schema!r}")
    topo = _topology(doc)
    n = topo.n_agents
    trajs = _trajectories(doc, n)
    gb = _bounds(doc, trajs)
    m = _get(doc, "mpc", required=True)
    try:
        weights = tuple(float(x) for x in m.get("weights", (1.0, 1.0, 1.0)))
        horizon = m.get("horizon", 1)
        if not isinstance(horizon, int) or isinstance(horizon, bool):
            raise ScenarioError("mpc.horizon", f"must be an integer >= 1, got {horizon!r}")
        cfg = MpcConfig(weights, horizon, float(_get(doc, "mpc.h", required=True)), gb,
                        float(m.get("beta", 1.0)), float(m.get("delta_reg", 1e-6)), _cost(doc, n))
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError("mpc", str(exc)) from None
    gamma0 = _vector(doc, "initial.gamma0", n)
    gamma_dot0 = _vector(doc, "initial.gamma_dot0", n, 1.0)
    corridor = _get(doc, "corridor")
    try:
        return Scenario(
            name=str(doc.get("name", "scenario")),
            topology=topo,
            trajectories=trajs,
            gamma_bounds=gb,
            mpc=cfg,
            gamma0=gamma0,
            gamma_dot0=gamma_dot0,
            T=float(_get(doc, "mission.T", required=True)),
            disturbance=_disturbance(doc, n),
            drop_probability=float(_get(doc, "links.drop_probability", 0.0)),
            seed=int(doc.get("seed", 0)),
            epsilon=float(doc.get("epsilon", 0.01)),
            separation=float(doc.get("separation", 0.0)),
            corridor=None if corridor is None else (float(corridor["entry"]), float(corridor["exit"])),
            source=doc,
        )
    except ValueError as exc:
        msg = str(exc)
        field = msg.split(":", 1)[0] if ":" in msg else "scenario"
        raise ScenarioError(field, msg.split(": ", 1)[-1]) from None


def read_scenario_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(str(path), f"invalid JSON ({exc})") from None


def load_scenario(path, overrides=None) -> Scenario:
    return scenario_from_dict(read_scenario_file(path), overrides)


def builtin_scenario_path(name: str) -> Path:
    """Path of a packaged scenario file, e.g. ``table1``."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return Path(str(resources.files("vtcoord") / "scenarios" / fname))


def builtin_scenarios() -> list[str]:
    d = resources.files("vtcoord") / "scenarios"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))
