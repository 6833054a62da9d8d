import json

import numpy as np
import pytest

from vtcoord.scenario import (
    ScenarioError,
    apply_overrides,
    builtin_scenario_path,
    builtin_scenarios,
    digest,
    load_scenario,
    parse_override,
    scenario_from_dict,
)

from conftest import consensus_doc


def test_parse_override_values():
    assert parse_override("mpc.horizon=5") == ("mpc.horizon", 5)
    assert parse_override("mpc.weights=[1,2,3]") == ("mpc.weights", [1, 2, 3])
    assert parse_override("name=hello") == ("name", "hello")
    with pytest.raises(ScenarioError):
        parse_override("novalue")


def test_apply_overrides_nested_and_lists():
    doc = consensus_doc()
    out = apply_overrides(doc, ["mpc.horizon=4", "initial.gamma0.1=9", ("links.drop_probability", 0.2)])
    assert out["mpc"]["horizon"] == 4
    assert out["initial"]["gamma0"][1] == 9
    assert out["links"] == {"drop_probability": 0.2}
    assert doc["mpc"]["horizon"] == 1  # input untouched
    with pytest.raises(ScenarioError):
        apply_overrides(doc, ["initial.gamma0.7=1"])


def test_vector_prefix_and_broadcast():
    sc = scenario_from_dict(consensus_doc(n=3, gamma0=[4.5, 6, 0, 3.5, 2.5]))
    np.testing.assert_array_equal(sc.gamma0, [4.5, 6, 0])
    np.testing.assert_array_equal(sc.gamma_dot0, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("patch, field", [
    ({"schema": 2}, "schema"),
    ({"mpc": {"weights": [1, 1, 1], "horizon": 2.5, "h": 0.1}}, "mpc.horizon"),
    ({"initial": {"gamma0": [0.0]}}, "initial.gamma0"),
    ({"cost": {"variant": "zigzag"}}, "cost.variant"),
    ({"cost": {"variant": "ordered", "gamma1": 0, "gamma2": 85}}, "cost.delta"),
    ({"topology": {"kind": "blob", "n_agents": 3}}, "topology"),
    ({"mission": {"T": 1.03}}, "mission.T"),
    ({"initial": {"gamma0": [-1.0, 0.0, 0.0]}}, "initial.gamma0"),
    ({"disturbance": {"kind": "tracker", "nu": 1, "impulses": [{"step": 1, "agent": 7, "along": 1}]}},
     "disturbance.impulses[0].agent"),
])
def test_schema_errors_name_field(patch, field):
    doc = consensus_doc(n=3)
    doc.update(patch)
    with pytest.raises(ScenarioError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == field


def test_bounds_exclusive_and_physical_checks():
    doc = consensus_doc(n=2)
    doc["bounds"] = {"v_min": 0.2, "v_max": 3, "a_max": 5, "v_d_min": 0.5, "v_d_max": 1.5, "a_d_max": 0.5}
    with pytest.raises(ScenarioError, match="exactly one"):
        scenario_from_dict(doc)
    del doc["gamma_bounds"]
    sc = scenario_from_dict(doc)
    assert sc.gamma_bounds.rate_max == pytest.approx(2.0)
    doc["bounds"]["v_d_min"] = 1.2
    with pytest.raises(ScenarioError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "trajectories[0]"


def test_digest_is_order_independent():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert digest(a) == digest(b) and len(digest(a)) == 16


def test_builtin_scenarios_load():
    names = builtin_scenarios()
    assert {"consensus_k2", "corridor_ordered", "corridor_race", "table1"} <= set(names)
    for name in names:
        sc = load_scenario(builtin_scenario_path(name))
        assert sc.n_agents >= 2


def test_file_roundtrip(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(consensus_doc(n=2)))
    assert load_scenario(p, ["mpc.horizon=3"]).mpc.horizon == 3
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(p)
