import json

import numpy as np
import pytest

from flockyap.scenario import (
    ScenarioError,
    initial_state,
    load_scenario,
    resolve_step,
    save_scenario,
    scenario_from_dict,
)

BASE = {
    "name": "s",
    "order": "second",
    "n_agents": 4,
    "dim": 2,
    "initial_state": {"kind": "random", "seed": 1, "x_dev": 1.0, "v_dev": 2.0},
    "kernel": {"kind": "power_law", "K": 1.0, "sigma": 1.0, "beta": 0.25},
    "schedule": {"kind": "example_n4", "tau": 1.0},
    "t_end": 2.0,
}


def test_round_trip(tmp_path):
    sc = scenario_from_dict(BASE)
    save_scenario(sc, tmp_path / "a.json")
    again = load_scenario(tmp_path / "a.json")
    assert again == sc
    save_scenario(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_random_state_is_seeded_and_rescaled():
    sc = scenario_from_dict(BASE)
    x, v = initial_state(sc)
    x2, v2 = initial_state(sc)
    assert np.array_equal(x, x2) and np.array_equal(v, v2)
    dev = x - x.mean(0)
    assert np.sqrt(np.mean(np.sum(dev**2, 1))) == pytest.approx(1.0)
    dev = v - v.mean(0)
    assert np.sqrt(np.mean(np.sum(dev**2, 1))) == pytest.approx(2.0)
    x3, _ = initial_state(sc.with_seed(2))
    assert not np.array_equal(x, x3)


def test_inline_state():
    d = dict(BASE, order="first", initial_state={"kind": "inline", "positions": [[0, 0], [1, 0], [0, 1], [1, 1]]})
    x, v = initial_state(scenario_from_dict(d))
    assert x.shape == (4, 2) and v is None


@pytest.mark.parametrize(
    "patch",
    [
        {"order": "third"},
        {"t_end": -1.0},
        {"mu": 2.0},
        {"kernel": {"kind": "gaussian"}},
        {"schedule": {"kind": "example_n4", "tau": 1.0}, "n_agents": 5},
        {"initial_state": {"kind": "random"}},
        {"schedule": {"kind": "bernoulli", "p": 0.5, "mesh": 0.1, "horizon": 5.0}},
        {"schedule": {"kind": "bernoulli", "p": 0.5, "mesh": 0.1, "seed": 1, "horizon": 1.0}},
        {"bogus": 1},
    ],
)
def test_invalid_documents(patch):
    with pytest.raises(ScenarioError):
        scenario_from_dict({**BASE, **patch})


def test_missing_fields_and_bad_json(tmp_path):
    with pytest.raises(ScenarioError):
        scenario_from_dict({"name": "x"})
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_step_adjusted_to_divide_mesh(caplog):
    sc = scenario_from_dict({**BASE, "step": 0.05})
    s = sc.build_schedule()
    with caplog.at_level("WARNING"):
        h = resolve_step(sc, s)
    assert (1 / 6) / h == pytest.approx(round((1 / 6) / h))
    assert h <= 0.05 and "does not divide" in caplog.text
    sc = scenario_from_dict({**BASE, "step": 1 / 60})
    assert resolve_step(sc, s) == pytest.approx(1 / 60)
    assert resolve_step(scenario_from_dict(BASE), s) == pytest.approx(1 / 120)


def test_json_is_plain(tmp_path):
    sc = scenario_from_dict(BASE)
    doc = json.loads(sc.to_json())
    assert doc["tolerances"] == {"consensus": 1e-6, "flocking": 1e-4}
