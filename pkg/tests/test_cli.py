import json

import pytest

from flockyap.cli import main

FLOCK = {
    "name": "quick_flock",
    "order": "second",
    "n_agents": 4,
    "dim": 2,
    "initial_state": {"kind": "random", "seed": 3, "x_dev": 1.0, "v_dev": 1.0},
    "kernel": {"kind": "power_law", "K": 1.0, "sigma": 1.0, "beta": 0.25},
    "schedule": {"kind": "constant", "weights": "complete"},
    "tau": 1.0,
    "t_end": 40.0,
    "step": 0.02,
    "eps0": 0.05,
}
CONS = {
    "name": "quick_consensus",
    "order": "first",
    "n_agents": 5,
    "dim": 1,
    "initial_state": {"kind": "random", "seed": 1},
    "kernel": {"kind": "constant", "value": 1.0},
    "schedule": {"kind": "bernoulli", "base": "complete", "p": 0.5, "mesh": 0.1, "seed": 2, "horizon": 5.0},
    "tau": 1.0,
    "t_end": 5.0,
}


def _write(tmp_path, doc, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_simulate_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, CONS)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["consensus_time"] is None or rep["consensus_time"] > 0
    lines = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    X = [float(l.split(",")[1]) for l in lines[2:]]
    assert all(b <= a + 1e-12 for a, b in zip(X, X[1:]))


def test_simulate_is_deterministic(tmp_path):
    cfg = _write(tmp_path, CONS)
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for f in ("trajectory.csv", "states.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "9"]) == 0
    assert (tmp_path / "a" / "states.csv").read_bytes() != (tmp_path / "c" / "states.csv").read_bytes()


def test_flocking_report_fields(tmp_path):
    cfg = _write(tmp_path, FLOCK)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["v_time"] is not None and rep["x_sup"] >= rep["X0"]


def test_invalid_config_exit_2(tmp_path, capsys):
    bad = _write(tmp_path, {**CONS, "order": "zeroth"})
    assert main(["simulate", "--config", bad]) == 2
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert main(["simulate", "--config", str(p)]) == 2
    assert main(["simulate"]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_exit_3(tmp_path):
    doc = {**CONS, "kernel": {"kind": "constant", "value": 1e300},
           "schedule": {"kind": "constant", "weights": "complete"}, "step": 1.0}
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 3


def test_verify_pe_example(tmp_path):
    spec = {"kind": "example_n4", "tau": 1.0, "n_agents": 4}
    cfg = _write(tmp_path, spec)
    rc = main(["verify-pe", "--config", cfg, "--mu", str(1 / 6), "--convention", "unnormalized",
               "--prop43-slots", "6", "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "pe.json").read_text())
    assert rc == 0
    assert doc["certificates"][0]["worst_lambda2"] == pytest.approx(1 / 6)
    assert doc["prop43"][0]["implied_mu"] == pytest.approx(1 / 12)


def test_verify_pe_zero_schedule_exit_1(tmp_path):
    cfg = _write(tmp_path, {"kind": "constant", "weights": "empty", "n_agents": 3, "tau": 1.0})
    assert main(["verify-pe", "--config", cfg, "--mu", "0.01", "--out", str(tmp_path)]) == 1


def test_verify_pe_tau_grid(tmp_path):
    cfg = _write(tmp_path, {"kind": "example_n4", "tau": 1.0, "n_agents": 4})
    main(["verify-pe", "--config", cfg, "--mu", "0.01", "--tau", "0.5,1,1.5,2,3", "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "pe.json").read_text())
    assert len(doc["certificates"]) == 5
    assert main(["verify-pe", "--config", cfg, "--out", str(tmp_path)]) == 2  # no mu


def test_monitor_lyapunov_consensus(tmp_path):
    cfg = _write(tmp_path, CONS)
    out = str(tmp_path / "o")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert main(["monitor-lyapunov", "--config", cfg, "--out", out]) == 0
    rep = json.loads((tmp_path / "o" / "lyapunov.json").read_text())
    assert rep["consensus_dissipation"]["holds"]
    assert rep["rate_vs_alpha"]["ok"]


def test_monitor_lyapunov_flocking(tmp_path):
    cfg = _write(tmp_path, FLOCK)
    assert main(["monitor-lyapunov", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "lyapunov.json").read_text())
    assert rep["flocking_dissipation"]["holds"] and rep["flocking_dissipation"]["lemma_holds"]
    assert rep["tuning"]["eps0"] == 0.05
    assert "C4" in rep["flocking_bound"]


def test_sweep_beta_axis(tmp_path):
    cfg = _write(tmp_path, FLOCK)
    rc = main(["sweep", "--config", cfg, "--axis", "kernel.beta", "--values", "0.1,0.25,0.4",
               "--threads", "2", "--out", str(tmp_path)])
    rows = json.loads((tmp_path / "sweep.json").read_text())["rows"]
    assert rc == 0
    assert [r["value"] for r in rows] == [0.1, 0.25, 0.4]
    assert all(r["status"] == "ok" and r["v_time"] is not None for r in rows)
    assert all(r["bound_ok"] for r in rows)
    assert (tmp_path / "sweep.csv").read_text().startswith("axis,value,status")


def test_sweep_rows_fail_independently(tmp_path):
    cfg = _write(tmp_path, FLOCK)
    main(["sweep", "--config", cfg, "--axis", "kernel.beta", "--values", "0.2,1.5", "--out", str(tmp_path)])
    rows = json.loads((tmp_path / "sweep.json").read_text())["rows"]
    assert rows[0]["status"] == "ok" and rows[1]["status"] == "error"


def test_sweep_eps0_axis_matches_bound(tmp_path):
    from flockyap import lyapunov as ly
    from flockyap.cli import pe_constant, simulate
    from flockyap.scenario import scenario_from_dict

    cfg = _write(tmp_path, FLOCK)
    main(["sweep", "--config", cfg, "--axis", "eps0", "--values", "0.5,0.05,0.005", "--out", str(tmp_path)])
    rows = json.loads((tmp_path / "sweep.json").read_text())["rows"]
    sc = scenario_from_dict(FLOCK)
    tr = simulate(sc)
    mu, _ = pe_constant(sc, tr.schedule)
    c = ly.compute_constants(tr, 1.0, mu)
    rk = ly.rescaled_kernel_for(tr, 1.0)
    for r in rows:
        fb = ly.flocking_bound(ly.FlockingTuning(r["value"], c.c, 1.0), c, rk, float(tr.V[0]))
        assert r["v_bound_at_T"] == pytest.approx(fb.v_bound_at_T, rel=1e-12)


def test_sweep_empty_axis(tmp_path):
    cfg = _write(tmp_path, FLOCK)
    assert main(["sweep", "--config", cfg, "--axis", "kernel.beta", "--values", "", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "sweep.json").read_text())["rows"] == []
