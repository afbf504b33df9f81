"""Command-line entry points: simulate, verify-pe, monitor-lyapunov, sweep.

Exit codes: 0 success, 1 a requested PE certificate fails, 2 invalid
configuration, 3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lyapunov as ly
from .dynamics import (
    SimulationError,
    Trajectory,
    detect_consensus,
    detect_flocking,
    fit_exponential_rate,
    integrate,
    read_state_dump,
    write_state_dump,
    write_trajectory_csv,
)
from .kernels import PowerLawKernel
from .laplacian import Convention
from .pe import check_pe, check_prop_43, estimate_pe_params, window_lambda2_profile
from .scenario import (
    Scenario,
    ScenarioError,
    initial_state,
    load_scenario,
    resolve_step,
    scenario_from_dict,
)
from .schedules import ScheduleError, schedule_from_dict

log = logging.getLogger("flockyap")

EXIT_OK, EXIT_PE_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
DEFAULT_EPS0_GRID = tuple(np.geomspace(0.5, 5e-4, 8))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(x):
    """JSON has no infinities; map them to None."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    return x


def write_json(doc, path: Path) -> None:
    path.write_text(json.dumps(_finite(doc), indent=2, default=_json_default) + "\n")


def simulate(sc: Scenario, base_dir: Optional[Path] = None) -> Trajectory:
    schedule = sc.build_schedule(base_dir)
    kernel = sc.build_kernel()
    x0, v0 = initial_state(sc)
    return integrate(sc.order, x0, v0, schedule, kernel, sc.t_end, resolve_step(sc, schedule))


def detection_report(sc: Scenario, traj: Trajectory) -> dict:
    rep = {
        "name": sc.name,
        "order": sc.order,
        "t_end": traj.t_end,
        "step": traj.step,
        "n_steps": len(traj) - 1,
        "X0": float(traj.X[0]),
        "X_end": float(traj.X[-1]),
    }
    mon = traj.monitors
    rep["max_mean_drift"] = float(mon["mean_drift"].max())
    if sc.order == "first":
        rep["consensus_time"] = detect_consensus(traj, sc.tolerances["consensus"])
        fit = fit_exponential_rate(traj.times, traj.X)
        rep["max_x_monotone_residual"] = float(mon["x_monotone_residual"].max())
    else:
        fl = detect_flocking(traj, sc.tolerances["flocking"])
        rep.update(V0=float(traj.V[0]), V_end=float(traj.V[-1]), v_time=fl.v_time, x_sup=fl.x_sup)
        fit = fit_exponential_rate(traj.times, traj.V)
        rep["max_affine_drift"] = float(mon["affine_drift"].max())
        rep["max_v_monotone_residual"] = float(mon["v_monotone_residual"].max())
        rep["max_x_rate_residual"] = float(mon["x_rate_residual"].max())
    rep["rate"] = fit.rate
    rep["r_squared"] = fit.r_squared
    return rep


def pe_constant(sc: Scenario, schedule) -> tuple:
    """(mu, certificate dict): the scenario's mu if given, else the worst window lambda_2."""
    horizon = None if schedule.period is not None else sc.t_end
    _, lams, exact, spec = window_lambda2_profile(schedule, sc.tau, horizon)
    worst = float(lams.min())
    mu = sc.mu if sc.mu is not None else worst
    cert = {
        "tau": sc.tau,
        "mu": mu,
        "worst_lambda2": worst,
        "holds": bool(mu > 0 and worst >= mu),
        "exact": exact,
        "t_grid_spec": spec,
        "mu_source": "scenario" if sc.mu is not None else "certified worst window",
    }
    return mu, cert


def _kernel_hypothesis(kernel) -> Optional[tuple]:
    if isinstance(kernel, PowerLawKernel) and 0.0 < kernel.beta < 0.5:
        return (kernel.K, kernel.sigma, kernel.beta)
    return None


def lyapunov_report(sc: Scenario, traj: Trajectory) -> dict:
    schedule = traj.schedule
    mu, cert = pe_constant(sc, schedule)
    rep = {"name": sc.name, "pe": cert}
    if not mu > 0:
        rep["error"] = "schedule is not persistently exciting; dissipation estimates do not apply"
        return rep
    consts = ly.compute_constants(traj, sc.tau, min(mu, 1.0))
    rep["constants"] = consts.to_dict()
    rep["quadrature_error"] = f"O(h^2), h = {traj.step:.3g}"
    if sc.order == "first":
        diss = ly.check_consensus_dissipation(traj, consts)
        fit = fit_exponential_rate(traj.times, traj.X)
        rep["consensus_dissipation"] = diss.to_dict()
        rep["rate_vs_alpha"] = {"rate": fit.rate, "alpha": consts.alpha, "ok": bool(fit.rate >= 0.9 * consts.alpha)}
        return rep
    hyp = _kernel_hypothesis(traj.kernel)
    grid = list(sc.eps0_grid) if sc.eps0_grid else list(DEFAULT_EPS0_GRID)
    eps0 = sc.eps0
    if hyp is not None:
        rows = ly.bound_sweep(traj, consts, grid, hyp)
        rep["bound_sweep"] = [r.to_dict() for r in rows]
        if eps0 is None:
            best = ly.sweep_optimal_eps0(rows, traj.t_end) or max(rows, key=lambda r: r.T)
            eps0 = best.eps0
            rep["sweep_optimal_eps0"] = best.to_dict()
        rk = ly.rescaled_kernel_for(traj, consts.tau)
        fb = ly.flocking_bound(ly.FlockingTuning(eps0, consts.c, consts.tau), consts, rk, float(traj.V[0]), hyp)
        rep["flocking_bound"] = fb.to_dict()
    else:
        rep["flocking_bound"] = None
        rep["note"] = "kernel does not carry a strong-interaction power law with beta in (0, 1/2); bounds skipped"
    if eps0 is None:
        eps0 = grid[0]
    tuning = ly.FlockingTuning(eps0, consts.c, consts.tau)
    rep["tuning"] = {"eps0": eps0, "T_eps0": tuning.T_eps0, **tuning.coefficients()}
    rep["flocking_dissipation"] = ly.check_flocking_dissipation(traj, tuning, consts).to_dict()
    return rep


# ---------------------------------------------------------------- commands


def _scenario(args) -> tuple:
    if not args.config:
        raise ScenarioError("--config is required")
    sc = load_scenario(args.config)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    return sc, Path(args.config).resolve().parent


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    sc, base = _scenario(args)
    traj = simulate(sc, base)
    out = _out_dir(args)
    write_trajectory_csv(traj, out / sc.outputs["trajectory"])
    if sc.outputs.get("states"):
        write_state_dump(traj, out / sc.outputs["states"])
    rep = detection_report(sc, traj)
    write_json(rep, out / sc.outputs["report"])
    print(json.dumps(_finite(rep), default=_json_default))
    return EXIT_OK


def _schedule_and_horizon(args):
    doc = json.loads(Path(args.config).read_text())
    base = Path(args.config).resolve().parent
    if "schedule" in doc:
        sc = scenario_from_dict(doc)
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
        s = sc.build_schedule(base)
        taus = [sc.tau]
        return s, (None if s.period is not None else sc.t_end), taus, sc.mu
    n = doc.get("n_agents")
    if n is None:
        raise ScenarioError("a bare schedule spec needs n_agents")
    spec = {k: v for k, v in doc.items() if k != "n_agents"}
    if args.seed is not None and spec.get("kind") == "bernoulli":
        spec["seed"] = args.seed
    try:
        s = schedule_from_dict(spec, int(n), base)
    except (ScheduleError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid schedule: {exc}") from exc
    tau = doc.get("tau", s.period)
    return s, s.horizon, [tau] if tau else [], doc.get("mu")


def cmd_verify_pe(args) -> int:
    if not args.config:
        raise ScenarioError("--config is required")
    try:
        s, horizon, taus, mu = _schedule_and_horizon(args)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config is not valid JSON: {exc}") from exc
    if args.tau:
        taus = [float(t) for t in args.tau.split(",")]
    if not taus:
        raise ScenarioError("no tau given")
    mu = args.mu if args.mu is not None else mu
    if mu is None:
        raise ScenarioError("no mu given (scenario field or --mu)")
    conv = Convention(args.convention)
    try:
        certs = [check_pe(s, t, float(mu), horizon=horizon, convention=conv) for t in taus]
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    doc = {
        "certificates": [c.to_dict() for c in certs],
        "estimates": [{"tau": t, "mu_star": m} for t, m in estimate_pe_params(s, taus, horizon, conv)],
    }
    if args.prop43_slots:
        doc["prop43"] = [check_prop_43(s, t, args.prop43_slots, float(mu), conv).to_dict() for t in taus]
    write_json(doc, _out_dir(args) / "pe.json")
    print(json.dumps(_finite(doc), default=_json_default))
    return EXIT_OK if all(c.holds for c in certs) else EXIT_PE_FAIL


def cmd_monitor(args) -> int:
    sc, base = _scenario(args)
    out = _out_dir(args)
    states = Path(args.states) if args.states else out / (sc.outputs.get("states") or "states.csv")
    if states.exists():
        traj = read_state_dump(states, sc.build_schedule(base), sc.build_kernel())
    else:
        log.info("no state dump at %s; simulating", states)
        traj = simulate(sc, base)
    rep = lyapunov_report(sc, traj)
    write_json(rep, out / "lyapunov.json")
    print(json.dumps(_finite(rep), default=_json_default))
    return EXIT_OK


def _set_field(d: dict, path: str, value) -> None:
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            raise ScenarioError(f"sweep axis {path!r} does not name a scenario field")
        cur = cur[k]
    cur[keys[-1]] = value


def sweep_row(task) -> dict:
    """One sweep point. Never raises: failures become row content."""
    doc, axis, value, base = task
    row = {"axis": axis, "value": value}
    try:
        d = copy.deepcopy(doc)
        _set_field(d, axis, value)
        sc = scenario_from_dict(d)
        traj = simulate(sc, Path(base) if base else None)
        det = detection_report(sc, traj)
        row.update(status="ok", **{k: det[k] for k in det if k not in ("name", "order")})
        if sc.order == "second" and sc.eps0 is not None and _kernel_hypothesis(traj.kernel):
            mu, _ = pe_constant(sc, traj.schedule)
            consts = ly.compute_constants(traj, sc.tau, min(mu, 1.0))
            rows = ly.bound_sweep(traj, consts, [sc.eps0], _kernel_hypothesis(traj.kernel))
            r = rows[0]
            row.update(eps0=r.eps0, T=r.T, x_m=r.x_m, v_bound_at_T=r.v_bound_at_T, v_sim=r.v_sim, bound_ok=r.v_ok and r.x_ok)
    except (ScenarioError, SimulationError, ValueError) as exc:
        row.update(status="error", message=str(exc))
    return row


def run_sweep(doc: dict, axis: str, values: Sequence, threads: int = 1, base: Optional[str] = None) -> list:
    tasks = [(doc, axis, v, base) for v in values]
    if not tasks:
        return []
    if threads <= 1:
        return [sweep_row(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(sweep_row, tasks))


def _parse_value(tok: str):
    try:
        return int(tok)
    except ValueError:
        try:
            return float(tok)
        except ValueError:
            return tok


def cmd_sweep(args) -> int:
    sc, base = _scenario(args)
    if not args.axis:
        raise ScenarioError("--axis is required")
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()] if args.values else []
    rows = run_sweep(sc.to_dict(), args.axis, values, args.threads, str(base))
    out = _out_dir(args)
    write_json({"axis": args.axis, "rows": rows}, out / "sweep.json")
    lead = ["axis", "value", "status"]
    cols = lead + sorted({k for r in rows for k in r} - set(lead))
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        wr.writerows(rows)
    print(json.dumps(_finite({"axis": args.axis, "rows": rows}), default=_json_default))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--seed", type=int, default=None, help="override every seed in the scenario")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flockyap", description="Flocking and consensus under lossy communication")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate a scenario")
    pe = sub.add_parser("verify-pe", parents=[common], help="certify persistence of excitation")
    pe.add_argument("--tau", help="comma-separated window lengths")
    pe.add_argument("--mu", type=float, default=None)
    pe.add_argument("--convention", choices=[c.value for c in Convention], default="normalized")
    pe.add_argument("--prop43-slots", type=int, default=None, help="also check the slot-average criterion")
    mon = sub.add_parser("monitor-lyapunov", parents=[common], help="evaluate Lyapunov functionals and bounds")
    mon.add_argument("--states", help="state dump (default: <out>/<outputs.states>, simulated if absent)")
    sw = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    sw.add_argument("--axis", help="dotted scenario field, e.g. kernel.beta or eps0")
    sw.add_argument("--values", default="", help="comma-separated axis values")
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-pe": cmd_verify_pe,
    "monitor-lyapunov": cmd_monitor,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
