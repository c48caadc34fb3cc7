"""Command line entry point: ``runaway-lab {run,oracle,sweep,analyze}``.

Exit codes: 0 success, 2 usage or config error, 3 integrity failure,
4 stiffness failure, 5 file-format error.
"""

from __future__ import annotations

import argparse
import logging
import math
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import diagnostics as diag
from . import io
from .errors import ConfigError, EmptyDataError, InvalidHistory, InvalidParameter, RunawayLabError

log = logging.getLogger("runaway_lab")

SWEEP_AXES = {
    "xidot0": "body.xidot0",
    "alpha": "potential.alpha",
    "E": "body.E",
    "resolution": None,
}
SWEEP_COLUMNS = (
    "value", "ok", "exit_code", "label", "xidot_final", "min_xidot_ratio", "above_half", "slope", "slope_rel_err",
    "momentum_max_rel", "energy_max_rel", "F_tail_mean", "friction_exponent", "friction_prefactor",
    "n_events", "max_ordinal",
)


# ---------------------------------------------------------------------------
# configuration plumbing


def parse_overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", item)
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides, require=True):
    if path is None:
        if require:
            raise ConfigError("--config is required", "--config")
        cfg = cfgmod.SimConfig()
    else:
        cfg = cfgmod.load(path)
    return cfg.with_overrides(parse_overrides(overrides))


def worker_count(n_jobs):
    env = os.environ.get("RUNAWAY_LAB_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"RUNAWAY_LAB_THREADS must be an integer, got {env!r}", "RUNAWAY_LAB_THREADS") from None
    return max(1, min(cap, n_jobs))


# ---------------------------------------------------------------------------
# operations shared by the subcommands and the tests


def run_to_dir(cfg, out_dir):
    """Run ``cfg`` and write trajectory, events, ledger and summary into ``out_dir``."""
    from .kinetics import run

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, out / "config.ini")
    traj = run(cfg)
    summary = diag.summarize(traj, cfg)
    summary["runaway"] = diag.runaway_label(summary)
    io.write_run(out, traj, summary, cfg)
    return traj, summary


def oracle_to_csv(cfg, path):
    from .kinetics import potential_from_config

    d = cfg.diagnostics
    if not d.oracle_v or not d.oracle_eta:
        raise ConfigError("oracle needs nonempty diagnostics.oracle_v and diagnostics.oracle_eta",
                          "diagnostics.oracle_v" if not d.oracle_v else "diagnostics.oracle_eta")
    rows = diag.oracle_table(potential_from_config(cfg), d.oracle_v, d.oracle_eta, d.oracle_tol)
    io.write_oracle(path, rows)
    return rows


def analyze_dir(run_dir, out_dir=None, plots=True):
    """Offline diagnostics for a run directory; writes report.json and SVG plots."""
    traj, doc = io.read_run(run_dir)
    cfg = cfgmod.from_dict(doc["config"]) if "config" in doc else None
    out = Path(out_dir) if out_dir is not None else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = diag.summarize(traj, cfg)
    report["runaway"] = diag.runaway_label(report)
    report["ordinals_consistent"] = diag.check_ordinals(traj.events)
    ev_sum, impulse = diag.event_completeness(traj)
    report["event_completeness"] = {"events_sum": ev_sum, "impulse": impulse}

    M, E, v0 = traj.meta["M"], traj.meta["E"], traj.meta["xidot0"]
    fit = report.get("friction_fit")
    # smallest C1 with |F| <= C1 / xidot along the whole run; a short run's
    # fitted prefactor belongs to a different exponent and is not a bound
    m = traj.t > 0
    C1 = float(np.max(np.abs(traj.F_fric[m]) * traj.xidot[m])) if np.any(m) else 0.0
    curve = diag.comparison_ode(M, E, C1, 1.0, v0, float(traj.t[-1]), t_eval=traj.t)
    report["comparison"] = {
        "C1": C1, "C1_fit": fit["prefactor"] if fit and fit["reliable"] else None, "p": 1.0,
        "stalled": curve.stalled,
        "min_margin": float(np.min(traj.xidot[: len(curve.phidot)] - curve.phidot)),
        "dominates": bool(np.all(traj.xidot[: len(curve.phidot)] >= curve.phidot - curve.error_estimate)),
    }

    pot = traj.meta.get("potential", {})
    budgets = None
    if pot.get("kind") == "singular" and cfg is not None and len(traj.events):
        speeds = list(cfg.diagnostics.obs_speeds)
        if not speeds:
            half_lo = float(np.interp(traj.t[0] + 1.0, traj.t, traj.xidot))
            speeds = np.geomspace(max(1.25 * v0, half_lo), 0.9 * traj.xidot[-1], 5).tolist()
        try:
            afit, budgets = diag.annulus_sweep(traj, speeds, cfg.diagnostics.epsilon,
                                               cfg.diagnostics.obs_window, alpha=pot.get("alpha"))
            report["annulus"] = {"fit": afit.to_dict() if afit else None, "budgets": budgets}
        except (InvalidParameter, InvalidHistory, EmptyDataError) as exc:
            report["annulus"] = {"error": str(exc)}
    io.write_json(out / "report.json", report)
    if plots:
        _plots(out, traj, report, budgets)
    return report


def _plots(out, traj, report, budgets):
    from . import svgplot

    t = np.asarray(traj.t)
    m = t > 0
    E_over_M = traj.meta["E"] / traj.meta["M"]
    svgplot.guide_plot(out / "xidot_over_t.svg", t[m], traj.xidot[m] / t[m], E_over_M,
                       title="body speed / time", ylabel="xidot / t")
    fit = report.get("friction_fit")
    if fit:
        f = diag.PowerLawFit(fit["exponent"], fit["prefactor"], fit["r_squared"], tuple(fit["x_range"]), fit["n"])
        svgplot.power_law_panel(out / "friction_fit.svg", traj.xidot[m], traj.F_fric[m], f,
                                title="friction against speed", xlabel="xidot", ylabel="|F_fric|")
    if budgets:
        b = budgets[-1]
        labels = ["disk"] + [str(k) for k in range(1, len(b["per_bin"]))]
        svgplot.bar_chart(out / "annulus.svg", labels, b["per_bin"],
                          title=f"annulus budget at xidot = {b['xidot_ref']:.3g}", ylabel="momentum loss rate")


# ---------------------------------------------------------------------------
# sweeps


def member_config(base, axis, value):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}", "--axis")
    if axis == "resolution":
        g, it = base.grid, base.integration
        return base.with_overrides({"grid.dx": g.dx * value, "grid.deta": g.deta * value,
                                    "integration.dt_max": it.dt_max * value,
                                    "integration.c_res": it.c_res * value})
    if axis == "alpha" and base.potential.kind != "singular":
        raise ConfigError("alpha sweeps need potential.kind = singular", "potential.kind")
    return base.with_overrides({SWEEP_AXES[axis]: float(value)})


def _sweep_member(job):
    """Run one sweep member; never raises so the sweep can continue."""
    cfg_dict, out_dir, value = job
    row = {c: math.nan for c in SWEEP_COLUMNS}
    row.update(value=value, ok=False, exit_code=0, label="failed", above_half=False, n_events=0, max_ordinal=0)
    try:
        cfg = cfgmod.from_dict(cfg_dict).validate()
        traj, s = run_to_dir(cfg, out_dir)
    except RunawayLabError as exc:
        row["exit_code"] = exc.exit_code
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(out_dir) / "failure.json",
                      {"error": type(exc).__name__, "message": str(exc), "dump": getattr(exc, "dump", {})})
        return row
    n = len(traj.t)
    tail = slice(int(0.75 * n), n)
    row.update(
        ok=True,
        xidot_final=s["xidot_final"],
        min_xidot_ratio=s["assumption_monitor"]["min_xidot_ratio"],
        slope=s["runaway_slope"]["slope"],
        slope_rel_err=s["runaway_slope"]["rel_err"],
        label=s["runaway"],
        above_half=bool(s["assumption_monitor"]["above_half"]),
        momentum_max_rel=s["ledgers"]["momentum_max_rel"],
        energy_max_rel=s["ledgers"]["energy_max_rel"],
        F_tail_mean=float(np.mean(traj.F_fric[tail])),
        n_events=s["events"]["n"],
        max_ordinal=s["events"]["max_ordinal"],
    )
    if s.get("friction_fit"):
        row["friction_exponent"] = s["friction_fit"]["exponent"]
        row["friction_prefactor"] = s["friction_fit"]["prefactor"]
    return row


def _run_jobs(jobs):
    workers = worker_count(len(jobs))
    if workers == 1:
        return [_sweep_member(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn")) as pool:
        return list(pool.map(_sweep_member, jobs))


def sweep(base, axis, values, out_dir, bisect=0):
    """Run one configuration per value; returns (rows, report)."""
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value", "--values")
    if any(b <= a for a, b in zip(values, values[1:])) and axis != "resolution":
        raise ConfigError("sweep values must be strictly increasing", "--values")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfgmod.to_dict(member_config(base, axis, v)), str(out / f"{axis}_{i:02d}"), v)
            for i, v in enumerate(values)]
    rows = _run_jobs(jobs)
    report = {"axis": axis, "values": values, "labels": {}}
    for r in rows:
        report["labels"][repr(r["value"])] = r["label"]

    if axis == "resolution":
        report["convergence"] = _convergence(rows)
    if axis == "xidot0":
        ok = [r for r in rows if r["ok"] and r["F_tail_mean"] != 0 and np.isfinite(r["F_tail_mean"])]
        if len(ok) >= 3:
            try:
                report["friction_fit"] = diag.fit_power_law([r["xidot_final"] for r in ok],
                                                            [r["F_tail_mean"] for r in ok], min_points=3).to_dict()
            except EmptyDataError:
                report["friction_fit"] = None
        if bisect:
            report["bisection"] = _bisect(base, rows, out, bisect)
    io.write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    io.write_json(out / "sweep.json", report)
    return rows, report


def _convergence(rows):
    """Ledger residual ratios between successive resolutions and the fitted order."""
    ok = [r for r in rows if r["ok"]]
    out = {"momentum_ratios": [], "energy_ratios": [], "energy_order": None}
    for a, b in zip(ok, ok[1:]):
        out["momentum_ratios"].append(a["momentum_max_rel"] / b["momentum_max_rel"] if b["momentum_max_rel"] else None)
        out["energy_ratios"].append(a["energy_max_rel"] / b["energy_max_rel"] if b["energy_max_rel"] else None)
    if len(ok) >= 2 and all(r["energy_max_rel"] > 0 for r in ok):
        x = np.log([r["value"] for r in ok])
        y = np.log([r["energy_max_rel"] for r in ok])
        out["energy_order"] = float(np.polyfit(x, y, 1)[0])
    return out


def _bisect(base, rows, out, iterations):
    """Shrink the bracket [largest failing xidot0, smallest passing xidot0].

    A value passes when the body speed stays above half its initial value
    for the whole run.
    """
    ok = sorted((r for r in rows if r["ok"]), key=lambda r: r["value"])
    lo = max((r["value"] for r in ok if not r["above_half"]), default=None)
    hi = min((r["value"] for r in ok if r["above_half"] and (lo is None or r["value"] > lo)), default=None)
    history = []
    if lo is None or hi is None:
        return {"bracket": [lo, hi], "history": history, "resolved": False}
    for k in range(iterations):
        mid = 0.5 * (lo + hi)
        r = _sweep_member((cfgmod.to_dict(member_config(base, "xidot0", mid)), str(out / f"bisect_{k:02d}"), mid))
        history.append({"xidot0": mid, "ok": r["ok"], "above_half": r["above_half"], "label": r["label"]})
        if not r["ok"]:
            break
        if r["above_half"]:
            hi = mid
        else:
            lo = mid
    return {"bracket": [lo, hi], "history": history, "resolved": True}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry, e.g. body.E=0.5 (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.directory)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    ap = argparse.ArgumentParser(prog="runaway-lab", description="Forced body in a cold Vlasov fluid.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate one configuration")
    sub.add_parser("oracle", parents=[common], help="frozen-body scattering table")
    sp = sub.add_parser("sweep", parents=[common], help="run a family of configurations")
    sp.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sp.add_argument("--values", required=True, help="comma separated, increasing")
    sp.add_argument("--bisect", type=int, default=0, metavar="N",
                    help="xidot0 axis only: N bisection steps on the runaway threshold")
    an = sub.add_parser("analyze", parents=[common], help="offline diagnostics for a run directory")
    an.add_argument("run_dir")
    an.add_argument("--no-plots", action="store_true")
    return ap


def _values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --values {text!r}", "--values") from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.overrides)
            out = Path(args.out or cfg.output.directory)
            try:
                traj, s = run_to_dir(cfg, out)
            except RunawayLabError as exc:
                if getattr(exc, "dump", None):
                    io.write_json(out / "failure.json", {"error": type(exc).__name__, "message": str(exc),
                                                         "dump": exc.dump})
                raise
            log.info("t=%.6g xidot=%.6g slope=%.6g (%s); %d events",
                     s["t_final"], s["xidot_final"], s["runaway_slope"]["slope"], s["runaway"], s["events"]["n"])
        elif args.command == "oracle":
            cfg = load_config(args.config, args.overrides, require=False)
            out = Path(args.out or cfg.output.directory)
            out.mkdir(parents=True, exist_ok=True)
            rows = oracle_to_csv(cfg, out / "oracle.csv")
            bad = sum(not r["ok"] for r in rows)
            log.info("%d rows written to %s (%d flagged)", len(rows), out / "oracle.csv", bad)
        elif args.command == "sweep":
            cfg = load_config(args.config, args.overrides)
            if args.bisect and args.axis != "xidot0":
                raise ConfigError("--bisect only applies to the xidot0 axis", "--bisect")
            out = Path(args.out or cfg.output.directory)
            rows, report = sweep(cfg, args.axis, _values(args.values), out, args.bisect)
            for r in rows:
                log.info("%s=%g: %s", args.axis, r["value"], report["labels"][repr(r["value"])])
        elif args.command == "analyze":
            report = analyze_dir(args.run_dir, args.out, plots=not args.no_plots)
            log.info("slope %.6g, label %s", report["runaway_slope"]["slope"], report["runaway"])
    except RunawayLabError as exc:
        key = getattr(exc, "key", None)
        msg = f"error: {exc}" + (f" [{key}]" if key and key not in str(exc) else "")
        print(msg, file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
