"""Measurements on trajectories, event logs and oracle sweeps.

Everything here is a pure function of its inputs.  Event-level functions
accept either a list of :class:`CollisionEvent` or the structured array held
in ``Trajectory.events``; internally they work on column arrays.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import EmptyDataError, InvalidHistory, InvalidParameter

# ---------------------------------------------------------------------------
# types


@dataclass
class CollisionEvent:
    pid: int
    tau: float
    delta: float
    eta: float
    dp: np.ndarray
    r_min: float
    zeta: float
    ordinal: int
    sigma: float
    weight: float = 0.0
    xidot_exit: float = float("nan")  # body speed at the end of the window
    truncated: bool = False

    @property
    def zeta_inverse(self):
        """max of 1 / xidot over the window, the inverse-speed reading of zeta."""
        return 1.0 / self.zeta if self.zeta > 0 else float("inf")


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float
    x_range: tuple
    n: int
    reliable: bool = True

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent

    def to_dict(self):
        d = asdict(self)
        d["x_range"] = list(self.x_range)
        return d


@dataclass
class ComparisonCurve:
    t: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray
    M: float
    E: float
    C1: float
    p: float
    phidot0: float
    stalled: bool = False
    t_stall: float = float("nan")
    error_estimate: float = 0.0

    def phidot_at(self, t):
        return np.interp(t, self.t, self.phidot)


# ---------------------------------------------------------------------------
# events


def _columns(events):
    """Column arrays for either a structured event array or a list of events."""
    if isinstance(events, np.ndarray) and events.dtype.names:
        ev = events
        dp = np.column_stack([ev["vout_x"] - ev["vin_x"], ev["vout_y"] - ev["vin_y"], ev["vout_z"] - ev["vin_z"]])
        return {
            "pid": ev["pid"].astype(np.int64),
            "ordinal": ev["ordinal"].astype(np.int64),
            "tau": ev["tau"].astype(float),
            "delta": (ev["t_exit"] - ev["tau"]).astype(float),
            "eta": ev["eta"].astype(float),
            "sigma": ev["sigma"].astype(float),
            "dp": dp,
            "r_min": ev["r_min"].astype(float),
            "zeta": ev["vb_min"].astype(float),
            "xidot_exit": ev["vb_max"].astype(float),
            "weight": ev["weight"].astype(float),
            "truncated": ev["truncated"].astype(bool),
        }
    events = list(events)
    if not events:
        return {k: np.zeros((0, 3) if k == "dp" else 0) for k in
                ("pid", "ordinal", "tau", "delta", "eta", "sigma", "dp", "r_min", "zeta", "xidot_exit",
                 "weight", "truncated")}
    out = {}
    for k in ("pid", "ordinal"):
        out[k] = np.array([getattr(e, k) for e in events], dtype=np.int64)
    for k in ("tau", "delta", "eta", "sigma", "r_min", "zeta", "xidot_exit", "weight"):
        out[k] = np.array([getattr(e, k) for e in events], dtype=float)
    out["dp"] = np.array([e.dp for e in events], dtype=float).reshape(-1, 3)
    out["truncated"] = np.array([e.truncated for e in events], dtype=bool)
    return out


def extract_collisions(traj, include_truncated=True):
    """One :class:`CollisionEvent` per support window, ordered by entry time.

    Windows still open when the run ended are flagged ``truncated``; the
    fitting functions skip them.
    """
    c = _columns(traj.events)
    out = []
    for i in range(len(c["tau"])):
        if c["truncated"][i] and not include_truncated:
            continue
        out.append(
            CollisionEvent(
                pid=int(c["pid"][i]),
                tau=float(c["tau"][i]),
                delta=float(c["delta"][i]),
                eta=float(c["eta"][i]),
                dp=c["dp"][i].copy(),
                r_min=float(c["r_min"][i]),
                zeta=float(c["zeta"][i]),
                ordinal=int(c["ordinal"][i]),
                sigma=float(c["sigma"][i]),
                weight=float(c["weight"][i]),
                xidot_exit=float(c["xidot_exit"][i]),
                truncated=bool(c["truncated"][i]),
            )
        )
    return out


def _complete(c):
    keep = ~c["truncated"]
    return {k: v[keep] for k, v in c.items()}


def check_ordinals(events):
    """True when, per particle, entry times strictly increase with ordinal."""
    c = _columns(events)
    if len(c["pid"]) == 0:
        return True
    order = np.lexsort((c["ordinal"], c["pid"]))
    pid = c["pid"][order]
    ordn = c["ordinal"][order]
    tau = c["tau"][order]
    same = pid[1:] == pid[:-1]
    first = np.concatenate([[True], ~same])
    if np.any(ordn[first] != 1):
        return False
    return bool(np.all(ordn[1:][same] == ordn[:-1][same] + 1) and np.all(tau[1:][same] > tau[:-1][same]))


def duration_check(events, r0, zeta_threshold):
    """Check delta * zeta <= 5 r0 for every complete event with zeta >= threshold."""
    c = _complete(_columns(events))
    gate = c["zeta"] >= zeta_threshold
    ratio = c["delta"][gate] * c["zeta"][gate] / r0
    bad = np.flatnonzero(ratio > 5.0)
    return {
        "n_checked": int(gate.sum()),
        "n_excluded": int((~gate).sum()),
        "zeta_threshold": float(zeta_threshold),
        "max_delta_zeta_over_r0": float(ratio.max()) if len(ratio) else float("nan"),
        # same bound written with the inverse-speed convention: delta / max(1/xidot)
        "max_delta_over_zeta_inverse_r0": float(ratio.max()) if len(ratio) else float("nan"),
        "bound": 5.0,
        "violations": [int(c["pid"][gate][i]) for i in bad[:100]],
        "n_violations": int(len(bad)),
        "passed": bool(len(bad) == 0),
    }


# ---------------------------------------------------------------------------
# fits


def fit_power_law(x, y, min_points=5, unreliable_below=0.95):
    """Least-squares fit of log|y| = log(prefactor) + exponent * log x.

    Non-positive and non-finite samples are dropped; fewer than
    ``min_points`` usable samples raise :class:`EmptyDataError`.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if ok.sum() < min_points:
        raise EmptyDataError(f"need at least {min_points} positive samples, got {int(ok.sum())}")
    lx = np.log(x[ok])
    ly = np.log(y[ok])
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    return PowerLawFit(float(slope), float(math.exp(icpt)), r2, (float(x[ok].min()), float(x[ok].max())),
                       int(ok.sum()), r2 >= unreliable_below)


def oracle_table(p, Vs, etas, tol=1e-10):
    """Cartesian sweep of the frozen-body oracle; failed rows carry ok=False and NaNs."""
    from .errors import AccuracyFailure
    from .kinetics import frozen_scattering

    rows = []
    for V in Vs:
        for eta in etas:
            try:
                r = frozen_scattering(p, V, eta, tol=tol)
                rows.append({"V": float(V), "eta": float(eta), "dv_par": r.dv_par, "dv_perp": r.dv_perp,
                             "r_min": r.r_min, "delta": r.delta, "p_drift_max": r.p_drift_max, "ok": True})
            except AccuracyFailure:
                rows.append({"V": float(V), "eta": float(eta), "dv_par": np.nan, "dv_perp": np.nan,
                             "r_min": np.nan, "delta": np.nan, "p_drift_max": np.nan, "ok": False})
    return rows


def transfer_scaling(rows):
    """Power-law fits of |dv_perp| and |dv_par| against V at fixed eta."""
    V = np.array([r["V"] if isinstance(r, dict) else r.V for r in rows])
    perp = np.array([r["dv_perp"] if isinstance(r, dict) else r.dv_perp for r in rows])
    par = np.array([r["dv_par"] if isinstance(r, dict) else r.dv_par for r in rows])
    return fit_power_law(V, perp), fit_power_law(V, par)


def friction_scaling(speeds, forces):
    """Fit |F_fric| against body speed; all-zero forces raise EmptyDataError."""
    forces = np.asarray(forces, dtype=float)
    if forces.size == 0 or not np.any(forces != 0.0):
        raise EmptyDataError("no nonzero friction samples")
    return fit_power_law(speeds, forces)


def friction_quadrature(p, V, rho0, n_nodes=48, tol=1e-10):
    """Steady friction on a body at constant V from the frozen oracle.

    Each ring of radius eta swept per unit time gains momentum
    rho0 * V * 2 pi eta * dv_par(eta); the body loses the same amount.
    Gauss-Legendre in eta over [0, r0].
    """
    from scipy.special import roots_legendre

    from .kinetics import frozen_scattering

    r0 = p.r0
    x, w = roots_legendre(n_nodes)
    etas = 0.5 * r0 * (x + 1.0)
    vals = np.array([2.0 * math.pi * e * frozen_scattering(p, V, e, tol=tol).dv_par for e in etas])
    return -rho0 * V * 0.5 * r0 * math.fsum(w * vals)


def measure_frozen_friction(cfg, V, travel=(4.0, 12.0), periods_per_sample=1):
    """Time-averaged friction on a body held at constant speed V in the kinetic model.

    The average runs over body travel ``travel`` (in units of r0) and is
    taken over whole lattice periods dx / V so the slab discreteness cancels.
    """
    from .kinetics import run

    r0 = cfg.potential.r0
    period = cfg.grid.dx / V
    n_per = max(1, int(periods_per_sample))
    interval = n_per * period
    k0 = int(math.ceil(travel[0] * r0 / V / interval))
    k1 = int(math.floor(travel[1] * r0 / V / interval))
    if k1 - k0 < 1:
        raise InvalidParameter("averaging window shorter than one lattice period")
    c = cfg.with_overrides({
        "body.xidot0": float(V),
        "body.E": 0.0,
        "integration.frozen": True,
        "integration.sample_interval": interval,
        "integration.t_max": k1 * interval,
    })
    tr = run(c)
    F = tr.F_fric[k0 + 1: k1 + 1]
    return float(np.mean(F)), tr


# ---------------------------------------------------------------------------
# singular-potential laws


def rmin_scaling(p, Vs, tol=1e-10):
    """Head-on closest approach against V, fitted as a power law.

    Returns ``(fit, rows, contaminated)``; any r_min within 2 rcap of the
    cap marks the sweep as cap-contaminated.
    """
    from .kinetics import frozen_scattering

    rows = [frozen_scattering(p, V, 0.0, tol=tol) for V in Vs]
    rmin = np.array([r.r_min for r in rows])
    contaminated = bool(p.kind == "singular" and np.any(rmin <= 2.0 * p.rcap))
    return fit_power_law(np.asarray(Vs, dtype=float), rmin), rows, contaminated


def annulus_edges(xidot_ref, epsilon, r0):
    eta0 = float(xidot_ref) ** (-(1.0 + epsilon))
    k_star = max(0, int(math.ceil(math.log2(r0 / eta0)))) if eta0 < r0 else 0
    return eta0, eta0 * np.exp2(np.arange(k_star + 1))


def annulus_bin(eta, eta0):
    """0 for the inner disk eta <= eta0, else ceil(log2(eta / eta0))."""
    eta = np.asarray(eta, dtype=float)
    out = np.zeros(eta.shape, dtype=np.int64)
    out_mask = eta > eta0
    k = np.ceil(np.log2(eta[out_mask] / eta0)).astype(np.int64)
    # guard against rounding right at a boundary eta = 2^k eta0
    lo = eta0 * np.exp2(k - 1)
    k = np.where(eta[out_mask] <= lo, k - 1, k)
    out[out_mask] = np.maximum(k, 1)
    return out


def annulus_budget(events, xidot_ref, epsilon, r0=1.0, window=None, alpha=None):
    """Momentum loss split by impact-parameter annuli eta_k = 2^k eta0.

    ``window=(t_a, t_b)`` restricts to events entering in that interval and
    turns sums into rates.  Bins use the impact parameter at window entry.
    """
    no_theorem = False
    if alpha is not None and not (0.0 < epsilon < 2.0 / alpha - 1.0):
        if 2.0 / alpha - 1.0 <= 0.0:
            no_theorem = True
            epsilon = 0.0
        else:
            raise InvalidParameter(f"epsilon must lie in (0, {2.0 / alpha - 1.0:.4g}) for alpha={alpha}")
    c = _complete(_columns(events))
    if window is not None:
        keep = (c["tau"] >= window[0]) & (c["tau"] < window[1])
        c = {k: v[keep] for k, v in c.items()}
        span = window[1] - window[0]
    else:
        span = 1.0
    eta0, edges = annulus_edges(xidot_ref, epsilon, r0)
    bins = annulus_bin(c["sigma"], eta0)
    n_bins = len(edges)
    loss = c["weight"] * np.abs(c["dp"][:, 0])
    per_bin = np.zeros(n_bins + 1)
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    np.add.at(per_bin, np.minimum(bins, n_bins), loss)
    np.add.at(counts, np.minimum(bins, n_bins), 1)
    per_bin /= span
    inner_elastic = 2.0 * xidot_ref * float(np.sum(c["weight"][bins == 0])) / span
    return {
        "xidot_ref": float(xidot_ref),
        "epsilon": float(epsilon),
        "eta0": eta0,
        "edges": edges.tolist(),
        "counts": counts.tolist(),
        "per_bin": per_bin.tolist(),
        "inner": float(per_bin[0]),
        "inner_elastic_envelope": inner_elastic,
        "I": float(math.fsum(per_bin[1:])),
        "n_events": int(len(bins)),
        "unique_binning": bool(counts.sum() == len(bins)),
        "no_theorem": no_theorem,
    }


def annulus_sweep(traj, speeds, epsilon, travel=20.0, alpha=None):
    """Annulus budgets at several observation speeds along one run.

    Each window is centred on the time the body passes ``V`` and spans a body
    travel of ``travel`` (in units of length), so its half-width is
    ``travel / (2 V)``.  Returns ``(fit of I against V, budgets)``; the fit is
    ``None`` with fewer than three usable speeds.
    """
    r0 = traj.meta["r0"]
    t, v = np.asarray(traj.t), np.asarray(traj.xidot)
    if np.any(np.diff(v) <= 0):
        raise InvalidHistory("annulus windows need a monotonically accelerating body")
    budgets = []
    for V in speeds:
        if not v[0] <= V <= v[-1]:
            raise InvalidParameter(f"observation speed {V} outside the run's range [{v[0]:.4g}, {v[-1]:.4g}]")
        tc = float(np.interp(V, v, t))
        half = 0.5 * travel / V
        b = annulus_budget(traj.events, V, epsilon, r0=r0, window=(tc - half, tc + half), alpha=alpha)
        b["window"] = [tc - half, tc + half]
        budgets.append(b)
    I = np.array([b["I"] for b in budgets])
    fit = None
    if len(budgets) >= 3 and np.all(I > 0):
        fit = fit_power_law(np.asarray(speeds, dtype=float), I, min_points=3)
    return fit, budgets


def recollision_census(events, fit_min_points=5):
    """Count particles by number of windows and fit the recollision envelopes."""
    c = _complete(_columns(events))
    pid = c["pid"]
    report = {"n_events": int(len(pid)), "by_max_ordinal": {}}
    if len(pid) == 0:
        report.update(n_particles=0, momentum_fraction=0.0, ordinal2=[], envelope2=None, ordinal3=[])
        return report
    upid, inv = np.unique(pid, return_inverse=True)
    maxord = np.zeros(len(upid), dtype=np.int64)
    np.maximum.at(maxord, inv, c["ordinal"])
    vals, cnt = np.unique(maxord, return_counts=True)
    report["by_max_ordinal"] = {int(v): int(n) for v, n in zip(vals, cnt)}
    report["n_particles"] = int(len(upid))
    mom = c["weight"] * np.abs(c["dp"][:, 0])
    total = math.fsum(mom)
    multi = math.fsum(mom[c["ordinal"] >= 2])
    report["momentum_fraction"] = multi / total if total > 0 else 0.0
    # speed at the first window for every particle
    first = c["ordinal"] == 1
    v1 = dict(zip(pid[first].tolist(), c["zeta"][first].tolist()))
    pairs2 = [(float(s), v1.get(int(p), float("nan"))) for p, s in zip(pid[c["ordinal"] == 2], c["sigma"][c["ordinal"] == 2])]
    pairs3 = [(float(s), v1.get(int(p), float("nan"))) for p, s in zip(pid[c["ordinal"] == 3], c["sigma"][c["ordinal"] == 3])]
    report["ordinal2"] = pairs2
    report["ordinal3"] = pairs3
    report["envelope2"] = None
    if len(pairs2) >= fit_min_points:
        s, v = np.array(pairs2).T
        # envelope: largest sigma per speed bin
        edges = np.geomspace(v.min(), v.max() * (1 + 1e-12), min(10, len(v)) + 1)
        idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)
        env_v, env_s = [], []
        for b in range(len(edges) - 1):
            m = idx == b
            if np.any(m):
                j = np.argmax(np.where(m, s, -np.inf))
                env_v.append(v[j])
                env_s.append(s[j])
        try:
            report["envelope2"] = fit_power_law(env_v, env_s, min_points=min(fit_min_points, 3)).to_dict()
        except EmptyDataError:
            pass
    if pairs2:
        s, v = np.array(pairs2).T
        # smallest C with sigma <= C v^-2 for every recolliding particle
        report["envelope2_C"] = float(np.max(s * v**2))
    if pairs3:
        s, v = np.array(pairs3).T
        report["ordinal3_ratio_to_v_minus4"] = (s / v ** -4.0).tolist()
    return report


# ---------------------------------------------------------------------------
# comparison curve and run-level summaries


def comparison_ode(M, E, C1, p, xidot0, t_max, rtol=1e-8, n_samples=2001, t_eval=None):
    """Integrate M phi'' = E - C1 / phi'^p from phi = 0, phi' = (3/4) xidot0.

    A terminal event reports a stall once phi' has fallen to 1e-6 of its
    initial value (the drag diverges at phi' = 0, so the solution reaches
    zero in finite time right after).  ``error_estimate`` bounds the change
    of phi'(t_end) under tighter tolerances.
    """
    if C1 < 0 or not M > 0 or not xidot0 > 0:
        raise InvalidParameter("need C1 >= 0, M > 0 and xidot0 > 0")
    v0 = 0.75 * xidot0
    floor = 1e-6 * v0
    t_eval = np.asarray(t_eval, dtype=float) if t_eval is not None else np.linspace(0.0, t_max, n_samples)

    def solve(tol):
        def rhs(_, y):
            # continued flat below the floor so trial stages stay finite
            return [y[1], (E - C1 / max(y[1], floor) ** p) / M]

        def stall(_, y):
            return y[1] - floor

        stall.terminal = True
        stall.direction = -1.0
        return solve_ivp(rhs, (0.0, t_max), [0.0, v0], method="DOP853", rtol=tol,
                         atol=tol * 1e-3 * max(v0, 1.0), t_eval=t_eval, events=stall, dense_output=True)

    sol = solve(rtol)
    ref = solve(rtol * 1e-2)
    stalled = len(sol.t_events[0]) > 0
    t_stall = float(sol.t_events[0][0]) if stalled else float("nan")
    err = abs(float(sol.y[1][-1]) - float(ref.y[1][-1])) + rtol * abs(float(sol.y[1][-1]))
    return ComparisonCurve(sol.t, sol.y[0], sol.y[1], M, E, C1, p, v0, stalled, t_stall, err)


def runaway_slope(traj, tail_fraction=0.25):
    """Tail slope of xidot(t) and the pointwise ratio xidot(t_max)/t_max."""
    t = np.asarray(traj.t)
    v = np.asarray(traj.xidot)
    n = len(t)
    k = min(n - 2, int(math.floor((1.0 - tail_fraction) * (n - 1))))
    k = max(k, 0)
    slope = float(np.polyfit(t[k:], v[k:], 1)[0])
    E_over_M = traj.meta["E"] / traj.meta["M"]
    return {
        "slope": slope,
        "pointwise": float(v[-1] / t[-1]) if t[-1] > 0 else float("nan"),
        "transient": float(traj.meta["xidot0"] / t[-1]) if t[-1] > 0 else float("nan"),
        "E_over_M": E_over_M,
        "rel_err": abs(slope - E_over_M) / E_over_M if E_over_M > 0 else float("nan"),
        "tail_fraction": tail_fraction,
    }


def assumption_monitor(traj):
    """sup|xi''|, min xidot / xidot0, and the discarded transverse force."""
    v0 = traj.meta["xidot0"]
    sup_acc = max(float(traj.meta.get("sup_abs_xiddot", 0.0)), float(np.max(np.abs(traj.xiddot))))
    vmin = min(float(traj.meta.get("min_xidot", np.inf)), float(np.min(traj.xidot)))
    return {
        "sup_abs_xiddot": sup_acc,
        "min_xidot_ratio": vmin / v0,
        "above_half": bool(vmin > 0.5 * v0),
        "transverse_force_max": float(traj.meta.get("transverse_force_max", 0.0)),
        "ring_reduction": bool(traj.meta.get("ring_reduction", True)),
    }


def ledger_summary(traj):
    rp, re = traj.rel_ledgers()
    M = traj.meta["M"]
    v = np.maximum(np.abs(traj.xidot), 1e-300)
    return {
        "momentum_max_rel": float(rp.max()),
        "energy_max_rel": float(re.max()),
        "momentum_max_rel_Mxidot": float(np.max(np.abs(traj.ledger_p) / (M * v))),
        "energy_max_rel_Mxidot": float(np.max(np.abs(traj.ledger_e) / (M * v))),
    }


def event_completeness(traj):
    """Sum of w * dp_x over all windows (open ones included) versus the body's impulse.

    The two agree exactly up to rounding because force acts only inside the
    support; returns (events_sum, -impulse_total).
    """
    c = _columns(traj.events)
    s = math.fsum(c["weight"] * c["dp"][:, 0])
    return s, -float(traj.meta["impulse_total"])


def summarize(traj, cfg=None):
    """JSON-ready run summary: slope, assumption monitor, ledgers, fits, duration check."""
    d = cfg.diagnostics if cfg is not None else None
    tail = d.tail_fraction if d is not None else 0.25
    out = {
        "runaway_slope": runaway_slope(traj, tail),
        "assumption_monitor": assumption_monitor(traj),
        "ledgers": ledger_summary(traj),
        "xidot_final": float(traj.xidot[-1]),
        "xi_final": float(traj.xi[-1]),
        "t_final": float(traj.t[-1]),
    }
    c = _columns(traj.events)
    out["events"] = {"n": int(len(c["pid"])), "n_truncated": int(c["truncated"].sum()),
                     "max_ordinal": int(c["ordinal"].max()) if len(c["ordinal"]) else 0}
    if len(c["pid"]):
        out["duration_check"] = duration_check(traj.events, traj.meta["r0"], 0.5 * traj.meta["xidot0"])
        out["recollision_census"] = {k: v for k, v in recollision_census(traj.events).items()
                                     if k not in ("ordinal2", "ordinal3")}
    try:
        mask = traj.t > 0
        out["friction_fit"] = friction_scaling(traj.xidot[mask], traj.F_fric[mask]).to_dict()
    except EmptyDataError:
        out["friction_fit"] = None
    return out


def runaway_label(summary, tol=0.25):
    """'runaway', 'stalled' or 'undecided' from a run summary."""
    am = summary["assumption_monitor"]
    sl = summary["runaway_slope"]
    if not am["above_half"]:
        return "stalled"
    if sl["rel_err"] <= tol:
        return "runaway"
    return "undecided"
