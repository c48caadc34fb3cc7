import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from runaway_lab import diagnostics as diag
from runaway_lab.errors import EmptyDataError, InvalidParameter
from runaway_lab.kinetics import EVENT_DTYPE, frozen_scattering, run, trace_encounter
from runaway_lab.potential import make_capped_singular

from conftest import free_config, small_bump_config


@pytest.fixture(scope="module")
def short_run():
    return run(small_bump_config(**{"integration.t_max": 3.0}))


@pytest.fixture(scope="module")
def free_run():
    return run(free_config())


def _events(rows):
    ev = np.zeros(len(rows), dtype=EVENT_DTYPE)
    for i, r in enumerate(rows):
        for k, v in r.items():
            ev[i][k] = v
    return ev


# events ------------------------------------------------------------------------

def test_no_events_without_fluid(free_run):
    assert diag.extract_collisions(free_run) == []
    assert diag.check_ordinals(free_run.events)


def test_single_particle_event_matches_oracle(bump):
    tr = trace_encounter(bump, 10.0, 0.5, 2e-4, frozen=True)
    evs = diag.extract_collisions(SimpleNamespace(events=tr["events"]))
    assert len(evs) == 1 and evs[0].ordinal == 1 and not evs[0].truncated
    ref = frozen_scattering(bump, 10.0, 0.5)
    assert evs[0].delta == pytest.approx(ref.delta, abs=4e-4)
    assert evs[0].dp[1] == pytest.approx(ref.dv_perp, rel=1e-3)
    assert evs[0].zeta == 10.0 and evs[0].zeta_inverse == 0.1


def test_coupled_run_single_collision(short_run):
    assert short_run.events["ordinal"].max() == 1
    assert diag.check_ordinals(short_run.events)
    c = diag.recollision_census(short_run.events)
    assert set(c["by_max_ordinal"]) == {1}
    assert c["momentum_fraction"] == 0.0


def test_truncated_windows_are_flagged(short_run):
    evs = diag.extract_collisions(short_run)
    assert any(e.truncated for e in evs)
    done = diag.extract_collisions(short_run, include_truncated=False)
    assert len(done) == sum(not e.truncated for e in evs)


def test_duration_check_frozen_v20(bump):
    tr = trace_encounter(bump, 20.0, 0.5, 1e-4, frozen=True)
    rep = diag.duration_check(tr["events"], 1.0, 10.0)
    # oracle: delta V / r0 = 20 * 0.0865467...
    assert rep["max_delta_zeta_over_r0"] == pytest.approx(20 * 0.086546750947642179, abs=5e-3)
    assert rep["passed"] and rep["n_checked"] == 1
    slow = diag.duration_check(tr["events"], 1.0, 30.0)
    assert slow["n_checked"] == 0 and slow["n_excluded"] == 1


@given(st.lists(st.integers(1, 4), min_size=1, max_size=6))
def test_check_ordinals_property(counts):
    rows = []
    for pid, n in enumerate(counts):
        for k in range(n):
            rows.append({"pid": pid, "ordinal": k + 1, "tau": pid + 0.1 * k})
    ev = _events(rows)
    assert diag.check_ordinals(ev)
    if max(counts) > 1:
        j = int(np.flatnonzero(ev["ordinal"] == 2)[0])
        ev["tau"][j] = ev["tau"][j - 1] - 1.0
        assert not diag.check_ordinals(ev)


# fits ----------------------------------------------------------------------------

def test_fit_synthetic_example():
    V = np.array([5.0, 10.0, 20.0, 40.0, 80.0])
    f = diag.fit_power_law(V, 3.0 * V**-2)
    assert f.exponent == pytest.approx(-2.0, abs=1e-12)
    assert f.prefactor == pytest.approx(3.0, rel=1e-12)
    assert f.r_squared == 1.0 and f.reliable


@given(st.floats(-4.0, 4.0), st.floats(1e-3, 1e3), st.floats(0.1, 10.0))
def test_fit_exact_power_law(k, c, x0):
    x = x0 * np.geomspace(1.0, 50.0, 7)
    f = diag.fit_power_law(x, c * x**k)
    assert abs(f.exponent - k) < 1e-10
    assert f.prefactor == pytest.approx(c, rel=1e-9)


def test_fit_flags_unreliable_and_refuses_short():
    x = np.arange(1.0, 9.0)
    y = np.array([1.0, 5.0, 0.2, 3.0, 0.1, 4.0, 0.3, 2.0])
    assert not diag.fit_power_law(x, y).reliable
    with pytest.raises(EmptyDataError):
        diag.fit_power_law([1.0, 2.0], [1.0, 2.0])


def test_transfer_scaling_synthetic():
    V = [5.0, 10.0, 20.0, 40.0, 80.0]
    rows = [{"V": v, "dv_perp": 2 / v, "dv_par": 0.5 / v**3} for v in V]
    perp, par = diag.transfer_scaling(rows)
    assert perp.exponent == pytest.approx(-1, abs=1e-12) and par.exponent == pytest.approx(-3, abs=1e-12)


def test_friction_zero_density_refused():
    with pytest.raises(EmptyDataError):
        diag.friction_scaling([5.0, 10.0, 20.0, 40.0, 80.0], np.zeros(5))


def test_friction_linear_in_density():
    speeds = [10.0, 14.0, 20.0, 28.0, 40.0]
    cfg1 = small_bump_config()
    cfg2 = small_bump_config(**{"fluid.rho0": 0.2})
    f1 = [diag.measure_frozen_friction(cfg1, V, travel=(3.0, 6.0))[0] for V in speeds]
    f2 = [diag.measure_frozen_friction(cfg2, V, travel=(3.0, 6.0))[0] for V in speeds]
    a, b = diag.friction_scaling(speeds, f1), diag.friction_scaling(speeds, f2)
    assert b.prefactor == pytest.approx(2 * a.prefactor, rel=1e-10)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-10)


def test_friction_quadrature_linear(bump):
    a = diag.friction_quadrature(bump, 20.0, 0.1, n_nodes=16)
    b = diag.friction_quadrature(bump, 20.0, 0.2, n_nodes=16)
    assert b == pytest.approx(2 * a, rel=1e-14) and a < 0


def test_rmin_alpha2_coupling_scaling():
    p1 = make_capped_singular(1.0, 2.0, 0.5, 1.0, 1e-4)
    p2 = make_capped_singular(2.0, 2.0, 0.5, 1.0, 1e-4)
    a = frozen_scattering(p1, 10.0, 0.0, tol=1e-12).r_min
    b = frozen_scattering(p2, 10.0, 0.0, tol=1e-12).r_min
    assert b / a == pytest.approx(math.sqrt(2), rel=1e-6)


def test_rmin_cap_contamination_flag():
    p = make_capped_singular(1.0, 1.5, 0.5, 1.0, 1e-3)
    _, _, dirty = diag.rmin_scaling(p, [100.0, 150.0, 200.0, 250.0, 300.0])
    assert dirty
    _, _, clean = diag.rmin_scaling(p, [5.0, 10.0, 20.0, 40.0, 80.0])
    assert not clean


# annuli ----------------------------------------------------------------------------

def test_annulus_bin_examples():
    eta0 = 0.01
    assert diag.annulus_bin(np.array([1.5 * eta0]), eta0)[0] == 1
    assert diag.annulus_bin(np.array([eta0, 0.3 * eta0]), eta0).tolist() == [0, 0]
    assert diag.annulus_bin(np.array([2 * eta0, 2.0001 * eta0]), eta0).tolist() == [1, 2]


@given(st.floats(1e-4, 1.0), st.floats(5.0, 200.0))
def test_annulus_partition(eta, V):
    eta0, edges = diag.annulus_edges(V, 0.1, 1.0)
    k = int(diag.annulus_bin(np.array([eta]), eta0)[0])
    if k == 0:
        assert eta <= eta0
    else:
        assert eta0 * 2.0 ** (k - 1) < eta <= eta0 * 2.0**k * (1 + 1e-15)
        assert k < len(edges)


def test_annulus_budget_totals():
    rows = [{"pid": i, "ordinal": 1, "tau": 0.5, "sigma": s, "weight": 1.0, "vin_x": 0.0, "vout_x": 0.1 * (i + 1)}
            for i, s in enumerate([0.001, 0.05, 0.3, 0.9])]
    b = diag.annulus_budget(_events(rows), 10.0, 0.1, r0=1.0)
    assert b["unique_binning"] and b["n_events"] == 4
    assert sum(b["counts"]) == 4
    assert b["inner"] + b["I"] == pytest.approx(0.1 + 0.2 + 0.3 + 0.4, rel=1e-14)
    # eta0 = 10^-1.1 ~ 0.079 puts the first two rows in the disk
    assert b["inner"] == pytest.approx(0.3)


def test_annulus_budget_parameter_rules():
    ev = _events([])
    nt = diag.annulus_budget(ev, 10.0, 0.1, alpha=2.5)
    assert nt["no_theorem"] and nt["epsilon"] == 0.0
    with pytest.raises(InvalidParameter):
        diag.annulus_budget(ev, 10.0, 0.5, alpha=1.5)


def test_recollision_census_synthetic():
    rows = [
        {"pid": 0, "ordinal": 1, "tau": 0.0, "sigma": 0.5, "vb_min": 10.0, "weight": 1.0, "vout_x": 1.0},
        {"pid": 0, "ordinal": 2, "tau": 1.0, "sigma": 0.01, "vb_min": 12.0, "weight": 1.0, "vout_x": 3.0},
        {"pid": 1, "ordinal": 1, "tau": 0.2, "sigma": 0.4, "vb_min": 10.0, "weight": 1.0, "vout_x": 1.0},
    ]
    c = diag.recollision_census(_events(rows))
    assert c["by_max_ordinal"] == {1: 1, 2: 1}
    assert c["momentum_fraction"] == pytest.approx(3.0 / 5.0)
    assert c["envelope2_C"] == pytest.approx(0.01 * 100.0)


# comparison curve and run summaries ----------------------------------------------------

def test_comparison_free_solution():
    cur = diag.comparison_ode(1.0, 1.0, 0.0, 1.0, 10.0, 50.0)
    exact = 7.5 + cur.t
    assert np.max(np.abs(cur.phidot - exact) / exact) < 1e-8
    assert not cur.stalled


def test_comparison_stall():
    cur = diag.comparison_ode(1.0, 0.1, 50.0, 1.0, 2.0, 10.0)
    assert cur.stalled and 0 < cur.t_stall < 10


def test_free_run_summaries(free_run):
    s = diag.runaway_slope(free_run)
    assert s["slope"] == pytest.approx(1.0, rel=1e-12)
    assert s["transient"] == pytest.approx(0.5)
    m = diag.assumption_monitor(free_run)
    assert m["sup_abs_xiddot"] == 1.0 and m["min_xidot_ratio"] == 1.0


def test_slope_doubles_with_drive():
    a = diag.runaway_slope(run(free_config()))["slope"]
    b = diag.runaway_slope(run(free_config(**{"body.E": 2.0})))["slope"]
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_event_completeness(short_run):
    ev_sum, impulse = diag.event_completeness(short_run)
    assert ev_sum == pytest.approx(impulse, rel=1e-12)


def test_summary_and_label(short_run):
    s = diag.summarize(short_run)
    assert s["events"]["max_ordinal"] == 1
    assert s["assumption_monitor"]["above_half"]
    assert diag.runaway_label(s) == "runaway"
    assert s["duration_check"]["passed"]
