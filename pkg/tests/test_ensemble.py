import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from runaway_lab.ensemble import (
    RETIRED,
    Particle,
    ParticleStore,
    SeedingPlan,
    ballistic_reentry_time,
    classify,
    classify_all,
    prune_and_account,
    reentry_mask,
    seed_curtain,
)
from runaway_lab.errors import InvalidHistory, InvalidParameter
from runaway_lab.kinetics import BodyState, friction_force, initial_state, step

from conftest import small_bump_config


def test_empty_fluid_seeds_nothing():
    store = ParticleStore()
    assert seed_curtain(SeedingPlan(rho0=0.0), store, BodyState(0.0, 10.0), 0.0, 1.0) == 0
    assert store.n == 0


def test_seeding_is_idempotent():
    store = ParticleStore()
    plan = SeedingPlan(rho0=0.1)
    body = BodyState(0.0, 10.0)
    assert seed_curtain(plan, store, body, 0.0, 1.0) > 0
    assert seed_curtain(plan, store, body, 0.0, 1.0) == 0


def test_lookahead_must_exceed_support():
    with pytest.raises(InvalidParameter):
        seed_curtain(SeedingPlan(rho0=0.1, lookahead=1.0), ParticleStore(), BodyState(0.0, 1.0), 0.0, 1.0)


def test_first_slab_starts_outside_support():
    store = ParticleStore()
    seed_curtain(SeedingPlan(rho0=0.1), store, BodyState(0.0, 10.0), 0.0, 1.0)
    d = np.linalg.norm(store.pos, axis=1)
    assert d.min() > 1.0


def test_cold_weights_are_shell_elements():
    plan = SeedingPlan(rho0=0.3, dx=0.1, deta=0.05)
    store = ParticleStore()
    seed_curtain(plan, store, BodyState(0.0, 1.0), 0.0, 1.0)
    expect = 0.3 * 2 * math.pi * store.eta * 0.05 * 0.1
    assert np.allclose(store.w, expect, rtol=1e-15)
    assert np.all(store.vel == 0.0)


@pytest.mark.parametrize("model", ["cold", "maxwellian"])
def test_mass_consistency(model):
    plan = SeedingPlan(rho0=0.2, dx=0.1, deta=0.05, eta_max=1.1, lookahead=5.0, velocity_model=model,
                       mc_samples=3)
    store = ParticleStore(ring=plan.ring)
    seed_curtain(plan, store, BodyState(0.0, 1.0), 0.0, 1.0)
    length = store.n and (plan.dx * len(np.unique(store.pos[:, 0])))
    total = math.fsum(store.w)
    exact = 0.2 * math.pi * 1.1**2 * length
    # one boundary cell of transverse area: 2 pi eta_max deta
    assert abs(total - exact) <= 0.2 * 2 * math.pi * 1.1 * plan.deta * length


def test_maxwellian_seeding_is_reproducible():
    plan = SeedingPlan(rho0=0.1, velocity_model="maxwellian", beta=2.0, mc_samples=2)
    a, b = ParticleStore(ring=False), ParticleStore(ring=False)
    seed_curtain(plan, a, BodyState(0.0, 1.0), 0.0, 1.0)
    seed_curtain(plan, b, BodyState(0.0, 1.0), 0.0, 1.0)
    assert np.array_equal(a.vel, b.vel)
    # per-component variance 1/beta
    assert np.var(a.vel) == pytest.approx(0.5, rel=0.1)


def test_classify_examples():
    body = BodyState(0.0, 10.0)
    ahead = Particle(0, [3.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert classify(ahead, body, 5.0, 1.0) == "pending"
    behind = Particle(1, [-3.0, 0.2, 0.0], [4.0, 0.0, 0.0])
    assert classify(behind, body, 5.0, 1.0) == "retired"
    fast = Particle(2, [-3.0, 0.0, 0.0], [20.0, 0.0, 0.0])
    assert classify(fast, body, 5.0, 1.0) == "ballistic"
    inside = Particle(3, [0.5, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert classify(inside, body, 5.0, 1.0) == "interacting"


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 3), st.floats(-10, 30)), min_size=1, max_size=20))
def test_classify_all_matches_scalar(rows):
    store = ParticleStore()
    pos = np.array([[x, y, 0.0] for x, y, _ in rows])
    vel = np.array([[v, 0.0, 0.0] for _, _, v in rows])
    store.append(pos, vel, np.ones(len(rows)), pos[:, 1], 0.0)
    body = BodyState(0.5, 10.0)
    classify_all(store, body.xi, 5.0, 1.0, 0.25)
    names = {0: "pending", 1: "interacting", 2: "ballistic", 3: "retired"}
    for i in range(store.n):
        assert names[int(store.status[i])] == classify(store.particle(i), body, 5.0, 1.0, 0.25)


def _history(V, acc, horizon, n=4001):
    s = np.linspace(0.0, horizon, n)
    return s, V * s + 0.5 * acc * s * s


def test_slow_particle_never_reenters():
    part = Particle(0, [-2.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    assert ballistic_reentry_time(part, _history(10.0, 1.0, 50.0), 50.0, 1.0) is None


def test_overtaking_particle_returns_on_parabola():
    V = 10.0
    part = Particle(0, [0.0, 0.0, 0.0], [2 * V, 0.0, 0.0])
    t = ballistic_reentry_time(part, _history(V, 1.0, 30.0, 30001), 30.0, 1.0)
    # gap V s - s^2 / 2 comes back down to r0
    assert t == pytest.approx(V + math.sqrt(V * V - 2.0), abs=1e-6)


def test_unordered_history_rejected():
    part = Particle(0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(InvalidHistory):
        ballistic_reentry_time(part, (np.array([0.0, 2.0, 1.0]), np.zeros(3)), 5.0, 1.0)


@given(st.floats(-8, -1.5), st.floats(0, 1.5), st.floats(0, 25), st.floats(-3, 3))
def test_reentry_mask_agrees_with_exact_time(x, y, vx, vy):
    hist = _history(10.0, 1.0, 3.0, 301)
    part = Particle(0, [x, y, 0.0], [vx, vy, 0.0])
    exact = ballistic_reentry_time(part, hist, 3.0, 1.0)
    mask = reentry_mask(part.pos[None, :], part.vel[None, :], 0.0, hist, 1.0)
    assert bool(mask[0]) == (exact is not None)


def _running_state():
    cfg = small_bump_config()
    state = initial_state(cfg)
    from runaway_lab.kinetics import plan_from_config

    plan = plan_from_config(cfg)
    seed_curtain(plan, state.store, state.body, 0.0, 1.0)
    state.account_seeded(slice(0, state.store.n))
    for _ in range(60):
        step(state, dt=0.002)
    return state


def test_retiring_everything_keeps_ledgers():
    state = _running_state()
    rp, re = state.momentum_residual(), state.energy_residual()
    store = state.store
    d = np.linalg.norm(store.pos - [state.body.xi, 0, 0], axis=1)
    # only particles outside the support may be retired; move the rest far behind first
    assert np.any(d < 1.0)
    store.status[:] = RETIRED
    outside = d > 1.0
    store.status[~outside] = 0
    k, px, ke = prune_and_account(state)
    assert k == int(outside.sum())
    assert state.momentum_residual() == pytest.approx(rp, abs=1e-15)
    assert state.energy_residual() == pytest.approx(re, abs=1e-13)


def test_empty_after_pruning_has_no_friction():
    state = _running_state()
    state.store.status[:] = RETIRED
    prune_and_account(state)
    assert state.store.n == 0
    assert friction_force(state) == 0.0


def test_free_flight_is_exact():
    cfg = small_bump_config(**{"fluid.rho0": 0.0})
    state = initial_state(cfg)
    pos0 = np.array([[40.0, 3.0, 0.0]])
    vel0 = np.array([[0.25, -0.125, 0.0]])
    state.store.append(pos0, vel0, np.array([1e-3]), np.array([3.0]), 0.0)
    for _ in range(100):
        step(state, dt=0.01)
    state.store.sync_positions(state.t)
    assert np.allclose(state.store.pos[0], pos0[0] + vel0[0] * state.t, rtol=0, atol=1e-13)
    assert np.array_equal(state.store.vel[0], vel0[0])
