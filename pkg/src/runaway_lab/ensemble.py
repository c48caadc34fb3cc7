"""Lazily seeded weighted characteristics for an infinite fluid.

The fluid is realized on a fixed lattice that is instantiated slab by slab
just ahead of the body.  Because the potential has compact support, only
sites that the body can still reach matter; everything else is either not
yet created or retired into the conservation ledgers.

Cold fluid uses an azimuthal reduction: one characteristic per ring of
radius ``eta`` carries the ring mass ``rho0 * 2 pi eta deta dx``.  A ring of
particles at rest stays in its meridian plane, so this is exact.  The
Maxwellian model seeds full 3D velocities on a transverse square lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import brentq

from .errors import InvalidHistory, InvalidParameter

PENDING, INTERACTING, BALLISTIC, RETIRED = 0, 1, 2, 3
STATUS_NAMES = {PENDING: "pending", INTERACTING: "interacting", BALLISTIC: "ballistic", RETIRED: "retired"}


@dataclass
class SeedingPlan:
    rho0: float
    dx: float = 0.1
    deta: float = 0.05
    eta_max: float = 1.1
    lookahead: float = 3.0
    velocity_model: str = "cold"
    beta: float = 1.0
    mc_samples: int = 4
    rng_seed: int = 12345

    def __post_init__(self):
        if self.rho0 < 0:
            raise InvalidParameter(f"rho0 must be >= 0, got {self.rho0}")
        for name in ("dx", "deta", "eta_max", "lookahead"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")
        if self.velocity_model not in ("cold", "maxwellian"):
            raise InvalidParameter(f"unknown velocity model {self.velocity_model!r}")
        if self.velocity_model == "maxwellian" and not (self.beta > 0 and self.mc_samples >= 1):
            raise InvalidParameter("maxwellian model needs beta > 0 and mc_samples >= 1")

    @property
    def ring(self):
        """True when particles represent azimuthal rings (cold model)."""
        return self.velocity_model == "cold"

    def transverse_sites(self):
        """(y, z, weight per unit axial length) of one lattice slab."""
        if self.ring:
            k = np.arange(int(math.ceil(self.eta_max / self.deta - 1e-9)))
            eta = (k + 0.5) * self.deta
            # (k+1)^2 - k^2 = 2k+1, so 2 pi eta deta is the exact annulus area
            return eta, np.zeros_like(eta), self.rho0 * 2.0 * np.pi * eta * self.deta
        m = int(math.ceil(self.eta_max / self.deta - 1e-9))
        c = (np.arange(-m, m) + 0.5) * self.deta
        yy, zz = np.meshgrid(c, c, indexing="ij")
        keep = np.hypot(yy, zz) <= self.eta_max
        y, z = yy[keep], zz[keep]
        return y, z, np.full(y.shape, self.rho0 * self.deta**2)


_FLOAT1 = ("w", "anchor_t", "entry_t", "entry_sig", "rmin", "vbmin", "vbmax", "eta", "seeded_t")
_FLOAT3 = ("pos", "vel", "acc", "anchor", "entry_v")
_INTS = (("pid", np.int64), ("ncoll", np.int32), ("mode", np.int8), ("active", np.bool_),
         ("inside", np.bool_), ("status", np.int8))


class ParticleStore:
    """Struct-of-arrays container for the live characteristics.

    Arrays are over-allocated; ``view(name)`` returns the live ``[:n]`` slice.
    Particle order is insertion order and survives compaction, which is what
    keeps force reductions reproducible.
    """

    def __init__(self, capacity=1024, ring=True):
        self.n = 0
        self.ring = ring
        self.next_pid = 0
        self.front_j = None
        self._alloc(capacity)

    def _alloc(self, cap):
        old = getattr(self, "_arrays", None)
        arrays = {}
        for name in _FLOAT1:
            arrays[name] = np.zeros(cap)
        for name in _FLOAT3:
            arrays[name] = np.zeros((cap, 3))
        for name, dt in _INTS:
            arrays[name] = np.zeros(cap, dtype=dt)
        if old is not None:
            for name, arr in old.items():
                arrays[name][: self.n] = arr[: self.n]
        self._arrays = arrays
        self.capacity = cap

    def view(self, name):
        return self._arrays[name][: self.n]

    def __getattr__(self, name):
        arrays = self.__dict__.get("_arrays")
        if arrays is not None and name in arrays:
            return arrays[name][: self.n]
        raise AttributeError(name)

    def __len__(self):
        return self.n

    def append(self, pos, vel, w, eta, t):
        k = len(w)
        if k == 0:
            return np.empty(0, dtype=np.int64)
        if self.n + k > self.capacity:
            self._alloc(max(2 * self.capacity, self.n + k))
        sl = slice(self.n, self.n + k)
        a = self._arrays
        a["pos"][sl] = pos
        a["vel"][sl] = vel
        a["anchor"][sl] = pos
        a["anchor_t"][sl] = t
        a["acc"][sl] = 0.0
        a["w"][sl] = w
        a["eta"][sl] = eta
        a["seeded_t"][sl] = t
        a["pid"][sl] = np.arange(self.next_pid, self.next_pid + k)
        a["ncoll"][sl] = 0
        a["mode"][sl] = 0
        a["active"][sl] = True
        a["inside"][sl] = False
        a["status"][sl] = PENDING
        a["rmin"][sl] = np.inf
        self.next_pid += k
        self.n += k
        return a["pid"][sl]

    def compact(self, keep):
        """Drop particles where ``keep`` is False, preserving order."""
        keep = np.asarray(keep, dtype=bool)
        m = int(keep.sum())
        for name, arr in self._arrays.items():
            arr[:m] = arr[: self.n][keep]
        self.n = m

    def sync_positions(self, t):
        """Bring parked (inactive) particles to time ``t`` by free flight."""
        idle = ~self.active
        if np.any(idle):
            self.pos[idle] = self.anchor[idle] + self.vel[idle] * (t - self.anchor_t[idle])[:, None]

    def particle(self, i):
        return Particle(
            id=int(self.pid[i]),
            pos=self.pos[i].copy(),
            vel=self.vel[i].copy(),
            weight=float(self.w[i]),
            status=STATUS_NAMES[int(self.status[i])],
            eta=float(self.eta[i]),
        )


@dataclass
class Particle:
    """Single-characteristic view used by the per-particle operations."""

    id: int
    pos: np.ndarray
    vel: np.ndarray
    weight: float = 1.0
    status: str = "pending"
    eta: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)


def seed_curtain(plan: SeedingPlan, store: ParticleStore, body, t, r0):
    """Instantiate every unseeded lattice slab with x <= xi + lookahead.

    The first call places the initial front at ``xi + r0`` so that no particle
    starts inside the support.  Returns the number of particles created.
    """
    if plan.lookahead <= r0:
        raise InvalidParameter(f"lookahead ({plan.lookahead}) must exceed r0 ({r0})")
    if plan.rho0 == 0.0:
        return 0
    dx = plan.dx
    if store.front_j is None:
        # first lattice index strictly beyond xi + r0
        store.front_j = int(math.floor((body.xi + r0) / dx - 0.5)) + 1
    j_last = int(math.floor((body.xi + plan.lookahead) / dx - 0.5))
    if j_last < store.front_j:
        return 0
    y, z, wline = plan.transverse_sites()
    ns = len(y)
    js = np.arange(store.front_j, j_last + 1)
    created = 0
    for j in js:
        x = (j + 0.5) * dx
        if plan.ring:
            pos = np.column_stack([np.full(ns, x), y, z])
            vel = np.zeros((ns, 3))
            w = wline * dx
            eta = y.copy()
        else:
            rng = np.random.default_rng([plan.rng_seed, abs(int(j)), int(j < 0)])
            mc = plan.mc_samples
            pos = np.repeat(np.column_stack([np.full(ns, x), y, z]), mc, axis=0)
            vel = rng.normal(0.0, 1.0 / math.sqrt(plan.beta), size=(ns * mc, 3))
            w = np.repeat(wline * dx / mc, mc)
            eta = np.repeat(np.hypot(y, z), mc)
        store.append(pos, vel, w, eta, t)
        created += len(w)
    store.front_j = int(j_last) + 1
    return created


def classify(part: Particle, body, speed_floor, r0, margin=0.25):
    """Lifecycle status of one characteristic relative to the body."""
    rel = part.pos - np.array([body.xi, 0.0, 0.0])
    d = float(np.linalg.norm(rel))
    if d <= r0 + margin:
        return "interacting"
    if part.vel[0] > speed_floor:
        return "ballistic"
    if rel[0] < -(r0 + margin):
        return "retired"
    return "pending"


def classify_all(store: ParticleStore, xi, speed_floor, r0, margin):
    """Vectorized :func:`classify`; writes and returns ``store.status``."""
    rel = store.pos.copy()
    rel[:, 0] -= xi
    d = np.sqrt(np.einsum("ij,ij->i", rel, rel))
    st = np.full(store.n, PENDING, dtype=np.int8)
    near = d <= r0 + margin
    fast = store.vel[:, 0] > speed_floor
    behind = rel[:, 0] < -(r0 + margin)
    st[~near & fast] = BALLISTIC
    st[~near & ~fast & behind] = RETIRED
    st[near | store.inside] = INTERACTING
    store.status[:] = st
    return st


def forecast_history(xi, xidot, acc, t_now, horizon, n=401):
    """Quadratic extrapolation of the body path, sampled for re-entry search."""
    s = np.linspace(0.0, horizon, n)
    return t_now + s, xi + xidot * s + 0.5 * acc * s * s


def ballistic_reentry_time(part: Particle, body_history, horizon, r0, t_now=None, tol=1e-10):
    """Earliest time a free-flying particle crosses into the support again.

    ``body_history`` is a pair ``(times, xi)`` with strictly increasing times,
    linearly interpolated.  Particle motion is a straight line from
    ``part.pos`` at ``t_now`` (defaults to the first history time).  A
    particle that starts inside the support must leave it first.  Returns
    None when no entry happens within ``horizon``.
    """
    ts, xs = (np.asarray(a, dtype=float) for a in body_history)
    if ts.ndim != 1 or ts.shape != xs.shape or len(ts) < 2 or np.any(np.diff(ts) <= 0):
        raise InvalidHistory("body history must be two equal-length arrays with strictly increasing times")
    if t_now is None:
        t_now = ts[0]
    t_hi = min(t_now + horizon, ts[-1])
    if t_hi <= t_now:
        return None

    def gap(t):
        p = part.pos + part.vel * (t - t_now)
        b = np.interp(t, ts, xs)
        return math.sqrt((p[0] - b) ** 2 + p[1] ** 2 + p[2] ** 2) - r0

    grid = np.concatenate([[t_now], ts[(ts > t_now) & (ts < t_hi)], [t_hi]])
    prev = gap(grid[0])
    for a, b in zip(grid[:-1], grid[1:]):
        cur = gap(b)
        if prev > 0.0 and cur <= 0.0:
            return brentq(gap, a, b, xtol=tol, rtol=4 * np.finfo(float).eps)
        prev = cur
    return None


def reentry_mask(pos, vel, t_now, body_history, r0):
    """Vectorized screen: which straight-line particles enter the support.

    Same rule as :func:`ballistic_reentry_time` (a +/- sign change of the
    gap between consecutive history samples after ``t_now``) evaluated for
    many particles at once; returns a boolean mask.
    """
    ts, xs = (np.asarray(a, dtype=float) for a in body_history)
    sel = ts >= t_now
    out = np.zeros(len(pos), dtype=np.bool_)
    if sel.sum() >= 2:
        _reentry_scan(np.ascontiguousarray(pos, dtype=float), np.ascontiguousarray(vel, dtype=float),
                      ts[sel] - t_now, xs[sel], r0, out)
    return out


@numba.njit(cache=True)
def _reentry_scan(pos, vel, tau, xs, r0, out):
    for i in range(pos.shape[0]):
        prev = 1.0
        for k in range(tau.shape[0]):
            gx = pos[i, 0] + vel[i, 0] * tau[k] - xs[k]
            gy = pos[i, 1] + vel[i, 1] * tau[k]
            gz = pos[i, 2] + vel[i, 2] * tau[k]
            g = math.sqrt(gx * gx + gy * gy + gz * gz) - r0
            if k > 0 and prev > 0.0 and g <= 0.0:
                out[i] = True
                break
            prev = g

def prune_and_account(state):
    """Remove retired particles and fold their content into the ledgers.

    Retired particles are outside the support, so they carry no potential
    energy.  Returns ``(count, momentum_x, kinetic_energy)`` of the batch.
    """
    store = state.store
    gone = store.status == RETIRED
    k = int(gone.sum())
    if k == 0:
        return 0, 0.0, 0.0
    w = store.w[gone]
    v = store.vel[gone]
    px = math.fsum(w * v[:, 0])
    ke = math.fsum(0.5 * w * np.einsum("ij,ij->i", v, v))
    state.ledger.p_retired.add(px)
    state.ledger.e_retired.add(ke)
    state.ledger.m_retired.add(math.fsum(w))
    state.ledger.n_retired += k
    state.note_retired(store, gone)
    store.compact(~gone)
    return k, px, ke
