"""Radial pair potentials with compact support.

Two families are provided:

``bump``
    psi(r) = psi0 * (1 - (r/r0)**2)**3 inside the support; C2 everywhere.
``singular``
    g * r**-alpha below ``r1``, a monotone quintic Hermite blend to zero on
    [r1, r0], and a linear continuation below ``rcap`` so forces stay finite.

A third kind, ``null``, is identically zero and serves as a free-flight
control with the same support radius.

All evaluation goes through :func:`pot_eval`, a numba scalar routine shared
with the integrator kernels, so the Python API and the simulation can never
disagree about the force law.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConstructionFailure, InvalidParameter

NULL, BUMP, SINGULAR = 0, 1, 2
KIND_CODES = {"null": NULL, "bump": BUMP, "singular": SINGULAR}

# layout of the parameter vector handed to the kernels
P_R0, P_PSI0, P_G, P_ALPHA, P_R1, P_RCAP, P_H, P_F, P_HF1, P_HHF2 = range(10)
N_PRM = 10


@numba.njit(cache=True)
def pot_eval(kind, prm, r):
    """Return (psi, dpsi/dr, d2psi/dr2) at distance ``r``."""
    r0 = prm[P_R0]
    if kind == NULL or r >= r0:
        return 0.0, 0.0, 0.0
    if kind == BUMP:
        psi0 = prm[P_PSI0]
        u = (r * r) / (r0 * r0)
        om = 1.0 - u
        return (
            psi0 * om * om * om,
            -6.0 * psi0 * r * om * om / (r0 * r0),
            -6.0 * psi0 * om * (1.0 - 5.0 * u) / (r0 * r0),
        )
    g = prm[P_G]
    alpha = prm[P_ALPHA]
    r1 = prm[P_R1]
    rcap = prm[P_RCAP]
    if r < rcap:
        v = g * rcap ** (-alpha)
        d = -alpha * v / rcap
        return v + d * (r - rcap), d, 0.0
    if r < r1:
        v = g * r ** (-alpha)
        return v, -alpha * v / r, alpha * (alpha + 1.0) * v / (r * r)
    h = prm[P_H]
    s = (r - r1) / h
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    f = prm[P_F]
    hf1 = prm[P_HF1]
    hhf2 = prm[P_HHF2]
    val = (
        f * (1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5)
        + hf1 * (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5)
        + hhf2 * 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5)
    )
    d1 = (
        f * (-30.0 * s2 + 60.0 * s3 - 30.0 * s4)
        + hf1 * (1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4)
        + hhf2 * 0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4)
    )
    d2 = (
        f * (-60.0 * s + 180.0 * s2 - 120.0 * s3)
        + hf1 * (-36.0 * s + 96.0 * s2 - 60.0 * s3)
        + hhf2 * 0.5 * (2.0 - 18.0 * s + 36.0 * s2 - 20.0 * s3)
    )
    return val, d1 / h, d2 / (h * h)


@numba.njit(cache=True)
def _pot_eval_array(kind, prm, r):
    n = r.shape[0]
    out = np.empty((3, n))
    for i in range(n):
        a, b, c = pot_eval(kind, prm, r[i])
        out[0, i] = a
        out[1, i] = b
        out[2, i] = c
    return out


@dataclass(frozen=True)
class Potential:
    kind: str
    r0: float = 1.0
    psi0: float = 0.0
    g: float = 0.0
    alpha: float = 0.0
    r1: float = 0.0
    rcap: float = 0.0
    prm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise InvalidParameter(f"unknown potential kind {self.kind!r}")
        prm = np.zeros(N_PRM)
        prm[P_R0] = self.r0
        prm[P_PSI0] = self.psi0
        prm[P_G] = self.g
        prm[P_ALPHA] = self.alpha
        prm[P_R1] = self.r1
        prm[P_RCAP] = self.rcap
        if self.kind == "singular":
            h = self.r0 - self.r1
            f = self.g * self.r1 ** (-self.alpha)
            prm[P_H] = h
            prm[P_F] = f
            prm[P_HF1] = h * (-self.alpha * f / self.r1)
            prm[P_HHF2] = h * h * self.alpha * (self.alpha + 1.0) * f / self.r1**2
        prm.setflags(write=False)
        object.__setattr__(self, "prm", prm)

    @property
    def code(self):
        return KIND_CODES[self.kind]

    def eval(self, r):
        """Value, first and second radial derivative; scalar in, scalar out."""
        arr = np.atleast_1d(np.asarray(r, dtype=float))
        out = _pot_eval_array(self.code, self.prm, arr.ravel())
        if np.ndim(r) == 0:
            return float(out[0, 0]), float(out[1, 0]), float(out[2, 0])
        shape = arr.shape
        return out[0].reshape(shape), out[1].reshape(shape), out[2].reshape(shape)

    def psi(self, r):
        return self.eval(r)[0]

    def dpsi(self, r):
        return self.eval(r)[1]

    def d2psi(self, r):
        return self.eval(r)[2]

    def below_cap(self, r):
        """Overflow flag: True where ``r`` lies in the linearized sub-rcap core."""
        if self.kind != "singular":
            return np.zeros(np.shape(r), dtype=bool) if np.ndim(r) else False
        return np.asarray(r) < self.rcap if np.ndim(r) else bool(r < self.rcap)

    def sup_norms(self, n_grid=20001):
        return sup_norms(self, n_grid)

    def to_dict(self):
        d = {"kind": self.kind, "r0": self.r0}
        if self.kind == "bump":
            d["psi0"] = self.psi0
        elif self.kind == "singular":
            d.update(g=self.g, alpha=self.alpha, r1=self.r1, rcap=self.rcap)
        return d


def make_bounded_bump(psi0, r0=1.0):
    if not psi0 > 0 or not r0 > 0:
        raise InvalidParameter(f"bump needs psi0 > 0 and r0 > 0, got psi0={psi0}, r0={r0}")
    return Potential("bump", r0=float(r0), psi0=float(psi0))


def make_null(r0=1.0):
    if not r0 > 0:
        raise InvalidParameter(f"r0 must be positive, got {r0}")
    return Potential("null", r0=float(r0))


def make_capped_singular(g, alpha, r1, r0=1.0, rcap=1e-3):
    if not (g > 0 and alpha > 0):
        raise InvalidParameter(f"singular potential needs g > 0 and alpha > 0, got g={g}, alpha={alpha}")
    if not 0 < rcap < r1 < r0:
        raise InvalidParameter(f"need 0 < rcap < r1 < r0, got rcap={rcap}, r1={r1}, r0={r0}")
    p = Potential("singular", r0=float(r0), g=float(g), alpha=float(alpha), r1=float(r1), rcap=float(rcap))
    grid = np.linspace(r1, r0, 4001)
    d = p.dpsi(grid)
    if np.any(d > 0.0):
        raise ConstructionFailure(
            f"quintic blend on [r1, r0] is not monotone for alpha={alpha}, r1={r1}, r0={r0}; "
            "move r1 closer to r0 or lower alpha"
        )
    return p


def make_potential(kind, **params):
    """Build a potential from config-style keyword arguments."""
    r0 = params.get("r0", 1.0)
    if kind == "bump":
        return make_bounded_bump(params.get("psi0", 1.0), r0)
    if kind == "singular":
        return make_capped_singular(
            params.get("g", 1.0), params.get("alpha", 1.5), params.get("r1", 0.5), r0, params.get("rcap", 1e-3)
        )
    if kind == "null":
        return make_null(r0)
    raise InvalidParameter(f"unknown potential kind {kind!r}")


def psi(p: Potential, r):
    return p.psi(r)


def dpsi(p: Potential, r):
    return p.dpsi(r)


def sup_norms(p: Potential, n_grid=20001):
    """(sup |psi|, sup |dpsi|) over [rcap, r0] on a dense grid plus endpoints."""
    if p.kind == "null":
        return 0.0, 0.0
    lo = p.rcap if p.kind == "singular" else 0.0
    if p.kind == "singular":
        # geometric spacing resolves the steep core
        grid = np.geomspace(lo, p.r0, n_grid)
    else:
        grid = np.linspace(lo, p.r0, n_grid)
    v, d, _ = p.eval(grid)
    return float(np.max(np.abs(v))), float(np.max(np.abs(d)))
