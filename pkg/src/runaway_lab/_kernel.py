"""Numba time-stepping kernel for the body + characteristics system.

One body step of length ``dt`` is velocity Verlet for the body along a
quadratic path ``xi + xidot*s + acc*s**2/2``.  Each characteristic near the
body is advanced along that prescribed path with its own velocity-Verlet
substeps; the body then receives exactly minus the momentum the particles
gained.  Without substepping this reduces to plain coupled velocity Verlet,
and with it the momentum exchange stays exactly paired.

Particles far from the body fly freely from an anchor point,
``pos = anchor + vel * (t - anchor_t)``, so ballistic motion carries no
accumulated rounding.
"""

import math

import numba
import numpy as np

from ._numerics import kahan_add
from .potential import SINGULAR, P_R1, P_RCAP, pot_eval

# body-state vector layout
B_T, B_XI, B_XIDOT, B_ACC, B_FRIC, B_JTOT, B_JDISC, B_WDISC, B_SUPACC, B_VFLOOR, B_FPERP, B_VREL = range(12)
N_BODY = 12

# config vector layout
C_M, C_E, C_R0, C_MARGIN, C_DTMAX, C_CRES, C_CSTIFF, C_TEND, C_FROZEN, C_RING, C_MAXRETRY, C_XSTOP = range(12)
N_CFG = 12

# stats vector layout
S_STEPS, S_SUBSTEPS, S_REJECT, S_RCAPFAIL, S_STATUS, S_FAILPID, S_DROPPED, S_EVCOUNT = range(8)
N_STATS = 8

# exit status
ST_DONE, ST_MAXSTEPS, ST_FLUSH, ST_STIFF, ST_CURTAIN = 0, 1, 2, 3, 4

# event record layout
(E_TAU, E_TEXIT, E_ETA, E_SIGMA, E_VIN0, E_VIN1, E_VIN2, E_VOUT0, E_VOUT1, E_VOUT2,
 E_RMIN, E_VBMIN, E_VBMAX, E_SEEDED, E_W) = range(15)
N_EVF = 15


@numba.njit(cache=True)
def substep_limit(kind, prm, d, urel, c_stiff, c_res):
    """Largest particle substep resolving the local force variation."""
    _, _, d2 = pot_eval(kind, prm, d)
    lim = np.inf
    if d2 != 0.0:
        lim = c_stiff / math.sqrt(abs(d2))
    if kind == SINGULAR and d < prm[P_R1] and urel > 0.0:
        lim = min(lim, c_res * d / urel)
    return lim


@numba.njit(cache=True)
def friction_sum(pos, w, active, xi, kind, prm):
    """Compensated, fixed-order sum of the fluid's x-force on the body."""
    r0 = prm[0]
    s = 0.0
    c = 0.0
    for i in range(pos.shape[0]):
        if not active[i]:
            continue
        rx = pos[i, 0] - xi
        ry = pos[i, 1]
        rz = pos[i, 2]
        d = math.sqrt(rx * rx + ry * ry + rz * rz)
        if d >= r0 or d == 0.0:
            continue
        _, d1, _ = pot_eval(kind, prm, d)
        s, c = kahan_add(s, c, w[i] * d1 * rx / d)
    return s + c


@numba.njit(cache=True)
def _path(xi, xidot, acc, s):
    return xi + xidot * s + 0.5 * acc * s * s


@numba.njit(cache=True, inline="always")
def _trial(s, h, dt, t, t_new, xi, xidot, ab, xi_new, x0, x1, x2, v0, v1, v2, a0, a1, a2,
           an0, an1, an2, an_t):
    """Drift of one candidate substep: returns s_new, t, h, position, rx, distance."""
    s_new = s + h
    if s_new >= dt - 1e-12 * dt:
        s_new = dt
        tt = t_new
        bx = xi_new
    else:
        tt = t + s_new
        bx = _path(xi, xidot, ab, s_new)
    hh = s_new - s
    if a0 == 0.0 and a1 == 0.0 and a2 == 0.0:
        # force-free: straight line from the anchor, no accumulated rounding
        tau = tt - an_t
        n0 = an0 + v0 * tau
        n1 = an1 + v1 * tau
        n2 = an2 + v2 * tau
    else:
        n0 = x0 + hh * (v0 + 0.5 * hh * a0)
        n1 = x1 + hh * (v1 + 0.5 * hh * a1)
        n2 = x2 + hh * (v2 + 0.5 * hh * a2)
    rx = n0 - bx
    d = math.sqrt(rx * rx + n1 * n1 + n2 * n2)
    return s_new, tt, hh, n0, n1, n2, rx, d


@numba.njit(cache=True)
def advance(bs, cfg, kind, prm,
            pos, vel, acc, w, anchor, anchor_t, mode, active,
            inside, ncoll, entry_t, entry_v, entry_sig, rmin, vbmin, vbmax, eta, seeded_t, pid,
            evf, evi, stats, max_steps, dt_fixed):
    M = cfg[C_M]
    E = cfg[C_E]
    r0 = cfg[C_R0]
    lim = r0 + cfg[C_MARGIN]
    lim2 = lim * lim
    t_end = cfg[C_TEND]
    frozen = cfg[C_FROZEN] != 0.0
    ring = cfg[C_RING] != 0.0
    max_retry = int(cfg[C_MAXRETRY])
    c_res = cfg[C_CRES]
    c_stiff = cfg[C_CSTIFF]
    rcap = prm[P_RCAP]
    n = pos.shape[0]
    cap = evf.shape[0]
    n_active = 0
    for i in range(n):
        if active[i]:
            n_active += 1
    steps = 0
    stats[S_STATUS] = ST_DONE
    while True:
        t = bs[B_T]
        if t >= t_end:
            stats[S_STATUS] = ST_DONE
            break
        if steps >= max_steps:
            stats[S_STATUS] = ST_MAXSTEPS
            break
        if cap - stats[S_EVCOUNT] < n_active + 1:
            stats[S_STATUS] = ST_FLUSH
            break
        if bs[B_XI] > cfg[C_XSTOP]:
            stats[S_STATUS] = ST_CURTAIN
            break
        xi = bs[B_XI]
        xidot = bs[B_XIDOT]
        ab = bs[B_ACC]
        if dt_fixed > 0.0:
            dt = dt_fixed
        else:
            vref = max(abs(xidot), bs[B_VREL], 1e-300)
            dt = min(cfg[C_DTMAX], c_res * r0 / vref)
        if t + dt >= t_end - 1e-9 * dt:
            dt = t_end - t
            t_new = t_end
        else:
            t_new = t + dt
        xi_new = _path(xi, xidot, ab, dt)
        xidot_path_end = xidot + ab * dt

        jx = 0.0
        cjx = 0.0
        fx = 0.0
        cfx = 0.0
        fy = 0.0
        cfy = 0.0
        fz = 0.0
        cfz = 0.0
        vrel_max = 0.0
        for i in range(n):
            if not active[i]:
                continue
            if mode[i] == 0:
                tau = t_new - anchor_t[i]
                px = anchor[i, 0] + vel[i, 0] * tau
                py = anchor[i, 1] + vel[i, 1] * tau
                pz = anchor[i, 2] + vel[i, 2] * tau
                rx = px - xi_new
                if rx * rx + py * py + pz * pz > lim2:
                    pos[i, 0] = px
                    pos[i, 1] = py
                    pos[i, 2] = pz
                    ux = vel[i, 0] - xidot_path_end
                    u = math.sqrt(ux * ux + vel[i, 1] ** 2 + vel[i, 2] ** 2)
                    if u > vrel_max:
                        vrel_max = u
                    continue
                tau = t - anchor_t[i]
                pos[i, 0] = anchor[i, 0] + vel[i, 0] * tau
                pos[i, 1] = anchor[i, 1] + vel[i, 1] * tau
                pos[i, 2] = anchor[i, 2] + vel[i, 2] * tau
                # force at the current separation; zero unless placed inside the support
                acc[i, 0] = 0.0
                acc[i, 1] = 0.0
                acc[i, 2] = 0.0
                rx0 = pos[i, 0] - xi
                d0 = math.sqrt(rx0 * rx0 + pos[i, 1] ** 2 + pos[i, 2] ** 2)
                if d0 < r0 and d0 > 0.0:
                    _, d1, _ = pot_eval(kind, prm, d0)
                    acc[i, 0] = -d1 / d0 * rx0
                    acc[i, 1] = -d1 / d0 * pos[i, 1]
                    acc[i, 2] = -d1 / d0 * pos[i, 2]
                mode[i] = 1

            x0 = pos[i, 0]
            x1 = pos[i, 1]
            x2 = pos[i, 2]
            v0 = vel[i, 0]
            v1 = vel[i, 1]
            v2 = vel[i, 2]
            a0 = acc[i, 0]
            a1 = acc[i, 1]
            a2 = acc[i, 2]
            vstart0 = v0
            bx = xi
            dprev = math.sqrt((x0 - bx) ** 2 + x1 * x1 + x2 * x2)
            s = 0.0
            while s < dt:
                ux = v0 - (xidot + ab * s)
                urel = math.sqrt(ux * ux + v1 * v1 + v2 * v2)
                h = dt - s
                hl = substep_limit(kind, prm, dprev, urel, c_stiff, c_res)
                if hl < h:
                    # split the remainder evenly to avoid a sliver substep
                    h = (dt - s) / math.ceil((dt - s) / hl)
                retries = 0
                while True:
                    s_new, tt, hh, n0, n1, n2, rx, d = _trial(
                        s, h, dt, t, t_new, xi, xidot, ab, xi_new, x0, x1, x2, v0, v1, v2, a0, a1, a2,
                        anchor[i, 0], anchor[i, 1], anchor[i, 2], anchor_t[i])
                    if kind == SINGULAR and d < rcap:
                        retries += 1
                        stats[S_REJECT] += 1
                        if retries > max_retry:
                            stats[S_RCAPFAIL] += 1
                            stats[S_STATUS] = ST_STIFF
                            stats[S_FAILPID] = pid[i]
                            return
                        h = 0.5 * hh
                        continue
                    break
                free = a0 == 0.0 and a1 == 0.0 and a2 == 0.0
                if free:
                    h0 = v0
                    h1 = v1
                    h2 = v2
                else:
                    h0 = v0 + 0.5 * hh * a0
                    h1 = v1 + 0.5 * hh * a1
                    h2 = v2 + 0.5 * hh * a2
                if d < r0 and d > 0.0:
                    _, d1, _ = pot_eval(kind, prm, d)
                    g = -d1 / d
                    b0 = g * rx
                    b1 = g * n1
                    b2 = g * n2
                else:
                    b0 = 0.0
                    b1 = 0.0
                    b2 = 0.0
                nv0 = h0 + 0.5 * hh * b0
                nv1 = h1 + 0.5 * hh * b1
                nv2 = h2 + 0.5 * hh * b2
                if a0 != 0.0 or a1 != 0.0 or a2 != 0.0 or b0 != 0.0 or b1 != 0.0 or b2 != 0.0:
                    anchor[i, 0] = n0
                    anchor[i, 1] = n1
                    anchor[i, 2] = n2
                    anchor_t[i] = tt

                if not inside[i]:
                    if dprev > r0 and d <= r0:
                        frac = (dprev - r0) / (dprev - d)
                        inside[i] = True
                        entry_t[i] = t + (s + frac * hh)
                        entry_v[i, 0] = v0
                        entry_v[i, 1] = v1
                        entry_v[i, 2] = v2
                        sy = x1 + frac * (n1 - x1)
                        sz = x2 + frac * (n2 - x2)
                        entry_sig[i] = math.sqrt(sy * sy + sz * sz)
                        rmin[i] = d
                        vb = xidot + ab * (s + frac * hh)
                        vbmin[i] = min(vb, xidot + ab * s_new)
                        vbmax[i] = max(vb, xidot + ab * s_new)
                else:
                    if d > r0:
                        frac = (r0 - dprev) / (d - dprev)
                        vb = xidot + ab * (s + frac * hh)
                        if vb < vbmin[i]:
                            vbmin[i] = vb
                        if vb > vbmax[i]:
                            vbmax[i] = vb
                        ncoll[i] += 1
                        k = stats[S_EVCOUNT]
                        if k < cap:
                            evf[k, E_TAU] = entry_t[i]
                            evf[k, E_TEXIT] = t + (s + frac * hh)
                            evf[k, E_ETA] = eta[i]
                            evf[k, E_SIGMA] = entry_sig[i]
                            evf[k, E_VIN0] = entry_v[i, 0]
                            evf[k, E_VIN1] = entry_v[i, 1]
                            evf[k, E_VIN2] = entry_v[i, 2]
                            evf[k, E_VOUT0] = nv0
                            evf[k, E_VOUT1] = nv1
                            evf[k, E_VOUT2] = nv2
                            evf[k, E_RMIN] = min(rmin[i], dprev)
                            evf[k, E_VBMIN] = vbmin[i]
                            evf[k, E_VBMAX] = vbmax[i]
                            evf[k, E_SEEDED] = seeded_t[i]
                            evf[k, E_W] = w[i]
                            evi[k, 0] = pid[i]
                            evi[k, 1] = ncoll[i]
                            stats[S_EVCOUNT] = k + 1
                        else:
                            stats[S_DROPPED] += 1
                        inside[i] = False
                    else:
                        if d < rmin[i]:
                            rmin[i] = d
                        vb = xidot + ab * s_new
                        if vb < vbmin[i]:
                            vbmin[i] = vb
                        if vb > vbmax[i]:
                            vbmax[i] = vb
                x0 = n0
                x1 = n1
                x2 = n2
                v0 = nv0
                v1 = nv1
                v2 = nv2
                a0 = b0
                a1 = b1
                a2 = b2
                dprev = d
                s = s_new
                stats[S_SUBSTEPS] += 1

            pos[i, 0] = x0
            pos[i, 1] = x1
            pos[i, 2] = x2
            vel[i, 0] = v0
            vel[i, 1] = v1
            vel[i, 2] = v2
            acc[i, 0] = a0
            acc[i, 1] = a1
            acc[i, 2] = a2
            jx, cjx = kahan_add(jx, cjx, w[i] * (v0 - vstart0))
            fx, cfx = kahan_add(fx, cfx, -w[i] * a0)
            if not ring:
                fy, cfy = kahan_add(fy, cfy, -w[i] * a1)
                fz, cfz = kahan_add(fz, cfz, -w[i] * a2)
            if dprev > lim and not inside[i]:
                mode[i] = 0
                anchor[i, 0] = x0
                anchor[i, 1] = x1
                anchor[i, 2] = x2
                anchor_t[i] = t_new
            ux = v0 - xidot_path_end
            u = math.sqrt(ux * ux + v1 * v1 + v2 * v2)
            if u > vrel_max:
                vrel_max = u

        # impulse the body receives: minus what the fluid gained
        jbody = -(jx + cjx)
        fnew = fx + cfx
        if frozen:
            xidot_new = xidot + E * dt / M
            bs[B_JDISC] += jbody
            bs[B_WDISC] += jbody * 0.5 * (xidot + xidot_new)
            anew = E / M
        else:
            xidot_new = xidot + (E * dt + jbody) / M
            anew = (E + fnew) / M
        bs[B_JTOT] += jbody
        bs[B_T] = t_new
        bs[B_XI] = xi_new
        bs[B_XIDOT] = xidot_new
        bs[B_ACC] = anew
        bs[B_FRIC] = fnew
        bs[B_VREL] = vrel_max
        if abs(anew) > bs[B_SUPACC]:
            bs[B_SUPACC] = abs(anew)
        if xidot_new < bs[B_VFLOOR]:
            bs[B_VFLOOR] = xidot_new
        if not ring:
            fp = math.sqrt((fy + cfy) ** 2 + (fz + cfz) ** 2)
            if fp > bs[B_FPERP]:
                bs[B_FPERP] = fp
        steps += 1
        stats[S_STEPS] += 1
