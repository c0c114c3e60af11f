"""Compiled per-path loops for the Monte Carlo engine."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _integrand(t, y, r, s2, lnah, dexp, out):
    base = s2 * math.exp(2.0 * y - 2.0 * r * t)
    dP = -math.exp(dexp * (lnah - y))
    out[0] = base
    out[1] = base * dP
    out[2] = base * dP * dP


@njit(cache=True)
def level_paths(rng, n, y0, mu, sd, var2, dt, n_steps, bridge, lnL, lnU, integrals,
                r, s2, lnah, dexp, tL, tU, IL, IU, exit_time, exit_side, exit_int, censored):
    """Simulate n paths in order, all draws from ``rng``.

    lnL holds log lower levels descending (outermost last), lnU log upper
    levels ascending. Results are written into the preallocated arrays.
    Each step uses one normal and, with the bridge on, two uniforms.
    """
    kL = lnL.shape[0]
    kU = lnU.shape[0]
    Fp = np.empty(3)
    Fn = np.empty(3)
    Fl = np.empty(3)
    I = np.empty(3)
    for i in range(n):
        y = y0
        cl = 0
        cu = 0
        while cl < kL and lnL[cl] >= y:
            tL[i, cl] = 0.0
            cl += 1
        while cu < kU and lnU[cu] <= y:
            tU[i, cu] = 0.0
            cu += 1
        if cl == kL or cu == kU:
            exit_time[i] = 0.0
            exit_side[i] = -1 if cl == kL else 1
            continue
        I[0] = 0.0
        I[1] = 0.0
        I[2] = 0.0
        if integrals:
            _integrand(0.0, y, r, s2, lnah, dexp, Fp)
        done = False
        for step in range(n_steps):
            t0 = step * dt
            y1 = y + mu + sd * rng.standard_normal()
            if bridge:
                u1 = rng.random()
                u2 = rng.random()
                dy2 = (y1 - y) * (y1 - y)
                mn = 0.5 * (y + y1 - math.sqrt(dy2 - var2 * math.log(u1)))
                mx = 0.5 * (y + y1 + math.sqrt(dy2 - var2 * math.log(u2)))
            else:
                mn = min(y, y1)
                mx = max(y, y1)
            tm = t0 + 0.5 * dt
            nl = cl
            while nl < kL and lnL[nl] >= mn:
                nl += 1
            nu = cu
            while nu < kU and lnU[nu] <= mx:
                nu += 1
            for j in range(cl, nl):
                tL[i, j] = tm
                if integrals:
                    _integrand(tm, lnL[j], r, s2, lnah, dexp, Fl)
                    for q in range(3):
                        IL[i, j, q] = I[q] + 0.25 * dt * (Fp[q] + Fl[q])
            for j in range(cu, nu):
                tU[i, j] = tm
                if integrals:
                    _integrand(tm, lnU[j], r, s2, lnah, dexp, Fl)
                    for q in range(3):
                        IU[i, j, q] = I[q] + 0.25 * dt * (Fp[q] + Fl[q])
            exL = nl == kL
            exU = nu == kU
            if exL and exU:
                # both barriers inside one step: keep the nearer one
                if y - lnL[kL - 1] <= lnU[kU - 1] - y:
                    exU = False
                else:
                    exL = False
            if exL or exU:
                exit_time[i] = tm
                exit_side[i] = -1 if exL else 1
                if integrals:
                    for q in range(3):
                        exit_int[i, q] = IL[i, kL - 1, q] if exL else IU[i, kU - 1, q]
                done = True
                break
            if integrals:
                _integrand(t0 + dt, y1, r, s2, lnah, dexp, Fn)
                for q in range(3):
                    I[q] += 0.5 * dt * (Fp[q] + Fn[q])
                    Fp[q] = Fn[q]
            y = y1
            cl = nl
            cu = nu
        if not done:
            censored[i] = True
            exit_side[i] = 0
            for q in range(3):
                exit_int[i, q] = I[q]
