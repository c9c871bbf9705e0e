"""Method of moving asymptotes for problems with a few inequality constraints.

The convex separable subproblem is solved by a primal-dual interior-point
method whose Newton systems are reduced to ``m + 1`` unknowns, since designs
have many more variables than constraints.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class MmaOptions:
    move: float = 0.2
    asy_init: float = 0.5
    asy_shrink: float = 0.7
    asy_grow: float = 1.2
    asy_min: float = 0.01  # closest asymptote distance, fraction of the box
    asy_max: float = 10.0
    albefa: float = 0.1
    raa0: float = 1e-5
    c: float = 1000.0
    d: float = 1.0
    a0: float = 1.0
    epsimin: float = 1e-12  # small enough that barrier drift stays below 1e-6


@dataclass
class MmaState:
    """Asymptotes and the two previous iterates."""

    n: int
    xmin: np.ndarray
    xmax: np.ndarray
    options: MmaOptions = field(default_factory=MmaOptions)
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iteration: int = 0

    @classmethod
    def box(cls, n, lo=0.0, hi=1.0, options=None):
        return cls(n, np.full(n, float(lo)), np.full(n, float(hi)), options or MmaOptions())


def _asymptotes(x, st: MmaState):
    o = st.options
    span = st.xmax - st.xmin
    if st.iteration <= 2 or st.low is None:
        low = x - o.asy_init * span
        upp = x + o.asy_init * span
    else:
        sgn = (x - st.xold1) * (st.xold1 - st.xold2)
        fac = np.ones_like(x)
        fac[sgn > 0] = o.asy_grow
        fac[sgn < 0] = o.asy_shrink
        low = x - fac * (st.xold1 - st.low)
        upp = x + fac * (st.upp - st.xold1)
        low = np.clip(low, x - o.asy_max * span, x - o.asy_min * span)
        upp = np.clip(upp, x + o.asy_min * span, x + o.asy_max * span)
    return low, upp


def move_bounds(x, low, upp, st: MmaState):
    """Per-variable subproblem bounds: box, move limit and asymptote margin."""
    o = st.options
    span = st.xmax - st.xmin
    alfa = np.maximum.reduce([low + o.albefa * (x - low), x - o.move * span, st.xmin])
    beta = np.minimum.reduce([upp - o.albefa * (upp - x), x + o.move * span, st.xmax])
    return alfa, beta


def mma_update(x, f0, df0, fc, dfc, st: MmaState):
    """One MMA step.

    Parameters
    ----------
    x : (n,) current design
    f0, df0 : objective value and gradient
    fc, dfc : (m,) constraint values (feasible when <= 0) and (m, n) gradients
    st : MmaState, updated in place

    Returns
    -------
    x_next : (n,) inside the box and within the move limit of ``x``
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    fc = np.atleast_1d(np.asarray(fc, dtype=float))
    dfc = np.atleast_2d(np.asarray(dfc, dtype=float))
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dfc)) and np.all(np.isfinite(fc))):
        raise ValueError("non-finite gradients passed to MMA")
    o = st.options
    st.iteration += 1
    low, upp = _asymptotes(x, st)
    alfa, beta = move_bounds(x, low, upp, st)
    span = np.maximum(st.xmax - st.xmin, 1e-5)

    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2

    def pq(g):
        gp, gm = np.maximum(g, 0.0), np.maximum(-g, 0.0)
        base = 0.001 * (gp + gm) + o.raa0 / span
        return ux2 * (gp + base), xl2 * (gm + base)

    p0, q0 = pq(df0)
    P, Q = pq(dfc)
    b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - fc
    m = len(fc)
    try:
        xn = subsolv(m, low, upp, alfa, beta, p0, q0, P, Q, b,
                     np.zeros(m), np.full(m, o.c), np.full(m, o.d), o.a0, o.epsimin)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        xn = None
        log.warning("MMA subproblem failed (%s); keeping current design", exc)
    if xn is None or not np.all(np.isfinite(xn)):
        if xn is not None:
            log.warning("MMA subproblem returned non-finite values; keeping current design")
        st.low = x - o.asy_shrink * (x - low)
        st.upp = x + o.asy_shrink * (upp - x)
        st.xold2, st.xold1 = st.xold1, x.copy()
        return x.copy()
    xn = np.clip(xn, alfa, beta)
    st.low, st.upp = low, upp
    st.xold2 = st.xold1 if st.xold1 is not None else x.copy()
    st.xold1 = x.copy()
    return xn


def subsolv(m, low, upp, alfa, beta, p0, q0, P, Q, b, a, c, d, a0, epsimin=1e-12):
    """Primal-dual interior point solve of the separable MMA subproblem.

    Minimizes ``a0 z + sum(c y + d y^2 / 2) + sum(p0/(U-x) + q0/(x-L))``
    subject to ``P/(U-x) + Q/(x-L) - a z - y <= b`` and ``alfa <= x <= beta``.
    Returns the design part of the solution.
    """
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(1.0, 0.5 * c)
    zet = 1.0
    s = np.ones(m)

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        uxinv = 1.0 / (upp - x)
        xlinv = 1.0 / (x - low)
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ uxinv + Q @ xlinv
        rex = plam * uxinv ** 2 - qlam * xlinv ** 2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        r = np.concatenate([rex, rey, [rez], relam,
                            xsi * (x - alfa) - epsi, eta * (beta - x) - epsi,
                            mu * y - epsi, [zet * z - epsi], lam * s - epsi])
        return r

    while epsi > epsimin:
        r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        rnorm = np.linalg.norm(r)
        rmax = np.abs(r).max()
        it = 0
        while rmax > 0.9 * epsi and it < 200:
            it += 1
            ux1 = upp - x
            xl1 = x - low
            uxinv1, xlinv1 = 1.0 / ux1, 1.0 / xl1
            uxinv2, xlinv2 = uxinv1 ** 2, xlinv1 ** 2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ uxinv1 + Q @ xlinv1
            GG = P * uxinv2 - Q * xlinv2
            dpsidx = plam * uxinv2 - qlam * xlinv2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam * uxinv2 * uxinv1 + qlam * xlinv2 * xlinv1)
            diagx += xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            AA = np.zeros((m + 1, m + 1))
            AA[:m, :m] = np.diag(diaglamyi) + (GG / diagx) @ GG.T
            AA[:m, m] = a
            AA[m, :m] = a
            AA[m, m] = -zet / z
            sol = np.linalg.solve(AA, np.append(blam, delz))
            dlam, dz = sol[:m], sol[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stm = max(np.max(-1.01 * dxx / xx), np.max(-1.01 * dx / (x - alfa)),
                      np.max(1.01 * dx / (beta - x)), 1.0)
            steg = 1.0 / stm
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            resinew = 2.0 * rnorm
            inner = 0
            while resinew > rnorm and inner < 50:
                inner += 1
                x = old[0] + steg * dx
                y = old[1] + steg * dy
                z = old[2] + steg * dz
                lam = old[3] + steg * dlam
                xsi = old[4] + steg * dxsi
                eta = old[5] + steg * deta
                mu = old[6] + steg * dmu
                zet = old[7] + steg * dzet
                s = old[8] + steg * ds
                r = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(r)
                steg *= 0.5
            rnorm = resinew
            rmax = np.abs(r).max()
        epsi *= 0.1
    return x
