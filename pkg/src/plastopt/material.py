"""J2 plane-stress plasticity at the Gauss-point level.

All kernels are batched: a block of ``n`` Gauss points is stored as an
``(n, 8)`` array of internal variables laid out as

    v = [eps_p_xx, eps_p_yy, gamma_p_xy, kappa, s_xx, s_yy, s_xy, lambda]

with engineering shear in the strain components. Elastic increments use a
degenerate local residual (plastic variables carried over, multiplier frozen)
so the 8x8 system keeps the same layout in every regime.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = slice(0, 3)
KAPPA = 3
SIG = slice(4, 7)
LAM = 7
NV = 8

# sigma^T P sigma = s_xx^2 - s_xx s_yy + s_yy^2 + 3 s_xy^2
P_MISES = np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])


class LocalConvergenceError(RuntimeError):
    """Return mapping did not converge at one or more Gauss points."""

    def __init__(self, gauss_points, residual):
        self.gauss_points = np.atleast_1d(gauss_points)
        self.residual = residual
        super().__init__(
            f"return mapping failed at {self.gauss_points.size} Gauss point(s), "
            f"first id {int(self.gauss_points[0])}, scaled residual {residual:.3e}"
        )


@dataclass(frozen=True)
class MaterialParams:
    """Two-phase SIMP material for elasto-plasticity.

    Defaults are the values used throughout the L- and U-bracket studies.
    """

    E_min: float = 1.0e-3
    E_max: float = 1.0e3
    nu: float = 0.3
    sy0_min: float = 0.0
    sy0_max: float = 2.0
    H: float = 0.01
    p_E: float = 3.0
    p_sy: float = 3.0

    def __post_init__(self):
        errors = []
        if not self.E_max > self.E_min > 0:
            errors.append("require E_max > E_min > 0")
        if not 0 <= self.nu < 0.5:
            errors.append("require 0 <= nu < 0.5")
        if not self.sy0_max > self.sy0_min >= 0:
            errors.append("require sy0_max > sy0_min >= 0")
        if self.H < 0:
            errors.append("require H >= 0")
        if not self.p_E >= self.p_sy >= 0:
            errors.append("require p_E >= p_sy >= 0")
        if errors:
            raise ValueError("invalid material parameters: " + "; ".join(errors))

    def with_penalty(self, p_E: float, p_sy: float) -> "MaterialParams":
        return MaterialParams(self.E_min, self.E_max, self.nu, self.sy0_min,
                              self.sy0_max, self.H, p_E, p_sy)

    @property
    def D0(self) -> np.ndarray:
        return plane_stress_D0(self.nu)


def plane_stress_D0(nu: float) -> np.ndarray:
    """Plane-stress elasticity matrix for unit Young's modulus."""
    c = 1.0 / (1.0 - nu * nu)
    return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def _check_density(xbar):
    xbar = np.asarray(xbar, dtype=float)
    if np.any(xbar < 0.0) or np.any(xbar > 1.0) or not np.all(np.isfinite(xbar)):
        raise ValueError("physical densities must lie in [0, 1]")
    return xbar


def _power(x, p):
    """x**p and its derivative with 0**0 = 1 and a zero slope at x = 0."""
    val = x**p
    with np.errstate(divide="ignore", invalid="ignore"):
        der = np.where(x > 0.0, p * x ** (p - 1.0), 0.0 if p != 1.0 else 1.0)
    return val, der


def interp_E(xbar, mat: MaterialParams):
    """Young's modulus and its density derivative."""
    xbar = _check_density(xbar)
    val, der = _power(xbar, mat.p_E)
    span = mat.E_max - mat.E_min
    return mat.E_min + span * val, span * der


def interp_sigma_y0(xbar, mat: MaterialParams):
    """Initial yield stress and its density derivative."""
    xbar = _check_density(xbar)
    val, der = _power(xbar, mat.p_sy)
    span = mat.sy0_max - mat.sy0_min
    return mat.sy0_min + span * val, span * der


def von_mises(sig):
    """Plane-stress equivalent stress, vectorized over the last axis."""
    sig = np.asarray(sig, dtype=float)
    q = sig[..., 0] ** 2 - sig[..., 0] * sig[..., 1] + sig[..., 1] ** 2 + 3.0 * sig[..., 2] ** 2
    return np.sqrt(np.maximum(q, 0.0))


def flow_direction(sig):
    """df/dsigma = P sigma / sigma_vm and the hardening factor sqrt(2/3 a.a)."""
    s = von_mises(sig)
    a = (sig @ P_MISES) / s[:, None]
    m = np.sqrt(2.0 / 3.0 * np.einsum("ij,ij->i", a, a))
    return a, m, s


@dataclass
class PointMaterial:
    """Material constants broadcast to a block of Gauss points."""

    E: np.ndarray
    sy0: np.ndarray
    H: float
    D0: np.ndarray
    dE: np.ndarray | None = None
    dsy0: np.ndarray | None = None

    @classmethod
    def from_density(cls, xbar_gp, mat: MaterialParams) -> "PointMaterial":
        E, dE = interp_E(xbar_gp, mat)
        sy0, dsy0 = interp_sigma_y0(xbar_gp, mat)
        return cls(E=E, sy0=sy0, H=mat.H, D0=mat.D0, dE=dE, dsy0=dsy0)

    def subset(self, idx) -> "PointMaterial":
        return PointMaterial(
            self.E[idx], self.sy0[idx], self.H, self.D0,
            None if self.dE is None else self.dE[idx],
            None if self.dsy0 is None else self.dsy0[idx],
        )

    @property
    def D(self) -> np.ndarray:
        return self.E[:, None, None] * self.D0

    def yield_stress(self, kappa):
        return self.sy0 + self.H * self.E * kappa


def virgin_state(n: int) -> np.ndarray:
    return np.zeros((n, NV))


def trial_state(v_prev, deps, pm: PointMaterial):
    """Elastic predictor.

    Returns the trial stress, the trial yield value and the plastic mask.
    A point is flagged plastic when the trial yield value exceeds a round-off
    margin of the current yield stress (points with zero yield stress yield
    under any nonzero stress).
    """
    sig_tr = v_prev[:, SIG] + np.einsum("n,ij,nj->ni", pm.E, pm.D0, deps)
    sy = pm.yield_stress(v_prev[:, KAPPA])
    f_tr = von_mises(sig_tr) - sy
    plastic = f_tr > 1e-12 * sy
    plastic &= von_mises(sig_tr) > 0.0
    return sig_tr, f_tr, plastic


def local_residual(v, v_prev, deps, pm: PointMaterial, plastic):
    """The four stacked local residuals H_n, shape (n, 8)."""
    n = v.shape[0]
    r = np.empty((n, NV))
    dlam = v[:, LAM] - v_prev[:, LAM]
    deps_el = deps - (v[:, EPS] - v_prev[:, EPS])
    r[:, SIG] = v_prev[:, SIG] + np.einsum("n,ij,nj->ni", pm.E, pm.D0, deps_el) - v[:, SIG]

    el = ~plastic
    r[el, EPS] = v_prev[el, EPS] - v[el, EPS]
    r[el, KAPPA] = v_prev[el, KAPPA] - v[el, KAPPA]
    r[el, LAM] = dlam[el]

    if np.any(plastic):
        vp = v[plastic]
        a, m, s = flow_direction(vp[:, SIG])
        dl = dlam[plastic]
        r[plastic, EPS] = v_prev[plastic, EPS] + dl[:, None] * a - vp[:, EPS]
        r[plastic, KAPPA] = v_prev[plastic, KAPPA] + dl * m - vp[:, KAPPA]
        sy = pm.sy0[plastic] + pm.H * pm.E[plastic] * vp[:, KAPPA]
        r[plastic, LAM] = (s * s - sy * sy) / 3.0
    return r


def dH_dv(v, v_prev, pm: PointMaterial, plastic):
    """Jacobian of H_n with respect to v_n, shape (n, 8, 8)."""
    n = v.shape[0]
    J = np.zeros((n, NV, NV))
    eye3 = np.eye(3)
    J[:, EPS, EPS] = -eye3
    J[:, KAPPA, KAPPA] = -1.0
    J[:, SIG, EPS] = -pm.E[:, None, None] * pm.D0
    J[:, SIG, SIG] = -eye3
    J[~plastic, LAM, LAM] = 1.0

    if np.any(plastic):
        vp = v[plastic]
        dl = (vp[:, LAM] - v_prev[plastic, LAM])
        a, m, s = flow_direction(vp[:, SIG])
        da = (P_MISES[None] - np.einsum("ni,nj->nij", a, a)) / s[:, None, None]
        dm = (2.0 / 3.0) * np.einsum("nij,nj->ni", da, a) / m[:, None]
        Jp = J[plastic]
        Jp[:, EPS, SIG] = dl[:, None, None] * da
        Jp[:, EPS, LAM] = a
        Jp[:, KAPPA, SIG] = dl[:, None] * dm
        Jp[:, KAPPA, LAM] = m
        Jp[:, LAM, SIG] = (2.0 / 3.0) * (vp[:, SIG] @ P_MISES)
        E = pm.E[plastic]
        sy = pm.sy0[plastic] + pm.H * E * vp[:, KAPPA]
        Jp[:, LAM, KAPPA] = -(2.0 / 3.0) * sy * pm.H * E
        J[plastic] = Jp
    return J


def dH_deps(pm: PointMaterial):
    """Derivative of H_n with respect to the total strain at step n, (n, 8, 3).

    Chain with B for dH_n/du_n; the negative gives dH_n/du_{n-1}.
    """
    n = pm.E.shape[0]
    G = np.zeros((n, NV, 3))
    G[:, SIG, :] = pm.D
    return G


def dH_dv_prev(v, pm: PointMaterial, plastic):
    """Derivative of H_n with respect to v_{n-1}, given the converged v_n.

    This is the cross-increment block dH_{n+1}/dv_n when called with the
    state and regime of increment n+1.
    """
    n = v.shape[0]
    J = np.zeros((n, NV, NV))
    eye3 = np.eye(3)
    J[:, EPS, EPS] = eye3
    J[:, KAPPA, KAPPA] = 1.0
    J[:, SIG, SIG] = eye3
    J[:, SIG, EPS] = pm.E[:, None, None] * pm.D0
    J[~plastic, LAM, LAM] = -1.0
    if np.any(plastic):
        a, m, _ = flow_direction(v[plastic][:, SIG])
        Jp = J[plastic]
        Jp[:, EPS, LAM] = -a
        Jp[:, KAPPA, LAM] = -m
        J[plastic] = Jp
    return J


def dH_dxbar(v, v_prev, deps, pm: PointMaterial, plastic):
    """Explicit density derivative of H_n, shape (n, 8)."""
    n = v.shape[0]
    g = np.zeros((n, NV))
    deps_el = deps - (v[:, EPS] - v_prev[:, EPS])
    g[:, SIG] = pm.dE[:, None] * (deps_el @ pm.D0.T)
    kap = v[plastic, KAPPA]
    E = pm.E[plastic]
    sy = pm.sy0[plastic] + pm.H * E * kap
    g[plastic, LAM] = -(2.0 / 3.0) * sy * (pm.dsy0[plastic] + pm.H * pm.dE[plastic] * kap)
    return g


def _scaled(r, E, scale):
    out = r.copy()
    out[:, EPS] *= E[:, None]
    out[:, KAPPA] *= E
    out[:, LAM] *= 1.5 / scale
    return np.abs(out).max(axis=1) / scale


def return_map(v_prev, deps, pm: PointMaterial, *, rtol=1e-12, max_iter=50, ids=None):
    """Backward-Euler update of a block of Gauss points.

    Elastic points take the trial stress directly. Plastic points are solved by
    damped Newton iterations on the full 8x8 residual system, starting from the
    trial state.

    Returns
    -------
    v : ndarray (n, 8)
        Converged internal variables.
    plastic : ndarray of bool (n,)
        Regime of the increment as decided by the trial state.
    """
    sig_tr, _, plastic = trial_state(v_prev, deps, pm)
    v = v_prev.copy()
    v[:, SIG] = sig_tr
    if not np.any(plastic):
        return v, plastic

    idx = np.flatnonzero(plastic)
    vp = v[idx]
    vprev = v_prev[idx]
    de = deps[idx]
    sub = pm.subset(idx)
    msk = np.ones(idx.size, dtype=bool)
    scale = von_mises(sig_tr[idx])
    r = local_residual(vp, vprev, de, sub, msk)
    err = _scaled(r, sub.E, scale)
    active = err > rtol
    for _ in range(max_iter):
        if not np.any(active):
            break
        ia = np.flatnonzero(active)
        sa = sub.subset(ia)
        J = dH_dv(vp[ia], vprev[ia], sa, msk[ia])
        step = -np.linalg.solve(J, r[ia][:, :, None])[:, :, 0]
        t = np.ones(ia.size)
        base = err[ia]
        pending = np.ones(ia.size, dtype=bool)
        new_v = vp[ia].copy()
        new_r = r[ia].copy()
        new_err = base.copy()
        for _ls in range(12):
            pi = np.flatnonzero(pending)
            cand = vp[ia[pi]] + t[pi, None] * step[pi]
            # the multiplier and von Mises stress must stay admissible
            ok = (cand[:, LAM] >= vprev[ia[pi], LAM]) & (von_mises(cand[:, SIG]) > 0)
            rc = np.zeros((pi.size, NV))
            ec = np.full(pi.size, np.inf)
            if np.any(ok):
                ko = np.flatnonzero(ok)
                rc[ko] = local_residual(cand[ko], vprev[ia[pi[ko]]], de[ia[pi[ko]]],
                                        sa.subset(pi[ko]), np.ones(ko.size, dtype=bool))
                ec[ko] = _scaled(rc[ko], sa.E[pi[ko]], scale[ia[pi[ko]]])
            accept = ec < np.maximum(base[pi], 1e-300) * (1.0 - 1e-4 * t[pi]) + 1e-300
            accept |= (t[pi] < 1e-3) & np.isfinite(ec)
            acc = pi[accept]
            new_v[acc] = cand[accept]
            new_r[acc] = rc[accept]
            new_err[acc] = ec[accept]
            pending[acc] = False
            t[pi[~accept]] *= 0.5
            if not np.any(pending):
                break
        vp[ia] = new_v
        r[ia] = new_r
        err[ia] = new_err
        small_step = np.abs(step * t[:, None]).max(axis=1) <= 1e-15 * (np.abs(vp[ia]).max(axis=1) + 1e-300)
        active[ia] = (new_err > rtol) & ~small_step
    if np.any(err > max(rtol, 1e-9)):
        bad = np.flatnonzero(err > max(rtol, 1e-9))
        gp = idx[bad] if ids is None else np.asarray(ids)[idx[bad]]
        raise LocalConvergenceError(gp, float(err[bad].max()))
    v[idx] = vp
    return v, plastic


def consistent_tangent(v, v_prev, pm: PointMaterial, plastic):
    """Algorithmic modulus dsigma_n/deps_n, shape (n, 3, 3).

    Obtained by condensing the local Jacobian, -(dH/dv)^{-1} dH/deps restricted
    to the stress rows; equals D exactly for elastic points.
    """
    C = pm.D.copy()
    if np.any(plastic):
        idx = np.flatnonzero(plastic)
        sub = pm.subset(idx)
        J = dH_dv(v[idx], v_prev[idx], sub, np.ones(idx.size, dtype=bool))
        G = dH_deps(sub)
        Z = np.linalg.solve(J, G)
        C[idx] = -Z[:, SIG, :]
    return C
