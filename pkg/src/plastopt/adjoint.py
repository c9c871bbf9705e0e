"""Backwards-incremental adjoint sensitivities for path-dependent analyses.

For each functional the global multipliers ``lam_n`` (one per free DOF) and
local multipliers ``gam_n`` (8 per Gauss point) are obtained from increment N
down to 1. The only explicit design dependence sits in the local residuals, so
the sensitivity is ``-sum_n gam_n . dH_n/dxbar`` accumulated element-wise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import material as mt
from .fea import AnalysisHistory, FEModel

KINDS = ("end_compliance", "plastic_strain_sum", "volume")


class AdjointFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class FunctionalSpec:
    """A scalar response of the terminal state.

    ``end_compliance`` is ``-theta_N * f_p * u_N^p`` at the control DOF (the
    minimization form), ``plastic_strain_sum`` is the sum of kappa over all
    Gauss points and ``volume`` the material volume. ``scale`` multiplies the
    functional and its derivatives.
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional {self.kind!r}")


def evaluate(model: FEModel, history: AnalysisHistory, spec: FunctionalSpec) -> float:
    if spec.kind == "volume":
        return spec.scale * model.mesh.element_volume * float(model.xbar.sum())
    fin = history.final
    if spec.kind == "end_compliance":
        p = model.bc.control_dof
        return -spec.scale * fin.theta * model.bc.f_hat[p] * fin.u[p]
    return spec.scale * float(fin.kappa.sum())


def terminal_partials(model: FEModel, history: AnalysisHistory, spec: FunctionalSpec):
    """(dg/du_N over all DOFs, dg/dtheta_N, dg/dv_N per Gauss point)."""
    n_gp = model.mesh.n_gauss
    dg_du = np.zeros(model.mesh.n_dofs)
    dg_dv = np.zeros((n_gp, mt.NV))
    dg_dth = 0.0
    fin = history.final
    if spec.kind == "end_compliance":
        p = model.bc.control_dof
        fp = model.bc.f_hat[p]
        dg_dth = -spec.scale * fp * fin.u[p]
        # control DOF is prescribed; this entry never enters the adjoint system
        dg_du[p] = -spec.scale * fin.theta * fp
    elif spec.kind == "plastic_strain_sum":
        dg_dv[:, mt.KAPPA] = spec.scale
    return dg_du, dg_dth, dg_dv


def _assemble_unweighted(model: FEModel, t):
    """sum_gp B^T t over elements, no quadrature weight."""
    fe = np.einsum("gji,egj->ei", model.B, t.reshape(-1, 4, 3))
    return np.bincount(model.edofs.ravel(), weights=fe.ravel(), minlength=model.mesh.n_dofs)


def sensitivities(model: FEModel, history: AnalysisHistory, specs):
    """dg/dxbar per element for each functional in ``specs``.

    Returns an array of shape (len(specs), n_elements).
    """
    specs = list(specs)
    ne = model.mesh.n_elements
    out = np.zeros((len(specs), ne))
    state_specs = [k for k, s in enumerate(specs) if s.kind != "volume"]
    for k, s in enumerate(specs):
        if s.kind == "volume":
            out[k] = s.scale * model.mesh.element_volume
    if not state_specs:
        return out
    pm = model.pm
    m = len(state_specs)
    n_gp = model.mesh.n_gauss
    N = history.N
    partials = [terminal_partials(model, history, specs[k]) for k in state_specs]
    w_gp = np.tile(model.w, ne)
    acc = np.zeros((m, n_gp))
    gam_next = None
    v_next = pl_next = None
    for n in range(N, 0, -1):
        inc = history.increments[n - 1]
        v_n, pl_n = inc.v, inc.plastic
        v_prev, _ = history.state(n - 1)
        deps = history.strain(n) - history.strain(n - 1)
        Jv_T = np.transpose(mt.dH_dv(v_n, v_prev, pm, pl_n), (0, 2, 1))
        q = np.zeros((n_gp, mt.NV, m))
        if n == N:
            for j, (_, _, dg_dv) in enumerate(partials):
                q[:, :, j] = dg_dv
        if gam_next is not None:
            Jc = mt.dH_dv_prev(v_next, pm, pl_next)
            q -= np.einsum("pij,pim->pjm", Jc, gam_next)
        s = np.linalg.solve(Jv_T, q)
        t = s[:, mt.SIG, :].copy()
        if gam_next is not None:
            t -= gam_next[:, mt.SIG, :]
        Dt = pm.E[:, None, None] * np.einsum("ij,pjm->pim", pm.D0, t)
        if inc.factor is None:
            raise AdjointFailure(f"increment {n} carries no tangent factorization")
        lam_gp = np.zeros((n_gp, 3, m))
        for j in range(m):
            rhs = _assemble_unweighted(model, Dt[:, :, j])
            dg_dth = 0.0
            if n == N:
                rhs = rhs - partials[j][0]
                dg_dth = partials[j][1]
            try:
                lam = inc.factor.solve_transpose(rhs[model.order[:-1]], dg_dth)
            except (RuntimeError, ZeroDivisionError) as exc:
                raise AdjointFailure(f"transpose solve failed at increment {n}: {exc}") from exc
            lam_full = np.zeros(model.mesh.n_dofs)
            lam_full[model.order] = lam
            lam_gp[:, :, j] = model.strains(lam_full)
        extra = np.zeros((n_gp, mt.NV, m))
        extra[:, mt.SIG, :] = w_gp[:, None, None] * lam_gp
        gam = s + np.linalg.solve(Jv_T, extra)
        dHx = mt.dH_dxbar(v_n, v_prev, deps, pm, pl_n)
        acc -= np.einsum("pim,pi->mp", gam, dHx)
        gam_next, v_next, pl_next = gam, v_n, pl_n
    per_elem = acc.reshape(m, ne, 4).sum(axis=2)
    for j, k in enumerate(state_specs):
        out[k] = per_elem[j]
    return out
