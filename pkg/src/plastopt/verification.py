"""Finite-difference verification of design sensitivities and independent oracles.

Nothing here calls the adjoint or the production return map except to compare
against them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .adjoint import FunctionalSpec, evaluate, sensitivities
from .fea import AnalysisFailure, SolverOptions, run_analysis
from .material import MaterialParams
from .mesh import build_domain, distributed_right_edge, element_B_matrices

EPS_FLOOR = 1e-30
APPENDIX_MATERIAL = MaterialParams(E_min=1e-3, E_max=1e3, nu=0.3, sy0_min=0.0, sy0_max=2.0,
                                   H=0.01, p_E=3.0, p_sy=3.0)
FUNCTIONALS = ("end_compliance", "plastic_strain_sum")


def relative_error(a, f):
    a, f = np.asarray(a, float), np.asarray(f, float)
    return np.abs(a - f) / np.maximum(np.abs(f), EPS_FLOOR)


@dataclass
class VerificationReport:
    """Adjoint against finite-difference derivatives, per functional and element."""

    functionals: tuple
    analytic: np.ndarray  # (n_functionals, n_elements)
    fd: np.ndarray
    threshold: float = 1e-5
    values: np.ndarray | None = None
    failed_elements: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def rel_error(self) -> np.ndarray:
        return relative_error(self.analytic, self.fd)

    @property
    def max_error(self) -> float:
        return float(np.nanmax(self.rel_error))

    @property
    def passed(self) -> bool:
        err = self.rel_error
        checked = ~np.isnan(self.fd)
        return not self.failed_elements and bool(np.all(err[checked] <= self.threshold))

    def rows(self):
        err = self.rel_error
        for k, name in enumerate(self.functionals):
            for e in range(self.analytic.shape[1]):
                yield name, e + 1, self.analytic[k, e], self.fd[k, e], err[k, e]

    def table(self) -> str:
        lines = [f"{'functional':<20}{'elem':>5}{'adjoint':>16}{'finite diff':>16}{'rel. error':>13}"]
        for name, e, a, f, r in self.rows():
            lines.append(f"{name:<20}{e:>5}{a:>16.6e}{f:>16.6e}{r:>13.3e}")
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_error:.3e} (threshold {self.threshold:g}): {status}")
        if self.failed_elements:
            lines.append(f"perturbed analyses failed for elements {self.failed_elements}")
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["functional", "element", "adjoint", "finite_difference", "rel_error"])
            for row in self.rows():
                w.writerow(row)


def appendix_case(load: str = "point", symmetric: bool = False, xbar: float = 0.8):
    """The 2x2 beam: h = 0.5 squares, left edge clamped, u_p = 0.01 downwards
    at the top right corner.

    ``symmetric`` adds x-rollers on the right edge. ``load`` is ``'point'`` or
    ``'distributed'`` (unit load over the right edge, half weights at the ends).
    """
    mesh, bc = build_domain("rectangle", (2, 2), symmetry_right=symmetric, u_p=0.01)
    if load == "distributed":
        bc = distributed_right_edge(mesh, bc)
    elif load != "point":
        raise ValueError(f"unknown load case {load!r}")
    return mesh, bc, np.full(mesh.n_elements, float(xbar)), APPENDIX_MATERIAL


def fd_check(mesh, bc, xbar, mat, schedule=10, functionals=FUNCTIONALS, dx=1e-6,
             central=False, options=None, threshold=1e-5, elements=None) -> VerificationReport:
    """Compare adjoint sensitivities with finite differences of full analyses.

    Forward differences by default; ``central=True`` is meant for debugging.
    Elements whose perturbed analysis fails are listed in the report and
    their FD entries are NaN.
    """
    options = options or SolverOptions()
    specs = [FunctionalSpec(k) for k in functionals]
    xbar = np.asarray(xbar, dtype=float)
    model, hist = run_analysis(mesh, bc, xbar, mat, schedule, options)
    g0 = np.array([evaluate(model, hist, s) for s in specs])
    analytic = sensitivities(model, hist, specs)
    ne = mesh.n_elements
    subset = elements is not None
    elements = list(range(ne)) if elements is None else list(elements)
    fd = np.full((len(specs), ne), np.nan)
    failed = []

    def value(x):
        mo, hi = run_analysis(mesh, bc, x, mat, schedule, options)
        return np.array([evaluate(mo, hi, s) for s in specs])

    for e in elements:
        xp = xbar.copy()
        xp[e] += dx
        try:
            gp = value(xp)
            if central:
                xm = xbar.copy()
                xm[e] -= dx
                fd[:, e] = (gp - value(xm)) / (2 * dx)
            else:
                fd[:, e] = (gp - g0) / dx
        except (AnalysisFailure, ValueError):
            failed.append(e)
    if subset:
        keep = np.zeros(ne, dtype=bool)
        keep[elements] = True
        analytic = np.where(keep, analytic, np.nan)
    meta = {"increments": hist.N, "tol": options.tol, "dx": dx,
            "scheme": "central" if central else "forward",
            "plastic_points": int(hist.final.plastic.sum())}
    return VerificationReport(tuple(functionals), analytic, fd, threshold, g0, failed, meta)


def mixed_sign_audit(report: VerificationReport) -> bool:
    """Plastic-strain sensitivities take both signs, compliance ones are all negative."""
    names = list(report.functionals)
    ps = report.analytic[names.index("plastic_strain_sum")]
    ec = report.analytic[names.index("end_compliance")]
    return bool(np.any(ps > 0) and np.any(ps < 0) and np.all(ec < 0))


def path_refinement(mesh, bc, xbar, mat, counts=(10, 30, 50), functionals=FUNCTIONALS,
                    options=None):
    """Sensitivities and terminal values for several equal-increment counts.

    Returns ``{count: (values, sensitivities)}``.
    """
    specs = [FunctionalSpec(k) for k in functionals]
    out = {}
    for n in counts:
        model, hist = run_analysis(mesh, bc, xbar, mat, n, options)
        out[n] = (np.array([evaluate(model, hist, s) for s in specs]),
                  sensitivities(model, hist, specs))
    return out


# -- linear-elastic oracle -----------------------------------------------------
def elastic_compliance_oracle(mesh, bc, xbar, mat):
    """End-compliance and its density gradient for a purely elastic response.

    Direct dense solve: with ``a = K^-1 f`` on the free DOFs the load factor is
    ``u_p / a_p`` and ``g = -f_p u_p^2 / a_p``.
    """
    B, w = element_B_matrices(mesh)
    ke0 = np.einsum("g,gki,kl,glj->ij", w, B, mat.D0, B)
    xbar = np.asarray(xbar, float)
    E = mat.E_min + (mat.E_max - mat.E_min) * xbar ** mat.p_E
    dE = (mat.E_max - mat.E_min) * mat.p_E * xbar ** (mat.p_E - 1.0)
    nd = mesh.n_dofs
    K = np.zeros((nd, nd))
    ed = mesh.edofs
    for e in range(mesh.n_elements):
        K[np.ix_(ed[e], ed[e])] += E[e] * ke0
    free = bc.free_dofs(nd)
    Kf = K[np.ix_(free, free)]
    f = bc.f_hat[free]
    a_full = np.zeros(nd)
    a_full[free] = np.linalg.solve(Kf, f)
    p = bc.control_dof
    z_full = np.zeros(nd)
    ep = (free == p).astype(float)
    z_full[free] = np.linalg.solve(Kf.T, ep)
    fp, up = bc.f_hat[p], bc.u_p
    ap = a_full[p]
    g = -fp * up * up / ap
    dap = -np.einsum("ei,ij,ej->e", z_full[ed], ke0, a_full[ed]) * dE
    return g, fp * up * up / ap ** 2 * dap


# -- dense Newton return-map oracle ------------------------------------------------
@lru_cache(maxsize=1)
def _symbolic_return_map():
    import sympy as sp

    v = sp.symbols("e1 e2 e3 k s1 s2 s3 l", real=True)
    vp = sp.symbols("pe1 pe2 pe3 pk ps1 ps2 ps3 pl", real=True)
    de = sp.symbols("d1 d2 d3", real=True)
    E, nu, sy0, H = sp.symbols("E nu sy0 H", positive=True)
    D = E / (1 - nu ** 2) * sp.Matrix([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    sig = sp.Matrix(v[4:7])
    q = sig[0] ** 2 - sig[0] * sig[1] + sig[1] ** 2 + 3 * sig[2] ** 2
    svm = sp.sqrt(q)
    grad = sp.Matrix([sp.diff(svm, s) for s in sig])
    dl = v[7] - vp[7]
    ep = sp.Matrix(v[0:3])
    epp = sp.Matrix(vp[0:3])
    r1 = epp + dl * grad - ep
    r2 = vp[3] + dl * sp.sqrt(sp.Rational(2, 3) * (grad.T * grad)[0]) - v[3]
    r3 = sp.Matrix(vp[4:7]) + D * (sp.Matrix(de) - (ep - epp)) - sig
    r4 = (q - (sy0 + H * E * v[3]) ** 2) / 3
    R = sp.Matrix([*r1, r2, *r3, r4])
    J = R.jacobian(sp.Matrix(v))
    args = (v, vp, de, E, nu, sy0, H)
    return (sp.lambdify(args, R, "numpy"), sp.lambdify(args, J, "numpy"),
            sp.lambdify((sig, vp[3], E, sy0, H), svm - (sy0 + H * E * vp[3]), "numpy"))


def oracle_return_map(v_prev, deps, E, nu, sy0, H, tol=1e-14, max_iter=100):
    """Single-point backward-Euler update by plain dense Newton on the symbolic
    residual. Returns (v, plastic)."""
    R, J, ftrial = _symbolic_return_map()
    v_prev = np.asarray(v_prev, float)
    deps = np.asarray(deps, float)
    c = E / (1 - nu ** 2)
    D = c * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    sig_tr = v_prev[4:7] + D @ deps
    v = v_prev.copy()
    v[4:7] = sig_tr
    sy = sy0 + H * E * v_prev[3]
    f = float(ftrial(sig_tr, v_prev[3], E, sy0, H))
    if not (f > 1e-12 * sy) or not np.any(sig_tr):
        return v, False
    args = lambda x: (x, v_prev, deps, E, nu, sy0, H)  # noqa: E731
    # rows: strains, kappa, stresses (scaled by E), yield (scaled by sy^2)
    w = np.array([1, 1, 1, 1, 1 / E, 1 / E, 1 / E, 1 / sy ** 2])

    def rnorm(x):
        return np.linalg.norm(w * np.asarray(R(*args(x)), float).ravel())

    last = np.inf
    for _ in range(max_iter):
        r = np.asarray(R(*args(v)), float).ravel()
        step = np.linalg.solve(np.asarray(J(*args(v)), float), -r)
        t, r0 = 1.0, rnorm(v)
        while t > 1e-4 and rnorm(v + t * step) >= r0 and r0 > 0:
            t *= 0.5
        v = v + t * step
        size = np.linalg.norm(step / np.maximum(np.abs(v), 1e-300 + np.abs(step)))
        if size <= tol or (r0 == 0.0) or (size >= last and size < 1e-10):
            break
        last = size
    return v, True
