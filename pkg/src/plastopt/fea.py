"""Displacement-controlled incremental-iterative elasto-plastic analysis."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import material as mt
from .mesh import BoundarySpec, Mesh, element_B_matrices

log = logging.getLogger(__name__)


class StructuralSingularityError(RuntimeError):
    pass


class IncrementFailure(RuntimeError):
    """Newton iterations of one increment did not converge."""


class AnalysisFailure(RuntimeError):
    """The analysis could not reach the prescribed displacement."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class SolverOptions:
    tol: float = 1e-6
    balance_tol: float = 1e-8  # polishing target once tol is met
    max_polish: int = 3
    max_iter: int = 20
    local_rtol: float = 1e-12
    max_local_iter: int = 50
    initial_fraction: float = 0.1
    max_fraction: float = 0.2
    min_fraction: float = 1e-3
    grow: float = 1.25
    cut: float = 0.5
    fast_iters: int = 5
    slow_iters: int = 10
    max_subdivisions: int = 4


@dataclass
class TangentFactor:
    """Bordered tangent at one state, factored on the non-control free DOFs.

    ``K_nc`` is the tangent restricted to free DOFs other than the control DOF;
    ``K_pn`` / ``K_np`` are the control row and column, ``K_pp`` the corner.
    """

    lu: object
    K_pn: np.ndarray
    K_np: np.ndarray
    K_pp: float
    f_nc: np.ndarray
    f_p: float
    a: np.ndarray = field(init=False)

    def __post_init__(self):
        self.a = self.lu.solve(self.f_nc)

    def solve(self, R, du_p=0.0):
        """Newton correction for residual ``R`` (free ordering, control last)."""
        b = self.lu.solve(R[:-1] - self.K_np * du_p)
        denom = self.f_p - self.K_pn @ self.a
        dtheta = (self.K_pn @ b + self.K_pp * du_p - R[-1]) / denom
        return b + self.a * dtheta, dtheta

    def solve_transpose(self, rhs_nc, rhs_theta):
        """Solve the transposed bordered system used by the adjoint.

        Finds lambda on the free DOFs (control last) with
        ``K[:, nc]^T lambda = rhs_nc`` and ``f^T lambda = rhs_theta``.
        """
        c = self.lu.solve(rhs_nc, trans="T")
        d = self.lu.solve(self.K_pn, trans="T")
        lam_p = (rhs_theta - self.f_nc @ c) / (self.f_p - self.f_nc @ d)
        return np.append(c - d * lam_p, lam_p)


@dataclass
class Increment:
    u: np.ndarray
    theta: float
    v: np.ndarray
    plastic: np.ndarray
    eps: np.ndarray
    du_p: float
    iterations: int
    residual: float
    residual_history: list
    factor: TangentFactor | None = None

    @property
    def kappa(self):
        return self.v[:, mt.KAPPA]


@dataclass
class AnalysisHistory:
    increments: list
    v0: np.ndarray
    u0: np.ndarray

    @property
    def N(self) -> int:
        return len(self.increments)

    @property
    def theta(self) -> np.ndarray:
        return np.array([0.0] + [inc.theta for inc in self.increments])

    def control_path(self, control_dof) -> np.ndarray:
        return np.array([0.0] + [inc.u[control_dof] for inc in self.increments])

    @property
    def final(self) -> Increment:
        return self.increments[-1]

    def state(self, n):
        """(v_n, plastic_n) with n = 0 the virgin state."""
        if n == 0:
            return self.v0, np.zeros(self.v0.shape[0], dtype=bool)
        inc = self.increments[n - 1]
        return inc.v, inc.plastic

    def strain(self, n):
        if n == 0:
            return np.zeros((self.v0.shape[0], 3))
        return self.increments[n - 1].eps


class FEModel:
    """Finite element model for a fixed physical density field."""

    def __init__(self, mesh: Mesh, bc: BoundarySpec, xbar, mat: mt.MaterialParams,
                 options: SolverOptions | None = None):
        self.mesh = mesh
        self.bc = bc
        self.mat = mat
        self.options = options or SolverOptions()
        self.xbar = np.asarray(xbar, dtype=float).copy()
        if self.xbar.shape != (mesh.n_elements,):
            raise ValueError("one physical density per active element expected")
        self.B, self.w = element_B_matrices(mesh)
        self.edofs = mesh.edofs
        self.pm = mt.PointMaterial.from_density(np.repeat(self.xbar, 4), mat)

        free = bc.free_dofs(mesh.n_dofs)
        nc = free[free != bc.control_dof]
        self.order = np.append(nc, bc.control_dof)  # free DOFs, control last
        self.n_free = self.order.size
        self.f_free = bc.f_hat[self.order]
        self._build_pattern()

    # -- assembly -----------------------------------------------------------
    def _build_pattern(self):
        pos = -np.ones(self.mesh.n_dofs, dtype=np.int64)
        pos[self.order] = np.arange(self.n_free)
        loc = pos[self.edofs]
        rows = np.broadcast_to(loc[:, :, None], (loc.shape[0], 8, 8))
        cols = np.broadcast_to(loc[:, None, :], (loc.shape[0], 8, 8))
        keep = ((rows >= 0) & (cols >= 0)).ravel()
        r = rows.ravel()[keep]
        c = cols.ravel()[keep]
        keys = c * self.n_free + r
        uniq, inv = np.unique(keys, return_inverse=True)
        self._keep = keep
        self._inv = inv
        self._nnz = uniq.size
        self._indices = (uniq % self.n_free).astype(np.int32)
        col = uniq // self.n_free
        self._indptr = np.searchsorted(col, np.arange(self.n_free + 1)).astype(np.int32)

    def strains(self, u):
        ue = u[self.edofs]
        return np.einsum("gij,ej->egi", self.B, ue).reshape(-1, 3)

    def internal_forces(self, sig):
        """Global internal force vector for Gauss-point stresses ``sig``."""
        s = sig.reshape(-1, 4, 3) * self.w[None, :, None]
        fe = np.einsum("gji,egj->ei", self.B, s)
        return np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=self.mesh.n_dofs)

    def element_matrices(self, C):
        Cw = C.reshape(-1, 4, 3, 3) * self.w[None, :, None, None]
        CB = np.einsum("egkl,glj->egkj", Cw, self.B)
        return np.einsum("gki,egkj->eij", self.B, CB)

    def assemble(self, C) -> sp.csc_matrix:
        """Tangent on the free DOFs (control last) from point moduli ``C``."""
        Ke = self.element_matrices(C)
        data = np.bincount(self._inv, weights=Ke.ravel()[self._keep], minlength=self._nnz)
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(self.n_free,) * 2)

    def factor(self, K) -> TangentFactor:
        K_nc = K[:-1, :-1].tocsc()
        try:
            lu = spla.splu(K_nc, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            idx = int(np.argmin(np.abs(K_nc.diagonal())))
            raise StructuralSingularityError(
                f"singular tangent ({exc}); smallest diagonal at global DOF "
                f"{int(self.order[idx])}") from exc
        piv = np.abs(lu.U.diagonal())
        if not np.all(np.isfinite(piv)) or piv.min() <= 1e-14 * piv.max():
            k = int(np.argmin(piv))
            dof = int(self.order[lu.perm_c[k]]) if k < lu.perm_c.size else -1
            raise StructuralSingularityError(f"near-singular tangent, smallest pivot near DOF {dof}")
        col = K[:, -1].toarray().ravel()
        row = K[-1, :].toarray().ravel()
        return TangentFactor(lu=lu, K_pn=row[:-1], K_np=col[:-1], K_pp=float(col[-1]),
                             f_nc=self.f_free[:-1], f_p=float(self.f_free[-1]))

    def elastic_factor(self) -> TangentFactor:
        return self.factor(self.assemble(self.pm.D))

    def residual(self, theta, sig):
        f_int = self.internal_forces(sig)
        return theta * self.f_free - f_int[self.order]

    # -- solution -------------------------------------------------------------
    def newton_increment(self, prev: Increment | None, v_prev, du_p, factor: TangentFactor):
        """Advance the control DOF by ``du_p`` and iterate to equilibrium."""
        opt = self.options
        if prev is None:
            u = np.zeros(self.mesh.n_dofs)
            theta = 0.0
            eps_prev = np.zeros((self.mesh.n_gauss, 3))
            R = np.zeros(self.n_free)
        else:
            u = prev.u.copy()
            theta = prev.theta
            eps_prev = prev.eps
            R = self.residual(theta, prev.v[:, mt.SIG])
        F = factor
        dup = du_p
        hist = []
        polish = 0
        for it in range(1, opt.max_iter + opt.max_polish + 1):
            du_nc, dth = F.solve(R, dup)
            u[self.order[:-1]] += du_nc
            u[self.bc.control_dof] += dup
            theta += dth
            dup = 0.0
            eps = self.strains(u)
            try:
                v, plastic = mt.return_map(v_prev, eps - eps_prev, self.pm,
                                           rtol=opt.local_rtol, max_iter=opt.max_local_iter)
            except mt.LocalConvergenceError as exc:
                raise IncrementFailure(str(exc)) from exc
            R = self.residual(theta, v[:, mt.SIG])
            ref = np.linalg.norm(theta * self.f_free)
            rel = np.linalg.norm(R) / ref if ref > 0 else np.linalg.norm(R)
            hist.append(rel)
            if not np.isfinite(rel):
                raise IncrementFailure("non-finite residual")
            C = mt.consistent_tangent(v, v_prev, self.pm, plastic)
            F = self.factor(self.assemble(C))
            if rel <= opt.tol:
                # a few extra iterations tighten equilibrium; stop when they stall
                stalled = polish > 0 and rel > 0.5 * hist[-2]
                if rel <= opt.balance_tol or polish >= opt.max_polish or stalled:
                    return Increment(u=u, theta=theta, v=v, plastic=plastic, eps=eps, du_p=du_p,
                                     iterations=it - polish, residual=rel, residual_history=hist,
                                     factor=F)
                polish += 1
            elif it >= opt.max_iter or (it >= 4 and rel > 1e3 * min(hist)):
                break
        raise IncrementFailure(f"no convergence in {len(hist)} iterations (residual {hist[-1]:.3e})")

    def _try(self, incs, v_prev, du_p):
        prev = incs[-1] if incs else None
        factor = prev.factor if prev is not None else self._elastic
        return self.newton_increment(prev, v_prev, du_p, factor)

    def _step_fixed(self, incs, du, depth=0):
        v_prev = incs[-1].v if incs else self.v0
        try:
            incs.append(self._try(incs, v_prev, du))
        except IncrementFailure:
            if depth >= self.options.max_subdivisions:
                raise
            self._step_fixed(incs, 0.5 * du, depth + 1)
            self._step_fixed(incs, 0.5 * du, depth + 1)

    def run(self, schedule="auto") -> AnalysisHistory:
        """March the control displacement and store the full history.

        ``schedule`` is ``'auto'`` (adaptive sizing up to ``bc.u_p``), an
        integer number of equal increments, or an explicit sequence of control
        displacement targets (non-monotone paths allowed).
        """
        self.v0 = mt.virgin_state(self.mesh.n_gauss)
        self._elastic = self.elastic_factor()
        incs: list[Increment] = []
        hist = AnalysisHistory(incs, self.v0, np.zeros(self.mesh.n_dofs))
        u_p = self.bc.u_p
        try:
            if isinstance(schedule, str):
                if schedule != "auto":
                    raise ValueError(f"unknown schedule {schedule!r}")
                self._run_auto(incs, u_p)
            else:
                if np.isscalar(schedule):
                    targets = u_p * np.arange(1, int(schedule) + 1) / int(schedule)
                else:
                    targets = np.asarray(schedule, dtype=float)
                done = 0.0
                for t in targets:
                    self._step_fixed(incs, t - done)
                    done = incs[-1].u[self.bc.control_dof]
                    self._log(incs)
        except (IncrementFailure, StructuralSingularityError) as exc:
            raise AnalysisFailure(f"analysis failed after {len(incs)} increments: {exc}", hist) from exc
        return hist

    def _run_auto(self, incs, u_p):
        opt = self.options
        sgn = np.sign(u_p)
        total = abs(u_p)
        step = opt.initial_fraction * total
        floor, cap = opt.min_fraction * total, opt.max_fraction * total
        done = 0.0
        while total - done > 1e-12 * total:
            remaining = total - done
            step = min(step, remaining)
            if remaining - step < floor:
                step = remaining
            v_prev = incs[-1].v if incs else self.v0
            try:
                inc = self._try(incs, v_prev, sgn * step)
            except IncrementFailure as exc:
                step *= opt.cut
                log.debug("increment cut to %.3e: %s", step, exc)
                if step < floor * (1 - 1e-12):
                    raise
                continue
            incs.append(inc)
            done += step
            self._log(incs)
            if inc.iterations <= opt.fast_iters:
                step *= opt.grow
            elif inc.iterations > opt.slow_iters:
                step *= opt.cut
            step = min(max(step, floor), cap)

    def _log(self, incs):
        inc = incs[-1]
        log.debug("increment %d du_p=%.4e iters=%d theta=%.6e residual=%.3e",
                  len(incs), inc.du_p, inc.iterations, inc.theta, inc.residual)


def run_analysis(mesh, bc, xbar, mat, schedule="auto", options=None) -> tuple[FEModel, AnalysisHistory]:
    model = FEModel(mesh, bc, xbar, mat, options)
    return model, model.run(schedule)
