"""Run orchestration, post-processing, re-analysis and field export."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .fea import AnalysisHistory, FEModel, run_analysis
from .filters import DensityField
from .material import MaterialParams, von_mises
from .mesh import BoundarySpec, Mesh
from .optimize import OptimizationAborted, OptimizationResult, optimize

log = logging.getLogger(__name__)

VOID = 1e-6
VOLUME_TOL = 1e-3  # reporting tolerance on (volume / g1* V) - 1
PLASTIC_TOL = 1e-3  # reporting tolerance on (sum kappa - g2*) / g2*


def postprocess_binary(field: DensityField, threshold: float = 0.5):
    """Round physical densities to {1e-6, 1}: ``xbar >= threshold`` becomes solid.

    Returns the binary field and its solid volume fraction.
    """
    b = np.where(np.asarray(field.xbar) >= threshold, 1.0, VOID)
    out = DensityField(x=b.copy(), x_tilde=b.copy(), xbar=b, beta=field.beta, eta=threshold,
                       radius=field.radius)
    return out, float(np.mean(b == 1.0))


def binary_field(xbar, threshold=0.5):
    xbar = np.asarray(xbar, dtype=float)
    fld = DensityField(x=xbar, x_tilde=xbar, xbar=xbar, beta=0.0, eta=threshold, radius=0.0)
    return postprocess_binary(fld, threshold)


@dataclass
class Reanalysis:
    displacement: np.ndarray  # control DOF displacement per increment, starting at 0
    load: np.ndarray  # theta * f_hat_p per increment
    kappa_sum: np.ndarray
    yield_increment: int | None
    yield_load: float | None
    history: AnalysisHistory
    model: FEModel

    def write_curve(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u_p", "load"])
            for u, f in zip(self.displacement, self.load):
                w.writerow([repr(float(u)), repr(float(f))])


def reanalyze(mesh: Mesh, bc: BoundarySpec, xbar, mat: MaterialParams, u_p: float = 0.02,
              increments: int = 40, kappa_tol: float = 1e-12, options=None) -> Reanalysis:
    """Elasto-plastic response of a (binary) design with the true material law.

    Uses ``p_E = 1`` and ``p_sy = 0`` so solid parts follow the actual law and
    voids keep the full yield stress. The yield-onset load is the load of the
    first increment whose plastic strain sum exceeds ``kappa_tol``.
    """
    mat = mat.with_penalty(1.0, 0.0)
    sign = np.sign(bc.u_p) or 1.0
    bc = replace(bc, u_p=sign * abs(u_p))
    model, hist = run_analysis(mesh, bc, np.asarray(xbar, float), mat, int(increments), options)
    p = bc.control_dof
    fp = bc.f_hat[p]
    disp = hist.control_path(p)
    load = hist.theta * fp
    ksum = np.array([0.0] + [float(inc.kappa.sum()) for inc in hist.increments])
    hit = np.flatnonzero(ksum > kappa_tol)
    n = int(hit[0]) if hit.size else None
    return Reanalysis(disp, load, ksum, n, None if n is None else float(load[n]), hist, model)


# -- export --------------------------------------------------------------------
def element_fields(model: FEModel, history: AnalysisHistory):
    """Per-element averages of von Mises stress and kappa at the terminal state."""
    fin = history.final
    svm = von_mises(fin.v[:, 4:7]).reshape(-1, 4).mean(axis=1)
    kap = fin.kappa.reshape(-1, 4).mean(axis=1)
    return svm, kap


def export_fields(model: FEModel, history: AnalysisHistory, field: DensityField, out_dir,
                  raw: bool = False, curve: Reanalysis | None = None):
    """Write element CSV, legacy VTK and optionally raw Gauss data and a curve.

    Returns the written paths keyed by kind.
    """
    os.makedirs(out_dir, exist_ok=True)
    mesh = model.mesh
    svm, kap = element_fields(model, history)
    xbar = np.asarray(field.xbar)
    paths = {}
    try:
        p = os.path.join(out_dir, "elements.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "cx", "cy", "xbar", "von_mises", "kappa"])
            for e, (c, d, s, k) in enumerate(zip(mesh.centroids, xbar, svm, kap)):
                w.writerow([e, repr(float(c[0])), repr(float(c[1])), repr(float(d)),
                            repr(float(s)), repr(float(k))])
        paths["elements"] = p
        p = os.path.join(out_dir, "fields.vtk")
        write_vtk(p, mesh, {"density": xbar, "von_mises": svm, "kappa": kap})
        paths["vtk"] = p
        p = os.path.join(out_dir, "density_grid.txt")
        write_density_grid(p, mesh, xbar)
        paths["grid"] = p
        if raw:
            p = os.path.join(out_dir, "gauss.csv")
            fin = history.final
            gsvm = von_mises(fin.v[:, 4:7])
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["element", "gauss_point", "von_mises", "kappa"])
                for g in range(mesh.n_gauss):
                    w.writerow([g // 4, g % 4, repr(float(gsvm[g])), repr(float(fin.kappa[g]))])
            paths["gauss"] = p
        if curve is not None:
            p = os.path.join(out_dir, "curve.csv")
            curve.write_curve(p)
            paths["curve"] = p
    except OSError as exc:
        raise OSError(f"could not write fields to {out_dir}: {exc}") from exc
    return paths


def write_vtk(path, mesh: Mesh, cell_data: dict):
    """Legacy ASCII structured grid over the bounding box; inactive cells get
    zeros and ``active = 0``."""
    nx, ny, h = mesh.nx, mesh.ny, mesh.h
    jj, ii = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    lines = ["# vtk DataFile Version 3.0", "plastopt fields", "ASCII",
             "DATASET STRUCTURED_GRID", f"DIMENSIONS {nx + 1} {ny + 1} 1",
             f"POINTS {(nx + 1) * (ny + 1)} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in zip((ii * h).ravel().tolist(), (jj * h).ravel().tolist())]
    lines.append(f"CELL_DATA {nx * ny}")
    flat = mesh.cells[:, 1] * nx + mesh.cells[:, 0]
    grids = {"active": np.ones(mesh.n_elements)}
    grids.update(cell_data)
    for name, vals in grids.items():
        g = np.zeros(nx * ny)
        g[flat] = vals
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(v)) for v in g]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_density_grid(path, mesh: Mesh, xbar):
    """Bounding-box density image, top row first, ``nan`` for inactive cells."""
    g = np.full((mesh.ny, mesh.nx), np.nan)
    g[mesh.cells[:, 1], mesh.cells[:, 0]] = xbar
    np.savetxt(path, g[::-1], fmt="%.17g")


def read_density_grid(path, mesh: Mesh):
    g = np.loadtxt(path, ndmin=2)
    if g.shape != (mesh.ny, mesh.nx):
        raise ValueError(f"{path}: grid shape {g.shape} does not match mesh {(mesh.ny, mesh.nx)}")
    vals = g[::-1][mesh.cells[:, 1], mesh.cells[:, 0]]
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{path}: active cells must carry finite densities")
    return np.clip(vals, 0.0, 1.0)


# -- full run ----------------------------------------------------------------------
def summarize(cfg: RunConfig, result: OptimizationResult) -> dict:
    ev = result.evaluation
    var = cfg.variant.resolve(ev.model.mesh.n_gauss)
    g2 = ev.plastic_strain_sum - var.plastic_budget
    ok_vol = ev.volume_residual <= VOLUME_TOL
    ok_pl = True
    if var.constrains_plasticity:
        ok_pl = g2 <= PLASTIC_TOL * max(var.plastic_budget, 1e-30)
    ok_c = True
    if var.kind == "min_volume_compliance_plastic":
        ok_c = ev.constraints[0] <= VOLUME_TOL
        ok_vol = True
    return {
        "name": cfg.name,
        "variant": var.kind,
        "status": result.status,
        "cycles": len(result.records) - 1,
        "end_compliance": ev.end_compliance,
        "plastic_strain_sum": ev.plastic_strain_sum,
        "volume_fraction": ev.volume_fraction,
        "volume_residual": ev.volume_residual,
        "plastic_budget": var.plastic_budget,
        "plastic_residual": g2,
        "constraints": [float(c) for c in ev.constraints],
        "constraints_satisfied": bool(ok_vol and ok_pl and ok_c),
        "final_schedule": {"p_E": ev.schedule.p_E, "p_sy": ev.schedule.p_sy,
                           "beta": ev.schedule.beta},
        "max_move": max((a[1] for a in result.audit), default=0.0),
        "increments": ev.history.N,
    }


def write_summary(path, summary: dict):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(cfg: RunConfig, out_dir=None, callback=None) -> tuple[OptimizationResult, dict]:
    """Optimize and write config, log, fields and summary into ``out_dir``."""
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    cfg.save(os.path.join(out_dir, "config.yaml"))
    problem = cfg.design_problem()
    log_path = os.path.join(out_dir, "log.csv")
    try:
        result = optimize(problem, log_path=log_path, callback=callback)
    except OptimizationAborted as exc:
        result = exc.result
        log.error("%s", exc)
    np.save(os.path.join(out_dir, "x.npy"), result.x)
    if result.evaluation is None:
        summary = {"name": cfg.name, "status": result.status, "constraints_satisfied": False}
    else:
        ev = result.evaluation
        export_fields(ev.model, ev.history, ev.field, out_dir)
        summary = summarize(cfg, result)
    write_summary(os.path.join(out_dir, "summary.json"), summary)
    return result, summary
