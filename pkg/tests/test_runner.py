import json

import numpy as np
import pytest

from plastopt.config import RunConfig
from plastopt.fea import run_analysis
from plastopt.filters import DensityField
from plastopt.material import MaterialParams
from plastopt.mesh import build_domain
from plastopt.runner import (binary_field, export_fields, postprocess_binary, read_density_grid,
                             reanalyze, run, write_density_grid)

MAT = MaterialParams(sy0_min=1e-4)


def test_binarization():
    xb = np.array([0.1, 0.5, 0.49, 0.9])
    fld = DensityField(x=xb, x_tilde=xb, xbar=xb, beta=5.0, eta=0.5, radius=0.1)
    out, vf = postprocess_binary(fld)
    assert out.xbar.tolist() == [1e-6, 1.0, 1e-6, 1.0]
    assert vf == 0.5
    out, vf = binary_field(xb, threshold=0.95)
    assert vf == 0.0


def test_density_grid_round_trip(tmp_path):
    mesh, _ = build_domain("l_bracket", 10, spread=2)
    xb = np.linspace(0, 1, mesh.n_elements)
    p = tmp_path / "g.txt"
    write_density_grid(p, mesh, xb)
    rows = p.read_text().splitlines()
    assert rows[0].split()[-1] == "nan"  # cutout at the top right
    np.testing.assert_array_equal(read_density_grid(p, mesh), xb)
    np.savetxt(p, np.ones((3, 3)))
    with pytest.raises(ValueError, match="shape"):
        read_density_grid(p, mesh)


def reparse_vtk(path):
    lines = path.read_text().splitlines()
    dims = [int(v) for v in lines[4].split()[1:]]
    npts = int(lines[5].split()[1])
    k = 6 + npts
    ncell = int(lines[k].split()[1])
    k += 1
    data = {}
    while k < len(lines):
        name = lines[k].split()[1]
        data[name] = np.array([float(v) for v in lines[k + 2:k + 2 + ncell]])
        k += 2 + ncell
    return dims, npts, data


def test_export_files(tmp_path):
    mesh, bc = build_domain("l_bracket", 10, spread=2)
    xb = np.full(mesh.n_elements, 0.8)
    model, hist = run_analysis(mesh, bc, xb, MAT, "auto")
    fld = DensityField(x=xb, x_tilde=xb, xbar=xb, beta=1.0, eta=0.5, radius=0.1)
    paths = export_fields(model, hist, fld, tmp_path, raw=True)
    assert set(paths) == {"elements", "vtk", "grid", "gauss"}
    dims, npts, data = reparse_vtk(tmp_path / "fields.vtk")
    assert dims == [11, 11, 1] and npts == 121
    assert data["active"].sum() == mesh.n_elements
    assert set(data) == {"active", "density", "von_mises", "kappa"}
    flat = mesh.cells[:, 1] * mesh.nx + mesh.cells[:, 0]
    np.testing.assert_allclose(data["density"][flat], xb)
    k_el = np.loadtxt(tmp_path / "elements.csv", delimiter=",", skiprows=1)[:, 5]
    np.testing.assert_allclose(data["kappa"][flat], k_el)
    gauss = np.loadtxt(tmp_path / "gauss.csv", delimiter=",", skiprows=1)
    assert gauss.shape == (mesh.n_gauss, 4)
    np.testing.assert_allclose(gauss[:, 3].reshape(-1, 4).mean(1), k_el)


def test_reanalysis_yield_onset():
    mesh, bc = build_domain("l_bracket", 10, spread=2)
    xb, _ = binary_field(np.ones(mesh.n_elements))
    res = reanalyze(mesh, bc, xb.xbar, MAT, u_p=0.02, increments=40)
    assert res.history.N == 40
    assert res.displacement[-1] == pytest.approx(-0.02)
    n = res.yield_increment
    assert n is not None and res.kappa_sum[n - 1] == 0.0 < res.kappa_sum[n]
    assert res.yield_load == res.load[n]
    # elastic until first yield: load proportional to displacement
    np.testing.assert_allclose(res.load[1:n] / res.displacement[1:n], res.load[1] / res.displacement[1])


def small_config(tmp_path):
    return RunConfig.from_dict({
        "name": "tiny",
        "problem": {"geometry": "l_bracket", "resolution": 10, "spread": 2, "u_p": 0.02},
        "variant": {"volume_fraction": 0.4},
        "optimization": {"max_cycles": 3, "radius": 0.15},
        "schedule": {"period": 2, "beta_period": 2},
        "output_dir": str(tmp_path / "run"),
    })


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    res1, summary = run(cfg)
    out = tmp_path / "run"
    for f in ("config.yaml", "log.csv", "x.npy", "summary.json", "fields.vtk", "elements.csv",
              "density_grid.txt"):
        assert (out / f).exists(), f
    saved = json.loads((out / "summary.json").read_text())
    assert saved == summary and summary["cycles"] == 3
    assert RunConfig.load(out / "config.yaml") == cfg
    res2, _ = run(cfg, tmp_path / "again")
    np.testing.assert_array_equal(res1.x, res2.x)
    assert (out / "log.csv").read_text() == (tmp_path / "again" / "log.csv").read_text()
