"""Density filter and smoothed Heaviside projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import Mesh


def filter_matrix(mesh: Mesh, radius: float) -> sp.csr_matrix:
    """Row-normalized linear-hat filter over active elements.

    Weights are ``max(0, r - d)`` between centroids, self included.
    """
    c = mesh.centroids
    n = len(c)
    pairs = cKDTree(c).query_pairs(radius, output_type="ndarray")
    d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
    w = radius - d
    keep = w > 0
    i, j, w = pairs[keep, 0], pairs[keep, 1], w[keep]
    diag = np.arange(n)
    rows = np.concatenate([i, j, diag])
    cols = np.concatenate([j, i, diag])
    vals = np.concatenate([w, w, np.full(n, float(radius))])
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    s = np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(1.0 / s) @ W


def heaviside(xt, beta: float, eta: float = 0.5):
    """Two-branch exponential projection and its derivative."""
    xt = np.asarray(xt, dtype=float)
    eb = np.exp(-beta)
    lo = xt <= eta
    t = np.where(lo, 1.0 - xt / eta, (xt - eta) / (1.0 - eta))
    e = np.exp(-beta * t)
    val = np.where(lo, eta * (e - t * eb), (1.0 - eta) * (1.0 - e + t * eb) + eta)
    der = beta * e + eb
    return val, der


@dataclass
class DensityField:
    x: np.ndarray
    x_tilde: np.ndarray
    xbar: np.ndarray
    beta: float
    eta: float
    radius: float


class Parametrization:
    """Maps design variables to physical densities and pulls gradients back."""

    def __init__(self, mesh: Mesh, radius: float, eta: float = 0.5):
        if not 0.0 < eta < 1.0:
            raise ValueError("projection threshold must lie in (0, 1)")
        self.mesh = mesh
        self.radius = radius
        self.eta = eta
        self.W = filter_matrix(mesh, radius)
        coo = self.W.tocoo()
        off = coo.row != coo.col
        self._rows, self._cols, self._vals = coo.row[off], coo.col[off], coo.data[off]

    def density_filter(self, x):
        """``W x`` written as ``x_i + sum_j w_ij (x_j - x_i)`` so constants pass unchanged."""
        x = np.asarray(x, dtype=float)
        d = self._vals * (x[self._cols] - x[self._rows])
        return x + np.bincount(self._rows, weights=d, minlength=x.size)

    def heaviside_project(self, xt, beta):
        return heaviside(xt, beta, self.eta)[0]

    def forward(self, x, beta) -> DensityField:
        x = np.asarray(x, dtype=float)
        xt = self.density_filter(x)
        xbar = heaviside(xt, beta, self.eta)[0]
        return DensityField(x=x.copy(), x_tilde=xt, xbar=np.clip(xbar, 0.0, 1.0), beta=beta,
                            eta=self.eta, radius=self.radius)

    def chain_rule(self, dJ_dxbar, field: DensityField):
        """dJ/dx from dJ/dxbar through projection and filter."""
        _, der = heaviside(field.x_tilde, field.beta, self.eta)
        return self.W.T @ (der * np.asarray(dJ_dxbar))
