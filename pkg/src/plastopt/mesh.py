"""Structured meshes of square bilinear quads over masked rectangles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class ConfigurationError(ValueError):
    """Raised for geometry settings that cannot be meshed as requested."""


@dataclass
class Mesh:
    """Square-element mesh on a ``nx`` by ``ny`` grid with an activity mask.

    Cells are indexed ``(i, j)`` with ``i`` along x. Only nodes touched by an
    active cell receive equations. Element order is row-major over active cells
    (j outer, i inner) so element ``e`` has centroid ``centroids[e]``.
    """

    nx: int
    ny: int
    h: float
    active_mask: np.ndarray  # (ny, nx) bool, row j is y-index
    nodes: np.ndarray = field(init=False)  # (nn, 2) coordinates
    elements: np.ndarray = field(init=False)  # (ne, 4) node ids, counterclockwise
    cells: np.ndarray = field(init=False)  # (ne, 2) (i, j) of each element
    grid_node: np.ndarray = field(init=False)  # (ny+1, nx+1) -> node id or -1

    def __post_init__(self):
        mask = np.asarray(self.active_mask, dtype=bool)
        if mask.shape != (self.ny, self.nx):
            raise ConfigurationError("active_mask must have shape (ny, nx)")
        self.active_mask = mask
        jj, ii = np.nonzero(mask)
        self.cells = np.column_stack([ii, jj])
        corners = np.stack([
            np.column_stack([ii, jj]),
            np.column_stack([ii + 1, jj]),
            np.column_stack([ii + 1, jj + 1]),
            np.column_stack([ii, jj + 1]),
        ], axis=1)  # (ne, 4, 2)
        used = np.zeros((self.ny + 1, self.nx + 1), dtype=bool)
        used[corners[..., 1], corners[..., 0]] = True
        grid_node = -np.ones(used.shape, dtype=np.int64)
        grid_node[used] = np.arange(used.sum())
        self.grid_node = grid_node
        nj, ni = np.nonzero(used)
        self.nodes = np.column_stack([ni * self.h, nj * self.h]).astype(float)
        self.elements = grid_node[corners[..., 1], corners[..., 0]]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_gauss(self) -> int:
        return 4 * self.n_elements

    @property
    def edofs(self) -> np.ndarray:
        """(ne, 8) global DOFs ordered [u0, v0, u1, v1, ...]."""
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=2).reshape(-1, 8)

    @property
    def centroids(self) -> np.ndarray:
        return (self.cells + 0.5) * self.h

    @property
    def element_volume(self) -> float:
        return self.h * self.h

    def node_at(self, x: float, y: float) -> int:
        i = int(round(x / self.h))
        j = int(round(y / self.h))
        if not (0 <= i <= self.nx and 0 <= j <= self.ny) or self.grid_node[j, i] < 0:
            raise ConfigurationError(f"no mesh node at ({x}, {y})")
        return int(self.grid_node[j, i])


def element_B_matrices(mesh: Mesh):
    """Strain-displacement operators at the 2x2 Gauss points.

    All elements are congruent squares, so one set of four 3x8 operators is
    shared by every element.

    Returns
    -------
    B : ndarray (4, 3, 8)
        Maps element displacements to (eps_xx, eps_yy, gamma_xy).
    w : ndarray (4,)
        Quadrature weight times Jacobian determinant (unit thickness).
    """
    h = mesh.h
    xi_n = np.array([-1.0, 1.0, 1.0, -1.0])
    eta_n = np.array([-1.0, -1.0, 1.0, 1.0])
    B = np.zeros((4, 3, 8))
    w = np.zeros(4)
    g = 0
    for eta in GAUSS_1D:
        for xi in GAUSS_1D:
            dN_dxi = 0.25 * xi_n * (1.0 + eta_n * eta)
            dN_deta = 0.25 * eta_n * (1.0 + xi_n * xi)
            # square element: J = diag(h/2, h/2)
            dN_dx = dN_dxi * 2.0 / h
            dN_dy = dN_deta * 2.0 / h
            B[g, 0, 0::2] = dN_dx
            B[g, 1, 1::2] = dN_dy
            B[g, 2, 0::2] = dN_dy
            B[g, 2, 1::2] = dN_dx
            w[g] = 0.25 * h * h
            g += 1
    return B, w


@dataclass
class BoundarySpec:
    """Supports, reference load and displacement control."""

    fixed: np.ndarray
    f_hat: np.ndarray
    control_dof: int
    u_p: float
    spread: int = 1

    def __post_init__(self):
        self.fixed = np.unique(np.asarray(self.fixed, dtype=np.int64))
        loaded = np.flatnonzero(self.f_hat)
        if self.control_dof not in loaded:
            raise ConfigurationError("control DOF must carry reference load")
        if np.intersect1d(loaded, self.fixed).size:
            raise ConfigurationError("fixed and loaded DOFs overlap")

    def free_dofs(self, n_dofs: int) -> np.ndarray:
        return np.setdiff1d(np.arange(n_dofs), self.fixed)


def strip_weights(count: int, half_ends: bool = True) -> np.ndarray:
    """Nodal weights of a unit load spread over ``count`` adjacent nodes."""
    w = np.ones(count)
    if half_ends and count > 1:
        w[0] = w[-1] = 0.5
    return w / w.sum()


def _cells(n: int, length: float, name: str) -> int:
    c = length * n
    if abs(c - round(c)) > 1e-9:
        raise ConfigurationError(f"{name}: {length} is not a multiple of the element size")
    return int(round(c))


def build_domain(kind: str, resolution, load_position=None, *, spread=None,
                 u_p: float = 0.01, half_ends: bool = True, direction=None,
                 symmetry_right: bool = False, supports=None):
    """Construct one of the benchmark domains.

    Parameters
    ----------
    kind : {'l_bracket', 'u_bracket', 'rectangle'}
    resolution : int or (nx, ny)
        Elements along the bounding box. The L-bracket box is 1x1 with a
        0.6x0.6 cutout at the top right. The U-bracket box is 2x1 with a
        0.5x0.5 notch at the bottom centre, feet clamped. The rectangle is
        ``nx*h`` by ``ny*h`` with ``h = 0.5`` and the left edge clamped.
    load_position : (x, y)
        Control node; the load is spread over ``spread`` nodes running
        downwards along the edge through that node.
    spread : int
        Number of loaded nodes (default 10, or 1 for the rectangle).
    """
    if np.isscalar(resolution):
        nx = ny = int(resolution)
        if kind == "u_bracket":
            nx = 2 * ny
    else:
        nx, ny = (int(r) for r in resolution)

    if kind == "l_bracket":
        h = 1.0 / ny
        if abs(nx * h - 1.0) > 1e-12:
            raise ConfigurationError("l_bracket needs a square grid")
        c = _cells(ny, 0.6, "l_bracket cutout")
        mask = np.ones((ny, nx), dtype=bool)
        mask[ny - c:, nx - c:] = False
        load_position = (1.0, 0.4) if load_position is None else load_position
        spread = 10 if spread is None else spread
        direction = (0.0, -1.0) if direction is None else direction
        mesh = Mesh(nx, ny, h, mask)
        if supports is None:
            top = [mesh.node_at(i * h, 1.0) for i in range(nx - c + 1)]
            fixed = np.concatenate([[2 * n, 2 * n + 1] for n in top])
        else:
            fixed = supports
    elif kind == "u_bracket":
        h = 1.0 / ny
        if abs(nx * h - 2.0) > 1e-12:
            raise ConfigurationError("u_bracket needs an nx = 2 ny grid")
        cw = _cells(ny, 0.5, "u_bracket notch width")
        x0 = _cells(ny, 0.75, "u_bracket notch offset")
        mask = np.ones((ny, nx), dtype=bool)
        mask[:cw, x0:x0 + cw] = False
        load_position = (2.0, 1.0) if load_position is None else load_position
        spread = 10 if spread is None else spread
        direction = (1.0, 0.0) if direction is None else direction
        mesh = Mesh(nx, ny, h, mask)
        if supports is None:
            feet = [mesh.node_at(i * h, 0.0) for i in range(nx + 1) if i <= x0 or i >= x0 + cw]
            fixed = np.concatenate([[2 * n, 2 * n + 1] for n in feet])
        else:
            fixed = supports
    elif kind == "rectangle":
        h = 0.5
        mask = np.ones((ny, nx), dtype=bool)
        mesh = Mesh(nx, ny, h, mask)
        load_position = (nx * h, ny * h) if load_position is None else load_position
        spread = 1 if spread is None else spread
        direction = (0.0, -1.0) if direction is None else direction
        if supports is None:
            left = [mesh.node_at(0.0, j * h) for j in range(ny + 1)]
            fixed = [d for n in left for d in (2 * n, 2 * n + 1)]
            if symmetry_right:
                fixed += [2 * mesh.node_at(nx * h, j * h) for j in range(ny + 1)]
            fixed = np.asarray(fixed)
        else:
            fixed = supports
    else:
        raise ConfigurationError(f"unknown domain kind {kind!r}")

    xl, yl = load_position
    i0, j0 = int(round(xl / h)), int(round(yl / h))
    if not (0 <= i0 <= mesh.nx and spread - 1 <= j0 <= mesh.ny):
        raise ConfigurationError("load strip leaves the domain")
    nodes = [int(mesh.grid_node[j0 - k, i0]) for k in range(spread)]
    if min(nodes) < 0:
        raise ConfigurationError("load strip leaves the domain")
    weights = strip_weights(spread, half_ends)
    comp = 0 if abs(direction[0]) > 0 else 1
    sign = float(np.sign(direction[comp]))
    f_hat = np.zeros(mesh.n_dofs)
    for nid, wgt in zip(nodes, weights):
        f_hat[2 * nid + comp] += sign * wgt
    control = 2 * int(nodes[0]) + comp
    bc = BoundarySpec(fixed=fixed, f_hat=f_hat, control_dof=control, u_p=sign * u_p,
                      spread=spread)
    return mesh, bc


def distributed_right_edge(mesh: Mesh, bc: BoundarySpec, half_ends: bool = True) -> BoundarySpec:
    """Replace the load by a unit load spread over the whole right edge.

    The control DOF stays at the top-right corner.
    """
    i = mesh.nx
    nodes = [mesh.grid_node[j, i] for j in range(mesh.ny, -1, -1)]
    weights = strip_weights(len(nodes), half_ends)
    sign = np.sign(bc.f_hat[bc.control_dof])
    f_hat = np.zeros(mesh.n_dofs)
    for nid, wgt in zip(nodes, weights):
        f_hat[2 * nid + 1] = sign * wgt
    return BoundarySpec(fixed=bc.fixed, f_hat=f_hat, control_dof=bc.control_dof,
                        u_p=bc.u_p, spread=len(nodes))
