"""P1 finite elements on the unit square with homogeneous Dirichlet data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import check_int
from .errors import InvalidArgumentError
from .gelfand import DiscreteSystem

__all__ = [
    "TriMesh",
    "unit_square_mesh",
    "assemble_full",
    "assemble_fem",
    "load_L2",
    "load_H1",
    "project_L2",
    "project_H1",
    "evaluate_p1",
]


@dataclass(frozen=True)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    n: int

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def interior(self):
        return np.flatnonzero(~self.boundary)

    @property
    def n_interior(self):
        return int(np.count_nonzero(~self.boundary))


def unit_square_mesh(n):
    """Uniform ``n x n`` grid, each square cut along its lower-left/upper-right diagonal."""
    n = check_int(n, name="n", minimum=2)
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    p00 = (j * (n + 1) + i).ravel()
    p10, p01 = p00 + 1, p00 + n + 1
    p11 = p01 + 1
    tris = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    on_edge = (np.isclose(nodes, 0.0) | np.isclose(nodes, 1.0)).any(axis=1)
    return TriMesh(nodes, tris, on_edge, n)


def _geometry(mesh):
    P = mesh.nodes[mesh.triangles]
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 1e-14 * mesh.h**2):
        raise InvalidArgumentError("degenerate or negatively oriented triangle")
    area = 0.5 * det
    # gradients of the barycentric coordinates
    grads = np.empty((len(det), 3, 2))
    grads[:, 1] = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    grads[:, 2] = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return area, grads


def assemble_full(mesh):
    """Mass and stiffness matrices on all nodes (no boundary conditions)."""
    area, grads = _geometry(mesh)
    local_K = area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    ref_M = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local_M = area[:, None, None] * ref_M
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    N = mesh.nodes.shape[0]
    K = sp.coo_matrix((local_K.ravel(), (rows, cols)), shape=(N, N)).tocsc()
    M = sp.coo_matrix((local_M.ravel(), (rows, cols)), shape=(N, N)).tocsc()
    return M, K


def _restrict(A, idx):
    return A[idx][:, idx].tocsc()


def assemble_fem(mesh, backend="sparse"):
    """:class:`DiscreteSystem` on interior nodes (Dirichlet rows and columns removed)."""
    M, K = assemble_full(mesh)
    idx = mesh.interior
    return DiscreteSystem(_restrict(M, idx), _restrict(K, idx), backend=backend)


def _midpoints(mesh):
    P = mesh.nodes[mesh.triangles]
    # midpoint m_k lies on the edge opposite vertex k
    return np.stack([(P[:, 1] + P[:, 2]) / 2, (P[:, 2] + P[:, 0]) / 2, (P[:, 0] + P[:, 1]) / 2], axis=1)


def _call(g, pts):
    return np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(pts.shape[:-1])


def load_L2(mesh, g):
    """``int g phi_i`` on all nodes by the edge-midpoint rule (exact for quadratics)."""
    area, _ = _geometry(mesh)
    gm = _call(g, _midpoints(mesh))
    # phi_i is 1/2 at the two midpoints on edges touching vertex i, 0 at the third
    local = (area / 3.0)[:, None] * 0.5 * (gm.sum(axis=1, keepdims=True) - gm)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.nodes.shape[0])


def load_H1(mesh, g):
    """``int grad g . grad phi_i + g phi_i`` on all nodes.

    ``int_T grad g`` is computed as the boundary integral of ``g n`` with
    Simpson's rule on each edge, so only values of ``g`` are needed.
    """
    area, grads = _geometry(mesh)
    P = mesh.nodes[mesh.triangles]
    total = np.zeros((len(area), 2))
    for k in range(3):
        p, q = P[:, k], P[:, (k + 1) % 3]
        edge = q - p
        normal_len = np.column_stack([edge[:, 1], -edge[:, 0]])  # outward for ccw, length |edge|
        avg = (_call(g, p[:, None])[:, 0] + 4 * _call(g, ((p + q) / 2)[:, None])[:, 0]
               + _call(g, q[:, None])[:, 0]) / 6.0
        total += avg[:, None] * normal_len
    local = np.einsum("tid,td->ti", grads, total)
    grad_part = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.nodes.shape[0])
    return grad_part + load_L2(mesh, g)


def project_L2(mesh, g, system=None):
    """Coefficients of the ``L2`` projection of ``g`` onto the interior P1 space."""
    system = system or assemble_fem(mesh)
    b = load_L2(mesh, g)[mesh.interior]
    return spla.spsolve(sp.csc_matrix(system.M), b)


def project_H1(mesh, g, system=None):
    """Coefficients of the full-``H1`` projection of ``g`` (inner product ``K + M``)."""
    system = system or assemble_fem(mesh)
    b = load_H1(mesh, g)[mesh.interior]
    return spla.spsolve(sp.csc_matrix(system.K + system.M), b)


def evaluate_p1(mesh, coeffs, x, y):
    """Evaluate the interior P1 function with ``coeffs`` at points ``(x, y)``."""
    full = np.zeros(mesh.nodes.shape[0])
    full[mesh.interior] = coeffs
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    n = mesh.n
    i = np.clip(np.floor(x * n).astype(int), 0, n - 1)
    j = np.clip(np.floor(y * n).astype(int), 0, n - 1)
    s, t = x * n - i, y * n - j
    p00 = j * (n + 1) + i
    v00, v10 = full[p00], full[p00 + 1]
    v01, v11 = full[p00 + n + 1], full[p00 + n + 2]
    lower = s >= t
    return np.where(lower, v00 + s * (v10 - v00) + t * (v11 - v10), v00 + t * (v01 - v00) + s * (v11 - v01))
