"""Benchmark problem generators: 3D Laplace systems and crafted fixtures.

``gen_laplace`` discretizes -lap(u) = f on the unit cube with homogeneous
Dirichlet walls and f(x, y, z) = cos(x + y).  Boundary nodes are
eliminated (their value is zero, so elimination only removes rows and
columns), leaving (m-2)^3 unknowns on an m x m x m grid with uniform
spacing h = 1/(m-1) and lexicographic interior numbering, x fastest.

Two discretizations:

* ``fd7``: 7-point finite difference stencil, diagonal 6/h^2 and
  off-diagonals -1/h^2, right-hand side f at the node.
* ``hex-fem``: trilinear hexahedral elements with 2x2x2 Gauss quadrature
  stiffness and consistent loads.  The assembled system is normalized by
  the element volume h^3 so the residual threshold of the stopping test
  carries the same strength as for the finite difference operator; the
  per-element matrices and loads returned for substructuring carry the
  same normalization and assemble exactly to the returned system.
  Interior rows reach up to 27 nonzeros; coefficient cancellations (the
  face-neighbor couplings) are kept as stored entries, the pattern is
  structural.

``gen_crafted`` returns small documented fixtures: the 5x5 storage-format
example, a 10x10 pattern used for the three-band dependency tables (with
1.0 placeholder values, plus a diagonally dominant variant), tridiagonal
(-1, 2, -1) chains, and a 2x2 system whose Jacobi iteration diverges.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .partition import ElementConnectivity
from .sparse import CsrMatrix, spmv

_GAUSS_1D = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))

FD7 = "fd7"
HEX_FEM = "hex-fem"


@dataclass
class MeshSpec:
    """Regular m x m x m grid on the unit cube, spacing h = 1/(m-1)."""

    m: int
    discretization: str = FD7

    def __post_init__(self):
        if self.m < 3:
            raise ValueError("need m >= 3 for at least one interior node")
        if self.discretization not in (FD7, HEX_FEM):
            raise ValueError(f"unknown discretization {self.discretization!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.m - 1)

    @property
    def n_interior(self) -> int:
        return (self.m - 2) ** 3


def load_function(x, y, z):
    """Right-hand side of the model problem."""
    return np.cos(x + y)


def gen_laplace(spec: MeshSpec):
    """Return (matrix, rhs, connectivity-or-None) for the interior system."""
    if spec.discretization == FD7:
        A, b = _fd7_system(spec)
        return A, b, None
    return _hex_fem_system(spec)


def _interior_coords(spec: MeshSpec):
    n = spec.m - 2
    i = np.arange(n)
    x = (i + 1) * spec.h
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    # lexicographic with x fastest: index = ix + n*(iy + n*iz)
    return X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(), Z.transpose(2, 1, 0).ravel()


def _fd7_system(spec: MeshSpec):
    n = spec.m - 2
    h2 = spec.h * spec.h
    idx = np.arange(n**3, dtype=np.int64)
    ix = idx % n
    iy = (idx // n) % n
    iz = idx // (n * n)
    rows = [idx]
    cols = [idx]
    vals = [np.full(idx.size, 6.0 / h2)]
    for axis, comp in (("x", ix), ("y", iy), ("z", iz)):
        stride = {"x": 1, "y": n, "z": n * n}[axis]
        for sign in (-1, 1):
            keep = (comp + sign >= 0) & (comp + sign < n)
            rows.append(idx[keep])
            cols.append(idx[keep] + sign * stride)
            vals.append(np.full(int(keep.sum()), -1.0 / h2))
    A = CsrMatrix.from_coo(
        n**3, n**3, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    x, y, z = _interior_coords(spec)
    return A, load_function(x, y, z)


def _hex_reference_gradients():
    """Shape values and reference gradients of the 8 trilinear functions
    at the 2x2x2 Gauss points.  Local node a = ax + 2*ay + 4*az."""
    corners = np.array(
        [[ax, ay, az] for az in (0, 1) for ay in (0, 1) for ax in (0, 1)], dtype=np.float64
    )
    signs = 2.0 * corners - 1.0
    points = []
    for gz in _GAUSS_1D:
        for gy in _GAUSS_1D:
            for gx in _GAUSS_1D:
                points.append((gx, gy, gz))
    n_q = len(points)
    shape = np.zeros((n_q, 8))
    grad = np.zeros((n_q, 8, 3))
    for q, (gx, gy, gz) in enumerate(points):
        for a in range(8):
            sx, sy, sz = signs[a]
            fx, fy, fz = 1.0 + sx * gx, 1.0 + sy * gy, 1.0 + sz * gz
            shape[q, a] = fx * fy * fz / 8.0
            grad[q, a] = (
                sx * fy * fz / 8.0,
                fx * sy * fz / 8.0,
                fx * fy * sz / 8.0,
            )
    return np.array(points), shape, grad


def hex_element_stiffness(h: float) -> np.ndarray:
    """Trilinear hex stiffness for cube side h via 2x2x2 Gauss quadrature."""
    _, _, grad = _hex_reference_gradients()
    # physical gradient = (2/h) * reference gradient; dV = (h/2)^3 per unit weight
    scale = (2.0 / h) ** 2 * (h / 2.0) ** 3
    K = np.zeros((8, 8))
    for q in range(grad.shape[0]):
        K += scale * (grad[q] @ grad[q].T)
    return K


def _hex_fem_system(spec: MeshSpec):
    m, h = spec.m, spec.h
    ne = m - 1
    K8 = hex_element_stiffness(h)
    points, shape, _ = _hex_reference_gradients()

    # full-grid node ids, x fastest
    def gid(ix, iy, iz):
        return ix + m * (iy + m * iz)

    eidx = np.arange(ne**3, dtype=np.int64)
    ex = eidx % ne
    ey = (eidx // ne) % ne
    ez = eidx // (ne * ne)
    # corner offsets in local order a = ax + 2*ay + 4*az
    offsets = np.array(
        [gid(ax, ay, az) for az in (0, 1) for ay in (0, 1) for ax in (0, 1)], dtype=np.int64
    )
    enodes = gid(ex, ey, ez)[:, None] + offsets[None, :]  # (n_elems, 8)

    # consistent element loads: sum_q w N_a(q) f(x_q) detJ, detJ = (h/2)^3
    corner_x = ex * h
    corner_y = ey * h
    qx = corner_x[:, None] + (points[None, :, 0] + 1.0) * (h / 2.0)
    qy = corner_y[:, None] + (points[None, :, 1] + 1.0) * (h / 2.0)
    f_q = load_function(qx, qy, 0.0)  # f does not depend on z
    detj = (h / 2.0) ** 3
    loads = detj * (f_q @ shape)  # (n_elems, 8)

    # dirichlet elimination: keep entries whose endpoints are both interior
    gx = np.arange(m**3) % m
    gy = (np.arange(m**3) // m) % m
    gz = np.arange(m**3) // (m * m)
    interior = (gx > 0) & (gx < m - 1) & (gy > 0) & (gy < m - 1) & (gz > 0) & (gz < m - 1)
    new_id = np.full(m**3, -1, dtype=np.int64)
    new_id[interior] = np.arange(int(interior.sum()))

    # normalize by element volume so residual thresholds compare with fd7
    norm = 1.0 / h**3
    K8n = K8 * norm
    loads_n = loads * norm

    rr = np.repeat(enodes, 8, axis=1).ravel()
    cc = np.tile(enodes, (1, 8)).ravel()
    vv = np.tile(K8n.ravel(), enodes.shape[0])
    keep = interior[rr] & interior[cc]
    n_int = int(interior.sum())
    A = CsrMatrix.from_coo(n_int, n_int, new_id[rr[keep]], new_id[cc[keep]], vv[keep])

    b = np.zeros(n_int)
    keep_b = interior[enodes.ravel()]
    np.add.at(b, new_id[enodes.ravel()[keep_b]], loads_n.ravel()[keep_b])

    elements = []
    element_matrices = []
    element_loads = []
    for e in range(enodes.shape[0]):
        nodes = enodes[e]
        slots = np.flatnonzero(interior[nodes])
        if slots.size == 0:
            continue
        elements.append(tuple(int(v) for v in new_id[nodes[slots]]))
        element_matrices.append(K8n[np.ix_(slots, slots)].copy())
        element_loads.append(loads_n[e, slots].copy())
    conn = ElementConnectivity(
        n_nodes=n_int,
        elements=elements,
        element_matrices=element_matrices,
        element_loads=element_loads,
    )
    return A, b, conn


# -- crafted fixtures ----------------------------------------------------------

# 10x10 pattern of the three-band splitting example, 0-based columns
FIG5_PATTERN = (
    (0, (0, 1, 3, 5)),
    (1, (0, 1, 2, 4)),
    (2, (1, 2, 3, 4)),
    (3, (0, 2, 3, 6, 9)),
    (4, (2, 4, 6)),
    (5, (0, 5, 6, 8)),
    (6, (2, 4, 5, 6, 9)),
    (7, (1, 3, 7, 9)),
    (8, (5, 8)),
    (9, (3, 6, 7, 9)),
)

CRAFTED_NAMES = ("fig4-example", "fig5-10x10", "fig5-10x10-dominant", "tridiag-n", "divergent-2x2")


def tridiagonal(n: int) -> CsrMatrix:
    """The (-1, 2, -1) chain matrix."""
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 2.0)]
    rows += [np.arange(n - 1), np.arange(1, n)]
    cols += [np.arange(1, n), np.arange(n - 1)]
    vals += [np.full(n - 1, -1.0), np.full(n - 1, -1.0)]
    return CsrMatrix.from_coo(n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def gen_crafted(name: str):
    """Small documented test systems; rhs conventions per fixture.

    ``fig4-example``, ``fig5-10x10`` and ``fig5-10x10-dominant`` use the
    manufactured rhs b = A * ones (so the dominant variant has exact
    solution all-ones); ``tridiag-N`` uses b = ones; ``divergent-2x2``
    uses b = A * ones as well (the iteration diverges regardless).
    """
    if name == "fig4-example":
        dense = np.array(
            [
                [-5.0, 14.0, 0.0, 0.0, 0.0],
                [0.0, 8.0, 1.0, 0.0, 0.0],
                [2.0, 0.0, 10.0, 0.0, 0.0],
                [0.0, 4.0, 0.0, 2.0, 9.0],
                [0.0, 0.0, 15.0, 0.0, 7.0],
            ]
        )
        A = CsrMatrix.from_dense(dense)
        return A, spmv(A, np.ones(5))
    if name == "fig5-10x10":
        rows, cols = _fig5_coords()
        A = CsrMatrix.from_coo(10, 10, rows, cols, np.ones(rows.size))
        return A, spmv(A, np.ones(10))
    if name == "fig5-10x10-dominant":
        rows, cols = _fig5_coords()
        vals = np.where(rows == cols, 0.0, -1.0)
        degree = np.bincount(rows, weights=(rows != cols).astype(float), minlength=10)
        vals = np.where(rows == cols, degree[rows] + 1.0, vals)
        A = CsrMatrix.from_coo(10, 10, rows, cols, vals)
        return A, spmv(A, np.ones(10))
    match = re.fullmatch(r"tridiag-(\d+)", name)
    if match:
        n = int(match.group(1))
        if n < 1:
            raise ValueError("tridiag size must be positive")
        return tridiagonal(n), np.ones(n)
    if name == "divergent-2x2":
        A = CsrMatrix.from_dense(np.array([[1.0, 2.0], [3.0, 1.0]]))
        return A, spmv(A, np.ones(2))
    raise ValueError(f"unknown crafted system {name!r}")


def _fig5_coords():
    rows = []
    cols = []
    for r, cs in FIG5_PATTERN:
        for c in cs:
            rows.append(r)
            cols.append(c)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)
