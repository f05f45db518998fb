"""Simplicial triangulations of the unit square: construction, refinement,
patches and shape-regularity data.

A `Triangulation` is immutable after construction.  Cell sizes ``h_K``
(diameter) and ``rho_K`` (inradius) are precomputed, as are the vertex
patches used by Clement-type interpolation and the cell neighborhoods
``S_K`` (all cells sharing at least a vertex with K).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from varpx.quadrature import triangle_rule

__all__ = [
    "Triangulation",
    "unit_square_mesh",
    "refine_uniform",
    "mean_over",
    "write_mesh",
    "read_mesh",
]


@dataclass(frozen=True)
class Triangulation:
    """Conforming triangle mesh with precomputed geometry.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, positively oriented
    boundary_edges : (nbe, 3) int array
        Vertex pairs plus an integer marker (unit-square sides get 1..4,
        bottom/right/top/left; 0 otherwise).
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    edges: np.ndarray = field(init=False)
    cell_edges: np.ndarray = field(init=False)
    h_cell: np.ndarray = field(init=False)
    rho_cell: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    patches: list = field(init=False)
    vertex_patches: list = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))
        object.__setattr__(
            self, "boundary_edges", np.asarray(self.boundary_edges, dtype=np.int64)
        )
        self._build_edges()
        self._build_geometry()
        self._build_patches()

    # -- construction helpers ------------------------------------------------

    def _build_edges(self):
        c = self.cells
        raw = np.vstack([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
        raw_sorted = np.sort(raw, axis=1)
        edges, inverse = np.unique(raw_sorted, axis=0, return_inverse=True)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(
            self, "cell_edges", inverse.reshape(3, len(c)).T.copy()
        )

    def _build_geometry(self):
        v = self.vertices[self.cells]  # (nc, 3, 2)
        e0 = v[:, 1] - v[:, 0]
        e1 = v[:, 2] - v[:, 1]
        e2 = v[:, 0] - v[:, 2]
        area2 = e0[:, 0] * (-e2[:, 1]) - e0[:, 1] * (-e2[:, 0])
        if np.any(area2 <= 0):
            raise ValueError("mesh contains non-positively-oriented cells")
        lengths = np.stack(
            [np.linalg.norm(e0, axis=1), np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1)]
        )
        object.__setattr__(self, "areas", 0.5 * area2)
        object.__setattr__(self, "h_cell", lengths.max(axis=0))
        object.__setattr__(self, "rho_cell", area2 / lengths.sum(axis=0))

    def _build_patches(self):
        nv = len(self.vertices)
        vertex_patches = [[] for _ in range(nv)]
        for k, cell in enumerate(self.cells):
            for vtx in cell:
                vertex_patches[vtx].append(k)
        vertex_patches = [np.array(sorted(p), dtype=np.int64) for p in vertex_patches]
        patches = [
            np.unique(np.concatenate([vertex_patches[v] for v in cell]))
            for cell in self.cells
        ]
        object.__setattr__(self, "vertex_patches", vertex_patches)
        object.__setattr__(self, "patches", patches)

    # -- queries --------------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> float:
        """Global mesh size, max over cell diameters."""
        return float(self.h_cell.max())

    @property
    def gamma0(self) -> float:
        """Non-degeneracy constant max_K h_K / rho_K."""
        return float((self.h_cell / self.rho_cell).max())

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges[:, :2])

    def is_boundary_vertex(self) -> np.ndarray:
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return mask

    def cell_vertices(self, k: int) -> np.ndarray:
        return self.vertices[self.cells[k]]

    def barycentric(self, k: int, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of `points` (n, 2) w.r.t. cell k."""
        a, b, c = self.vertices[self.cells[k]]
        T = np.column_stack([b - a, c - a])
        lam = np.linalg.solve(T, (np.atleast_2d(points) - a).T).T
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Index of a containing cell per point (nearest-centroid candidates)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        centroids = self.vertices[self.cells].mean(axis=1)
        tree = cKDTree(centroids)
        k = min(24, self.num_cells)
        _, candidates = tree.query(points, k=k)
        candidates = np.atleast_2d(candidates)
        out = np.full(len(points), -1, dtype=np.int64)
        for i, pt in enumerate(points):
            for cand in candidates[i]:
                lam = self.barycentric(int(cand), pt)[0]
                if lam.min() >= -tol:
                    out[i] = cand
                    break
            else:
                for cand in range(self.num_cells):
                    lam = self.barycentric(cand, pt)[0]
                    if lam.min() >= -tol:
                        out[i] = cand
                        break
        if np.any(out < 0):
            raise ValueError("some points lie outside the triangulation")
        return out


def _boundary_edges_from_cells(vertices, cells) -> np.ndarray:
    raw = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    uniq, counts = np.unique(raw_sorted, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    markers = np.zeros(len(bedges), dtype=np.int64)
    mids = 0.5 * (vertices[bedges[:, 0]] + vertices[bedges[:, 1]])
    markers[np.abs(mids[:, 1]) < 1e-12] = 1
    markers[np.abs(mids[:, 0] - 1.0) < 1e-12] = 2
    markers[np.abs(mids[:, 1] - 1.0) < 1e-12] = 3
    markers[np.abs(mids[:, 0]) < 1e-12] = 4
    return np.column_stack([bedges, markers])


def unit_square_mesh(n: int) -> Triangulation:
    """Structured triangulation of (0,1)^2 with 2*n^2 right-isosceles cells.

    Each grid square is split along the (lower-left, upper-right) diagonal,
    so h = sqrt(2)/n and the shape-regularity constant is 2 + 2*sqrt(2)
    independently of n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            cells.append([v00, v10, v11])
            cells.append([v00, v11, v01])
    cells = np.array(cells, dtype=np.int64)
    return Triangulation(vertices, cells, _boundary_edges_from_cells(vertices, cells))


def refine_uniform(mesh: Triangulation) -> Triangulation:
    """Split every cell into 4 congruent children via edge midpoints."""
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    mid = nv + mesh.cell_edges  # (nc, 3): midpoint ids of edges (01, 12, 20)
    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    mab, mbc, mca = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.empty((4 * mesh.num_cells, 3), dtype=np.int64)
    children[0::4] = np.column_stack([a, mab, mca])
    children[1::4] = np.column_stack([mab, b, mbc])
    children[2::4] = np.column_stack([mca, mbc, c])
    children[3::4] = np.column_stack([mab, mbc, mca])
    return Triangulation(vertices, children, _boundary_edges_from_cells(vertices, children))


def mean_over(mesh: Triangulation, region, f, degree: int = 8) -> float:
    """Mean value of a pointwise-evaluable field over a cell, patch or Omega.

    Parameters
    ----------
    region : int, array of cell indices, or None for the whole domain
    f : callable mapping (n, 2) points to (n,) values
    """
    if region is None:
        cells = np.arange(mesh.num_cells)
    else:
        cells = np.atleast_1d(np.asarray(region, dtype=np.int64))
    pts, wts = triangle_rule(degree)
    v = mesh.vertices[mesh.cells[cells]]  # (m, 3, 2)
    orig = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)  # (m, 2, 2)
    phys = orig[:, None, :] + np.einsum("mij,qj->mqi", jac, pts)
    vals = np.asarray(f(phys.reshape(-1, 2)), dtype=float).reshape(len(cells), -1)
    detj = 2.0 * mesh.areas[cells]
    integral = float(np.einsum("m,q,mq->", detj, wts, vals))
    return integral / float(mesh.areas[cells].sum())


# -- plain-text serialization -------------------------------------------------

def write_mesh(mesh: Triangulation, path) -> None:
    """Write the `ntri-mesh 1` plain-text format (deterministic ordering)."""
    buf = io.StringIO()
    buf.write("ntri-mesh 1\n")
    buf.write(f"{mesh.num_vertices}\n")
    for x, y in mesh.vertices:
        buf.write(f"{x:.17g} {y:.17g}\n")
    buf.write(f"{mesh.num_cells}\n")
    for a, b, c in mesh.cells:
        buf.write(f"{a} {b} {c}\n")
    buf.write(f"{len(mesh.boundary_edges)}\n")
    for a, b, m in mesh.boundary_edges:
        buf.write(f"{a} {b} {m}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_mesh(path) -> Triangulation:
    with open(path) as fh:
        tokens = fh.read().split("\n")
    if tokens[0].strip() != "ntri-mesh 1":
        raise ValueError("not an ntri-mesh 1 file")
    idx = 1
    nv = int(tokens[idx]); idx += 1
    vertices = np.array(
        [[float(x) for x in tokens[idx + i].split()] for i in range(nv)]
    )
    idx += nv
    nc = int(tokens[idx]); idx += 1
    cells = np.array(
        [[int(x) for x in tokens[idx + i].split()] for i in range(nc)], dtype=np.int64
    )
    idx += nc
    nbe = int(tokens[idx]); idx += 1
    bedges = np.array(
        [[int(x) for x in tokens[idx + i].split()] for i in range(nbe)], dtype=np.int64
    )
    return Triangulation(vertices, cells, bedges)
