"""Conforming triangulations of the unit square and their per-element geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 9


@dataclass(frozen=True)
class ElementGeometry:
    """Geometry of one triangle.

    ``edges[k]`` is ``P^{k+1} - P^0`` and ``dual[k]`` the vector with
    ``dual[k] . edges[l] = delta_kl``.  ``grad_p1`` holds the (constant)
    gradients of the three hat functions.
    """

    edges: np.ndarray
    dual: np.ndarray
    area: float
    grad_p1: np.ndarray


class TriMesh:
    """Triangle mesh with a P2 edge table and cached element geometry.

    Parameters
    ----------
    vertices : (n_vertices, 2) array
    triangles : (n_triangles, 3) int array
        Vertex indices. Clockwise triangles are reoriented in place so that
        every stored triangle has positive signed area.
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        tri = np.array(triangles, dtype=np.int64, copy=True)
        p = self.vertices[tri]
        signed = _signed_area(p)
        flip = signed < 0
        tri[flip, 1], tri[flip, 2] = tri[flip, 2].copy(), tri[flip, 1].copy()
        if np.any(np.abs(signed) == 0):
            raise ValueError("degenerate triangle in mesh")
        self.triangles = tri
        self._build_edges()
        self._build_geometry()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _build_edges(self):
        tri = self.triangles
        # local edge m joins local vertices _LOCAL_EDGES[m]
        pairs = np.stack([tri[:, list(e)] for e in _LOCAL_EDGES], axis=1)
        keys = np.sort(pairs.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                           return_counts=True)
        self.edges = edges
        self.triangle_edges = inverse.reshape(-1, 3)
        self.edge_triangle_count = counts
        self.boundary_edge_flags = counts == 1
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[edges[self.boundary_edge_flags].ravel()] = True
        self.boundary_vertex_flags = flags

    def _build_geometry(self):
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)
        # E has the edge vectors as columns; the rows of inv(E) are the dual vectors
        jac = np.transpose(e, (0, 2, 1))
        dual = np.linalg.inv(jac)
        self.edge_vectors = e
        self.dual_vectors = dual
        self.areas = np.abs(_signed_area(p))
        self.grad_p1 = np.stack([-dual[:, 0] - dual[:, 1], dual[:, 0], dual[:, 1]], axis=1)
        self.diameters = np.max(np.linalg.norm(
            p[:, [1, 2, 0]] - p[:, [0, 1, 2]], axis=2), axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def element_geometry(self, element_id: int) -> ElementGeometry:
        if not 0 <= element_id < self.n_triangles:
            raise IndexError(f"element id {element_id} out of range "
                             f"[0, {self.n_triangles})")
        return ElementGeometry(edges=self.edge_vectors[element_id].copy(),
                               dual=self.dual_vectors[element_id].copy(),
                               area=float(self.areas[element_id]),
                               grad_p1=self.grad_p1[element_id].copy())

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def p2_nodes(self) -> np.ndarray:
        """Coordinates of the P2 nodes: vertices first, then edge midpoints."""
        return np.vstack([self.vertices, self.edge_midpoints()])

    def interior_angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        angles = np.empty((self.n_triangles, 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles[:, i] = np.arccos(np.clip(cos, -1.0, 1.0))
        return angles

    def is_non_obtuse(self, tol: float = 1e-12) -> bool:
        p = self.vertices[self.triangles]
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            scale = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            if np.any(np.sum(a * b, axis=1) < -tol * scale):
                return False
        return True

    def is_conforming(self) -> bool:
        """Every edge is shared by one or two triangles and the Euler
        characteristic is that of a disc."""
        counts = self.edge_triangle_count
        if np.any((counts < 1) | (counts > 2)):
            return False
        # Euler characteristic of a simply connected planar triangulation
        return self.n_vertices - self.n_edges + self.n_triangles == 1


_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def _signed_area(p):
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def build_crisscross(k: int) -> TriMesh:
    """Unit square split into 2^k x 2^k squares, each cut by both diagonals."""
    if not 0 <= k <= MAX_LEVEL:
        raise ValueError(f"mesh level k={k} outside [0, {MAX_LEVEL}]")
    n = 2 ** k
    x = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(x, x, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    c = (x[:-1] + x[1:]) / 2
    cx, cy = np.meshgrid(c, c, indexing="xy")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centers])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a = i + j * (n + 1)
    b = a + 1
    cc = b + (n + 1)
    d = a + (n + 1)
    m = (n + 1) ** 2 + i + j * n
    tris = np.stack([np.column_stack([a, b, m]), np.column_stack([b, cc, m]),
                     np.column_stack([cc, d, m]), np.column_stack([d, a, m])], axis=1)
    return TriMesh(vertices, tris.reshape(-1, 3))
