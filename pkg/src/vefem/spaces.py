"""P1/P2 Lagrange spaces, nodal interpolation, lumped products and quadrature.

Storage conventions (flat, node-major):

* scalar P1 field: ``(n_vertices,)``
* symmetric tensor P1 field: ``(n_vertices, 3)`` with columns ``b11, b12, b22``
* vector P2 field: ``(n_p2, 2)``, P2 nodes numbered vertices first, then edge
  midpoints in the order of ``mesh.edges``
"""

from __future__ import annotations

import itertools

import numpy as np

from .mesh import TriMesh

# Symmetric Dunavant rules in barycentric coordinates, weights normalised to 1.
# Digits refined by Newton iteration on the moment equations.
_A4 = (0.44594849091596488632, 0.091576213509770743460)
_W4 = (0.22338158967801146570, 0.10995174365532186764)
_A6 = (0.24928674517091042129, 0.063089014491502228340)
_W6 = (0.11678627572637936603, 0.050844906370206816921)
_C6 = (0.053145049844816947353, 0.31035245103378440542)
_W6C = 0.082851075618373575194


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(c1, c2):
    c3 = 1.0 - c1 - c2
    return sorted(set(itertools.permutations((c1, c2, c3))))


def _build_rules():
    rules = {}
    pts = _orbit3(1.0 / 6.0)
    rules[2] = (np.array(pts), np.full(3, 1.0 / 3.0))
    pts, wts = [], []
    for a, w in zip(_A4, _W4):
        pts += _orbit3(a)
        wts += [w] * 3
    rules[4] = (np.array(pts), np.array(wts))
    pts, wts = [], []
    for a, w in zip(_A6, _W6):
        pts += _orbit3(a)
        wts += [w] * 3
    orb = _orbit6(*_C6)
    pts += orb
    wts += [_W6C] * len(orb)
    rules[6] = (np.array(pts), np.array(wts))
    return rules


_RULES = _build_rules()


def quadrature_rule(degree: int):
    """Barycentric points ``(nq, 3)`` and weights summing to one."""
    try:
        bary, w = _RULES[degree]
    except KeyError:
        raise ValueError(f"unsupported quadrature degree {degree}; "
                         f"choose from {sorted(_RULES)}") from None
    return bary.copy(), w.copy()


def quadrature(mesh: TriMesh, element_id: int, degree: int):
    """Physical quadrature points and weights on one element."""
    bary, w = quadrature_rule(degree)
    p = mesh.vertices[mesh.triangles[element_id]]
    return bary @ p, w * mesh.areas[element_id]


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points, ``(nq, 6)``.

    Local nodes 0-2 are the vertices, 3-5 the midpoints of the local edges
    (0,1), (1,2), (2,0).
    """
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])


def p2_basis_grads(bary: np.ndarray, grad_p1: np.ndarray) -> np.ndarray:
    """Physical P2 gradients, ``(n_tri, nq, 6, 2)``.

    ``grad_p1`` is ``(n_tri, 3, 2)``, the barycentric coordinate gradients.
    """
    g0, g1, g2 = grad_p1[:, None, 0], grad_p1[:, None, 1], grad_p1[:, None, 2]
    l0, l1, l2 = (bary[None, :, i, None] for i in range(3))
    return np.stack([(4 * l0 - 1) * g0, (4 * l1 - 1) * g1, (4 * l2 - 1) * g2,
                     4 * (l1 * g0 + l0 * g1), 4 * (l2 * g1 + l1 * g2),
                     4 * (l0 * g2 + l2 * g0)], axis=2)


class FESpaces:
    """The discrete spaces S_h, W_h and V_h on one mesh."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.n_vertices = mesh.n_vertices
        self.n_p2 = mesh.n_vertices + mesh.n_edges
        self.p1_cells = mesh.triangles
        self.p2_cells = np.hstack([mesh.triangles, mesh.n_vertices + mesh.triangle_edges])
        self.p2_boundary = np.concatenate([mesh.boundary_vertex_flags,
                                           mesh.boundary_edge_flags])
        # velocity dof index 2*node + component
        vb = np.repeat(self.p2_boundary, 2)
        self.velocity_free = np.flatnonzero(~vb)
        self.lumped_weights = lumped_weights(mesh)
        self._quad_cache = {}

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_p2

    def quad_points(self, degree: int):
        """Physical points ``(n_tri, nq, 2)``, weights ``(n_tri, nq)`` and the
        barycentric rule."""
        if degree not in self._quad_cache:
            bary, w = quadrature_rule(degree)
            p = self.mesh.vertices[self.mesh.triangles]
            pts = np.einsum("qi,tid->tqd", bary, p)
            self._quad_cache[degree] = (pts, self.mesh.areas[:, None] * w[None, :], bary)
        return self._quad_cache[degree]

    # --- interpolation ------------------------------------------------------

    def interpolate_scalar(self, f) -> np.ndarray:
        return _checked(np.asarray(f(self.mesh.vertices), dtype=float), (self.n_vertices,))

    def interpolate_tensor(self, f) -> np.ndarray:
        """Nodal interpolant of a symmetric-matrix function.

        ``f`` maps ``(n, 2)`` points to ``(n, 2, 2)`` matrices or ``(n, 3)``
        packed components.
        """
        vals = np.asarray(f(self.mesh.vertices), dtype=float)
        if vals.ndim == 3:
            vals = np.column_stack([vals[:, 0, 0], 0.5 * (vals[:, 0, 1] + vals[:, 1, 0]),
                                    vals[:, 1, 1]])
        return _checked(vals, (self.n_vertices, 3))

    def interpolate_vector_p2(self, f, enforce_boundary: bool = True) -> np.ndarray:
        vals = _checked(np.asarray(f(self.mesh.p2_nodes()), dtype=float), (self.n_p2, 2))
        if enforce_boundary:
            vals = vals.copy()
            vals[self.p2_boundary] = 0.0
        return vals

    # --- evaluation ---------------------------------------------------------

    def eval_p2_vector(self, v: np.ndarray, degree: int):
        """Values ``(n_tri, nq, 2)`` and gradients ``(n_tri, nq, 2, 2)`` with
        ``grad[..., c, d] = d v_c / d x_d``."""
        _, _, bary = self.quad_points(degree)
        phi = p2_basis(bary)
        dphi = p2_basis_grads(bary, self.mesh.grad_p1)
        loc = v[self.p2_cells]
        val = np.einsum("qa,tac->tqc", phi, loc)
        grad = np.einsum("tqad,tac->tqcd", dphi, loc)
        return val, grad

    def eval_p1(self, field: np.ndarray, degree: int):
        """Values ``(n_tri, nq, ...)`` and element-constant gradients
        ``(n_tri, ..., 2)`` of a P1 field."""
        _, _, bary = self.quad_points(degree)
        loc = field[self.p1_cells]
        val = np.einsum("qa,ta...->tq...", bary, loc)
        grad = np.einsum("tad,ta...->t...d", self.mesh.grad_p1, loc)
        return val, grad


def _checked(vals, shape):
    if vals.shape != shape:
        raise ValueError(f"interpolated values have shape {vals.shape}, expected {shape}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite at every node")
    return vals


def lumped_weights(mesh: TriMesh) -> np.ndarray:
    """w_a = integral of the hat function at vertex a."""
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return w


def lumped_inner(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> float:
    """<a, b>_h for nodal P1 data; tensors use the Frobenius contraction."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[0] != weights.shape[0]:
        raise ValueError("fields live on different meshes")
    if a.ndim == 1:
        return float(weights @ (a * b))
    return float(weights @ (a[:, 0] * b[:, 0] + 2 * a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]))


def gradient_p1(mesh: TriMesh, field: np.ndarray, element_id: int) -> np.ndarray:
    """Constant gradient of a P1 field on one element.

    Scalar fields give a ``(2,)`` vector, packed tensor fields a ``(3, 2)``
    array (one gradient per component).
    """
    loc = np.asarray(field)[mesh.triangles[element_id]]
    return np.einsum("ad,a...->...d", mesh.grad_p1[element_id], loc)
