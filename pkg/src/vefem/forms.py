"""Element assembly of the discrete Navier-Stokes / Cauchy-Green scheme.

Test functions for the tensor equation are ``phi_a E_c`` with the packed
basis ``E_11``, ``(e1 e2^T + e2 e1^T)/2``, ``E_22``, so that ``X : E_c`` is the
packed component ``x_c`` and the lumped mass block is ``w_a I_3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import matfunc as mf
from .linsolve import OrderedSolver
from .params import ModelParams
from .spaces import FESpaces, p2_basis, p2_basis_grads, quadrature_rule

_PIDX = np.array([[0, 1], [1, 2]])
E_BASIS = np.array([[[1.0, 0.0], [0.0, 0.0]],
                    [[0.0, 0.5], [0.5, 0.0]],
                    [[0.0, 0.0], [0.0, 1.0]]])
# full matrix of the packed unit vectors
X_BASIS = np.array([[[1.0, 0.0], [0.0, 0.0]],
                    [[0.0, 1.0], [1.0, 0.0]],
                    [[0.0, 0.0], [0.0, 1.0]]])
CONVECTION_DEGREE = 6


@dataclass
class SparseSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    partition: dict = field(default_factory=dict)


class _Pattern:
    """Fixed CSC sparsity pattern with slot lookup for COO triplets."""

    def __init__(self, rows, cols, shape):
        self.shape = shape
        keys = np.unique(np.asarray(cols, dtype=np.int64) * shape[0] + rows)
        self.keys = keys
        self.indices = (keys % shape[0]).astype(np.int32)
        counts = np.bincount(keys // shape[0], minlength=shape[1])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    @property
    def nnz(self):
        return len(self.keys)

    def slots(self, rows, cols):
        return np.searchsorted(self.keys, np.asarray(cols, dtype=np.int64) * self.shape[0] + rows)

    def accumulate(self, slots, vals):
        return np.bincount(slots.ravel(), weights=np.ravel(vals), minlength=self.nnz)

    def matrix(self, data):
        return sp.csc_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


class Assembler:
    """Precomputed element integrals and system templates for one mesh."""

    def __init__(self, spaces: FESpaces, params: ModelParams):
        self.spaces = spaces
        self.params = params
        mesh = spaces.mesh
        self.mesh = mesh
        nv, n2 = spaces.n_vertices, spaces.n_p2
        nt = mesh.n_triangles
        cells2 = spaces.p2_cells
        cells1 = spaces.p1_cells
        self.w = spaces.lumped_weights

        bary4, wq4 = quadrature_rule(4)
        self._phi4 = p2_basis(bary4)
        self._wq4 = mesh.areas[:, None] * wq4[None, :]
        dphi4 = p2_basis_grads(bary4, mesh.grad_p1)
        bary6, wq6 = quadrature_rule(CONVECTION_DEGREE)
        self._phi6 = p2_basis(bary6)
        self._dphi6 = p2_basis_grads(bary6, mesh.grad_p1)
        self._wq6 = mesh.areas[:, None] * wq6[None, :]

        # scalar P2 mass and stiffness, element level
        mloc = np.einsum("tq,qa,qb->tab", self._wq4, self._phi4, self._phi4)
        aloc = np.einsum("tq,tqad,tqbd->tab", self._wq4, dphi4, dphi4)
        r = np.repeat(cells2, 6, axis=1).ravel()
        c = np.tile(cells2, (1, 6)).ravel()
        self.mass_p2 = sp.csr_matrix((mloc.ravel(), (r, c)), shape=(n2, n2))
        self.stiff_p2 = sp.csr_matrix((aloc.ravel(), (r, c)), shape=(n2, n2))
        i2 = sp.identity(2, format="csr")
        self.mass_v = sp.kron(self.mass_p2, i2, format="csr")
        self.stiff_v = sp.kron(self.stiff_p2, i2, format="csr")

        # C1[t, a, b, d] = int_K phi_a d_d psi_b  (P1 test, P2 trial)
        self._c1 = np.einsum("tq,qa,tqbd->tabd", self._wq4, bary4, dphi4)
        # divergence (div v, q): rows P1 dof a, cols velocity dof 2b + c
        rows = np.broadcast_to(cells1[:, :, None, None], (nt, 3, 6, 2))
        cols = np.broadcast_to(2 * cells2[:, None, :, None] + np.arange(2)[None, None, None, :],
                               (nt, 3, 6, 2))
        self.div = sp.csr_matrix((self._c1.ravel(), (rows.ravel(), cols.ravel())),
                                 shape=(nv, 2 * n2))
        # (T, grad w) for packed nodal T: rows velocity dof 2b + c, cols 3a + P(c, d)
        rows = np.broadcast_to(2 * cells2[:, None, :, None, None]
                               + np.arange(2)[None, None, None, :, None], (nt, 3, 6, 2, 2))
        cols = np.broadcast_to(3 * cells1[:, :, None, None, None]
                               + _PIDX[None, None, None, :, :], (nt, 3, 6, 2, 2))
        vals = np.broadcast_to(self._c1[:, :, :, None, :], (nt, 3, 6, 2, 2))
        self.stress_op = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                       shape=(2 * n2, 3 * nv))
        # int phi_a grad v over the patch of a, flat index 4a + 2c + d, from v dof 2b + c
        rows = np.broadcast_to(4 * cells1[:, :, None, None, None]
                               + 2 * np.arange(2)[None, None, None, :, None]
                               + np.arange(2)[None, None, None, None, :], (nt, 3, 6, 2, 2))
        cols = np.broadcast_to(2 * cells2[:, None, :, None, None]
                               + np.arange(2)[None, None, None, :, None], (nt, 3, 6, 2, 2))
        self.grad_moment_op = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                            shape=(4 * nv, 2 * n2))

        # P1 stiffness
        kloc = np.einsum("t,tad,tbd->tab", mesh.areas, mesh.grad_p1, mesh.grad_p1)
        r1 = np.repeat(cells1, 3, axis=1).ravel()
        c1 = np.tile(cells1, (1, 3)).ravel()
        self.stiff_p1 = sp.csr_matrix((kloc.ravel(), (r1, c1)), shape=(nv, nv))

        # element integrals of P2 basis functions (vertex ones vanish)
        self._int_p2 = np.einsum("tq,qa->ta", self._wq4, self._phi4)

        self._setup_ns_pattern()
        self._setup_b_pattern()
        self._ns_solver = None

    # --- Navier-Stokes ------------------------------------------------------

    def _setup_ns_pattern(self):
        sp_ = self.spaces
        nv, n2 = sp_.n_vertices, sp_.n_p2
        free = sp_.velocity_free
        nf = len(free)
        fmap = -np.ones(2 * n2, dtype=np.int64)
        fmap[free] = np.arange(nf)
        self._fmap = fmap
        self.n_free = nf
        n = nf + nv + 1
        self.ns_size = n

        # convection entries in free numbering, both components
        cells2 = sp_.p2_cells
        rr, cc = [], []
        for comp in range(2):
            dof = 2 * cells2 + comp
            rr.append(np.repeat(fmap[dof], 6, axis=1))
            cc.append(np.tile(fmap[dof], (1, 6)))
        conv_r = np.stack(rr, axis=0)
        conv_c = np.stack(cc, axis=0)
        self._conv_mask = (conv_r >= 0) & (conv_c >= 0)

        base = (sp.csr_matrix(self.mass_v)[free][:, free], sp.csr_matrix(self.stiff_v)[free][:, free])
        mf_, af_ = (m.tocoo() for m in base)
        dcoo = sp.csr_matrix(self.div)[:, free].tocoo()
        m = self.w  # integral of each P1 hat: zero-mean row
        rows = np.concatenate([mf_.row, conv_r[self._conv_mask], nf + dcoo.row, dcoo.col,
                               nf + np.arange(nv), np.full(nv, nf + nv)])
        cols = np.concatenate([mf_.col, conv_c[self._conv_mask], dcoo.col, nf + dcoo.row,
                               np.full(nv, nf + nv), nf + np.arange(nv)])
        pat = _Pattern(rows, cols, (n, n))
        self._ns_pattern = pat
        self._ns_slot_mass = pat.slots(mf_.row, mf_.col)
        self._ns_mass_vals = mf_.data
        self._ns_slot_stiff = pat.slots(af_.row, af_.col)
        self._ns_stiff_vals = af_.data
        self._ns_slot_conv = pat.slots(conv_r[self._conv_mask], conv_c[self._conv_mask])
        static = np.zeros(pat.nnz)
        # -(p, div w) and -(div v, q)
        static += pat.accumulate(pat.slots(dcoo.col, nf + dcoo.row), -dcoo.data)
        static += pat.accumulate(pat.slots(nf + dcoo.row, dcoo.col), -dcoo.data)
        static += pat.accumulate(pat.slots(nf + np.arange(nv), np.full(nv, nf + nv)), m)
        static += pat.accumulate(pat.slots(np.full(nv, nf + nv), nf + np.arange(nv)), m)
        self._ns_saddle_static = static

    def ns_coordinates(self) -> np.ndarray:
        """Location of every saddle-point unknown; NaN for the multiplier."""
        vel = np.repeat(self.mesh.p2_nodes(), 2, axis=0)[self.spaces.velocity_free]
        return np.vstack([vel, self.mesh.vertices, [[np.nan, np.nan]]])

    @property
    def ns_solver(self) -> OrderedSolver:
        if self._ns_solver is None:
            pat = self._ns_pattern
            late = np.arange(self.ns_size) >= self.n_free
            self._ns_solver = OrderedSolver(pat.matrix(np.ones(pat.nnz)), self.ns_coordinates(),
                                            late=late)
        return self._ns_solver

    def convection_local(self, b: np.ndarray) -> np.ndarray:
        """Skew element matrices ``(n_tri, 6, 6)`` of
        1/2((b.grad)u, w) - 1/2(u, (b.grad)w), row = test, col = trial."""
        loc = b[self.spaces.p2_cells]
        bq = np.einsum("qa,tac->tqc", self._phi6, loc)
        adv = np.einsum("tqc,tqjc->tqj", bq, self._dphi6)  # b . grad psi_j
        half = 0.5 * np.einsum("tq,qi,tqj->tij", self._wq6, self._phi6, adv)
        return half - np.transpose(half, (0, 2, 1))

    def convection_matrix(self, b: np.ndarray) -> sp.csr_matrix:
        """Full (unconstrained) convection matrix on all velocity dofs."""
        cl = self.convection_local(b)
        cells2 = self.spaces.p2_cells
        rows, cols, vals = [], [], []
        for comp in range(2):
            dof = 2 * cells2 + comp
            rows.append(np.repeat(dof, 6, axis=1).ravel())
            cols.append(np.tile(dof, (1, 6)).ravel())
            vals.append(cl.ravel())
        n = self.spaces.n_velocity
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    def momentum_operator(self, v_prev: np.ndarray) -> sp.csr_matrix:
        """(1/dt) M + C(v_prev) + eta A on all velocity dofs."""
        p = self.params
        return (self.mass_v / p.dt + self.convection_matrix(v_prev) + p.eta * self.stiff_v).tocsr()

    def assemble_ns_matrix(self, v_prev: np.ndarray) -> sp.csc_matrix:
        """Saddle-point matrix in the unknowns (free velocity, pressure, multiplier)."""
        p = self.params
        pat = self._ns_pattern
        cl = self.convection_local(v_prev)
        cl = cl.reshape(len(cl), 36)
        cvals = np.stack([cl, cl], axis=0)[self._conv_mask]
        data = (self._ns_saddle_static
                + pat.accumulate(self._ns_slot_mass, self._ns_mass_vals / p.dt)
                + pat.accumulate(self._ns_slot_stiff, p.eta * self._ns_stiff_vals)
                + pat.accumulate(self._ns_slot_conv, cvals))
        return pat.matrix(data)

    def stress_load(self, stress: np.ndarray) -> np.ndarray:
        """(I_h T, grad w) for every velocity dof, packed nodal T."""
        return self.stress_op @ np.ravel(stress)

    def momentum_load(self, f, t=None) -> np.ndarray:
        """(f, w) by degree-4 quadrature; ``f(points) -> (N, 2)``, or ``f(points, t)``."""
        pts, _, _ = self.spaces.quad_points(4)
        flat = pts.reshape(-1, 2)
        vals = f(flat) if t is None else f(flat, t)
        vals = np.asarray(vals, dtype=float).reshape(pts.shape[0], pts.shape[1], 2)
        loc = np.einsum("tq,qb,tqc->tbc", self._wq4, self._phi4, vals)
        out = np.zeros((self.spaces.n_p2, 2))
        np.add.at(out, self.spaces.p2_cells, loc)
        return out.ravel()

    def ns_rhs(self, v_prev, stress, load=None) -> np.ndarray:
        rhs_v = self.mass_v @ np.ravel(v_prev) / self.params.dt - self.stress_load(stress)
        if load is not None:
            rhs_v = rhs_v + load
        out = np.zeros(self.ns_size)
        out[: self.n_free] = rhs_v[self.spaces.velocity_free]
        return out

    def split_ns(self, x):
        v = np.zeros(self.spaces.n_velocity)
        v[self.spaces.velocity_free] = x[: self.n_free]
        p = x[self.n_free: self.n_free + self.spaces.n_vertices]
        return v.reshape(-1, 2), p.copy()

    def assemble_ns(self, v_prev, B_iter, load=None, delta=None) -> SparseSystem:
        """Linear saddle-point system for (v, p) with the elastic stress of ``B_iter``."""
        p = self.params
        if delta is None:
            stress = mf.elastic_stress(B_iter, p.mu, p.beta)
        else:
            stress = mf.elastic_stress_delta(B_iter, p.mu, p.beta, delta)
        return SparseSystem(self.assemble_ns_matrix(v_prev), self.ns_rhs(v_prev, stress, load),
                            {"velocity": self.n_free, "pressure": self.spaces.n_vertices,
                             "mean_constraint": 1})

    # --- Cauchy-Green equation ---------------------------------------------

    def _setup_b_pattern(self):
        nv = self.spaces.n_vertices
        k = self.stiff_p1.tocoo()
        blk = np.arange(3)
        rows = (3 * k.row[:, None, None] + blk[None, :, None]) + 0 * blk[None, None, :]
        cols = (3 * k.col[:, None, None] + blk[None, None, :]) + 0 * blk[None, :, None]
        pat = _Pattern(rows.ravel(), cols.ravel(), (3 * nv, 3 * nv))
        self._b_pattern = pat
        diag_r = 3 * k.row[:, None] + blk[None, :]
        diag_c = 3 * k.col[:, None] + blk[None, :]
        self._b_stiff = pat.accumulate(pat.slots(diag_r, diag_c),
                                       np.repeat(k.data[:, None], 3, axis=1))
        a = np.arange(nv)
        br = 3 * a[:, None, None] + blk[None, :, None] + 0 * blk[None, None, :]
        bc = 3 * a[:, None, None] + blk[None, None, :] + 0 * blk[None, :, None]
        self._b_block_slots = pat.slots(br.ravel(), bc.ravel())
        self._b_diag_slots = pat.slots((3 * a[:, None] + blk).ravel(), (3 * a[:, None] + blk).ravel())

    def grad_moments(self, v) -> np.ndarray:
        """Integral of phi_a grad v over each vertex patch, ``(n_vertices, 2, 2)``."""
        return (self.grad_moment_op @ np.ravel(v)).reshape(-1, 2, 2)

    def coupling_blocks(self, v) -> np.ndarray:
        """Nodal matrices of X -> (grad v, I_h[phi_a E_c X]) in packed coordinates."""
        gm = self.grad_moments(v)
        return np.einsum("ckp,mpl,nkl->ncm", E_BASIS, X_BASIS, gm)

    def coupling_apply(self, v, B) -> np.ndarray:
        """(grad v, I_h[phi_a E_c B]) for all a, c; returns ``(n_vertices, 3)``."""
        gm = self.grad_moments(v)
        return np.einsum("ckp,npl,nkl->nc", E_BASIS, mf.unpack(B), gm)

    def lambda_field(self, B, delta=None):
        """Per-element chain-rule tensor and residual flags for nodal ``B``."""
        nodal = B[self.spaces.p1_cells]
        m = self.mesh
        if delta is None:
            return mf.build_lambda(m.edge_vectors, m.dual_vectors, nodal, self.params.beta)
        return mf.build_lambda_delta(m.edge_vectors, m.dual_vectors, nodal, self.params.beta, delta)

    def lambda_convection(self, v, lam) -> np.ndarray:
        """sum_ij (v_i Lambda_ij, d_j (phi_a E_c)) for all a, c; ``(n_vertices, 3)``."""
        vint = np.einsum("ta,tai->ti", self._int_p2, v[self.spaces.p2_cells])
        per = np.einsum("ti,tijc,taj->tac", vint, lam, self.mesh.grad_p1)
        out = np.zeros((self.spaces.n_vertices, 3))
        np.add.at(out, self.spaces.p1_cells, per)
        return out

    def tensor_load(self, fB_nodal) -> np.ndarray:
        """<I_h f_B, phi_a E_c>_h, ``(n_vertices, 3)``."""
        return self.w[:, None] * fB_nodal

    def _b_matrix(self, mass_coef, blocks):
        pat = self._b_pattern
        data = self.params.lam * self._b_stiff
        data = data + pat.accumulate(self._b_diag_slots, np.repeat(mass_coef * self.w, 3))
        if blocks is not None:
            data = data + pat.accumulate(self._b_block_slots, blocks)
        return pat.matrix(data)

    def assemble_b(self, v_new, v_prev, B_prev, B_iter, lam, fB_nodal=None) -> SparseSystem:
        """Linear system for B^{n} with Lambda and the quadratic factor lagged at ``B_iter``."""
        p = self.params
        blocks = -2.0 * self.coupling_blocks(v_new)
        if p.delta2:
            blocks = blocks + p.delta2 * self.w[:, None, None] * mf.sym_product_matrix(B_iter)
        mat = self._b_matrix(1.0 / p.dt + p.delta1 - p.delta2, blocks)
        rhs = (self.w[:, None] * (B_prev / p.dt + p.delta1 * mf.IDENTITY)
               + self.lambda_convection(v_prev, lam))
        if fB_nodal is not None:
            rhs = rhs + self.tensor_load(fB_nodal)
        return SparseSystem(mat, rhs.ravel(), {"tensor": 3 * self.spaces.n_vertices})

    def assemble_regularized_b(self, v_new, v_prev, B_prev, B_iter, lam_delta, delta,
                               fB_nodal=None) -> SparseSystem:
        """Regularised tensor system: cut-offs evaluated at ``B_iter`` move to the RHS."""
        p = self.params
        bd = mf.cutoff_delta(B_iter, delta)
        blocks = None
        if p.delta2:
            blocks = p.delta2 * self.w[:, None, None] * mf.sym_product_matrix(bd)
        mat = self._b_matrix(1.0 / p.dt, blocks)
        rhs = (self.w[:, None] * (B_prev / p.dt - p.delta1 * (bd - mf.IDENTITY)
                                  + p.delta2 * bd)
               + 2.0 * self.coupling_apply(v_new, bd)
               + self.lambda_convection(v_prev, lam_delta))
        if fB_nodal is not None:
            rhs = rhs + self.tensor_load(fB_nodal)
        return SparseSystem(mat, rhs.ravel(), {"tensor": 3 * self.spaces.n_vertices})

    # --- nonlinear residual -------------------------------------------------

    def residual(self, v_prev, B_prev, v, p, B, load_v=None, fB_nodal=None, delta=None,
                 momentum_op=None, lam=None):
        """Residuals of the fully nonlinear scheme at ``(v, p, B)``.

        Returns the dual coefficient vectors of the momentum equation (free
        velocity dofs), the divergence constraint, and the tensor equation.
        With ``delta`` the regularised scheme is used.  ``momentum_op`` and
        ``lam`` may be passed when already available for these arguments.
        """
        prm = self.params
        vf = np.ravel(v)
        if delta is None:
            stress = mf.elastic_stress(B, prm.mu, prm.beta)
        else:
            stress = mf.elastic_stress_delta(B, prm.mu, prm.beta, delta)
        if momentum_op is None:
            momentum_op = self.momentum_operator(v_prev)
        rv = (momentum_op @ vf - self.div.T @ p
              - self.mass_v @ np.ravel(v_prev) / prm.dt + self.stress_load(stress))
        if load_v is not None:
            rv = rv - load_v
        rv = rv[self.spaces.velocity_free]
        rp = self.div @ vf

        if lam is None:
            lam = self.lambda_field(B, delta)[0]
        w = self.w[:, None]
        if delta is None:
            bd = B
            quad = mf.square(B) - B
        else:
            bd = mf.cutoff_delta(B, delta)
            quad = mf.sym_product(B, bd) - bd
        rb = (w * (B - B_prev) / prm.dt - self.lambda_convection(v_prev, lam)
              + prm.delta1 * w * (bd - mf.IDENTITY) + prm.delta2 * w * quad
              - 2.0 * self.coupling_apply(v, bd)
              + prm.lam * (self.stiff_p1 @ B))
        if fB_nodal is not None:
            rb = rb - self.tensor_load(fB_nodal)
        return rv, rp, rb

    # --- Leray projection ---------------------------------------------------

    def leray_matrix(self) -> sp.csc_matrix:
        pat = self._ns_pattern
        data = self._ns_saddle_static + pat.accumulate(self._ns_slot_mass, self._ns_mass_vals)
        return pat.matrix(data)
