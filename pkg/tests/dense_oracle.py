"""Independent dense reference implementation of one time step.

Everything here is written from the definitions with explicit loops: the P2
basis comes from a Vandermonde solve on each physical triangle, integrals use
a collapsed Gauss-Legendre product rule, and the nonlinear step is solved by
Newton's method with a finite-difference Jacobian instead of the fixed-point
iteration.  Only the mesh (vertices, triangles with their vertex order) is
shared with the package.
"""

import numpy as np


def triangle_rule(n=8):
    """Collapsed Gauss-Legendre rule on the reference triangle (exact to 2n-2)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    pts, wts = [], []
    for xi, wi in zip(x, w):
        for yj, wj in zip(x, w):
            pts.append((xi, yj * (1 - xi)))
            wts.append(wi * wj * (1 - xi))
    return np.array(pts), np.array(wts)


def _monomials(p):
    x, y = p[..., 0], p[..., 1]
    one = np.ones_like(x)
    return np.stack([one, x, y, x * x, x * y, y * y], -1)


def _monomial_grads(p):
    x, y = p[..., 0], p[..., 1]
    z, one = np.zeros_like(x), np.ones_like(x)
    gx = np.stack([z, one, z, 2 * x, y, z], -1)
    gy = np.stack([z, z, one, z, x, 2 * y], -1)
    return np.stack([gx, gy], -1)          # (..., 6, 2)


class DenseStep:
    def __init__(self, vertices, triangles, params):
        self.prm = params
        self.X = np.asarray(vertices, float)
        self.T = np.asarray(triangles)
        nv = len(self.X)
        # P2 nodes: vertices then one midpoint per edge, found by coordinates
        nodes = [tuple(x) for x in self.X]
        index = {tuple(np.round(x, 12)): i for i, x in enumerate(self.X)}
        self.cells = []
        for tri in self.T:
            loc = list(tri)
            for a, b in ((0, 1), (1, 2), (2, 0)):
                m = tuple(np.round(0.5 * (self.X[tri[a]] + self.X[tri[b]]), 12))
                if m not in index:
                    index[m] = len(nodes)
                    nodes.append(m)
                loc.append(index[m])
            self.cells.append(loc)
        self.nodes = np.array(nodes, float)
        self.cells = np.array(self.cells)
        self.nv, self.n2 = nv, len(self.nodes)
        on_bd = np.any((np.abs(self.nodes) < 1e-12) | (np.abs(self.nodes - 1) < 1e-12), axis=1)
        self.free = np.array([2 * i + c for i in range(self.n2) for c in range(2) if not on_bd[i]])
        self.ref_pts, self.ref_w = triangle_rule(8)
        self._assemble_static()

    # --- element geometry ----------------------------------------------------

    def _element(self, t):
        P = self.X[self.T[t]]
        J = np.column_stack([P[1] - P[0], P[2] - P[0]])
        area = 0.5 * abs(np.linalg.det(J))
        qp = P[0] + self.ref_pts @ J.T
        nodes = self.nodes[self.cells[t]]
        coef = np.linalg.inv(_monomials(nodes))            # columns: basis functions
        phi = _monomials(qp) @ coef                         # (q, 6)
        dphi = np.einsum("qmd,mb->qbd", _monomial_grads(qp), coef)
        # P1 hats by the same route
        c1 = np.linalg.inv(np.column_stack([np.ones(3), P]))
        hat = np.column_stack([np.ones(len(qp)), qp]) @ c1  # (q, 3)
        dhat = c1[1:].T                                     # (3, 2)
        return P, area, qp, 2 * area * self.ref_w, phi, dphi, hat, dhat

    def _assemble_static(self):
        n2, nv = self.n2, self.nv
        self.M = np.zeros((2 * n2, 2 * n2))
        self.A = np.zeros((2 * n2, 2 * n2))
        self.D = np.zeros((nv, 2 * n2))
        self.S = np.zeros((2 * n2, 3 * nv))        # stress functional on packed nodal T
        self.G = np.zeros((4 * nv, 2 * n2))        # int phi_a d_d v_c
        self.K = np.zeros((nv, nv))
        self.w = np.zeros(nv)
        self.vint = []                              # element integrals of P2 basis
        for t in range(len(self.T)):
            P, area, qp, wq, phi, dphi, hat, dhat = self._element(t)
            c2, c1 = self.cells[t], self.T[t]
            self.vint.append(wq @ phi)
            for a in range(6):
                for b in range(6):
                    m = np.sum(wq * phi[:, a] * phi[:, b])
                    s = np.sum(wq * np.sum(dphi[:, a] * dphi[:, b], axis=1))
                    for c in range(2):
                        self.M[2 * c2[a] + c, 2 * c2[b] + c] += m
                        self.A[2 * c2[a] + c, 2 * c2[b] + c] += s
            for a in range(3):
                self.w[c1[a]] += area / 3
                for b in range(3):
                    self.K[c1[a], c1[b]] += area * dhat[a] @ dhat[b]
                for b in range(6):
                    for c in range(2):
                        for d in range(2):
                            val = np.sum(wq * hat[:, a] * dphi[:, b, d])
                            if c == d:
                                self.D[c1[a], 2 * c2[b] + c] += val
                            self.G[4 * c1[a] + 2 * c + d, 2 * c2[b] + c] += val
                            # (I_h T, grad w): T_cd = packed index
                            pc = [[0, 1], [1, 2]][c][d]
                            self.S[2 * c2[b] + c, 3 * c1[a] + pc] += val

    def convection(self, b):
        C = np.zeros((2 * self.n2, 2 * self.n2))
        for t in range(len(self.T)):
            _, _, _, wq, phi, dphi, _, _ = self._element(t)
            c2 = self.cells[t]
            bq = phi @ b[c2]                                  # (q, 2)
            adv = np.einsum("qd,qjd->qj", bq, dphi)
            loc = 0.5 * (np.einsum("q,qi,qj->ij", wq, phi, adv)
                         - np.einsum("q,qj,qi->ij", wq, phi, adv))
            for i in range(6):
                for j in range(6):
                    for c in range(2):
                        C[2 * c2[i] + c, 2 * c2[j] + c] += loc[i, j]
        return C

    # --- constitutive pieces ---------------------------------------------------

    @staticmethod
    def full(b):
        return np.array([[b[0], b[1]], [b[1], b[2]]])

    @staticmethod
    def packed(m):
        return np.array([m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1]])

    def stress(self, b):
        mu, beta = self.prm.mu, self.prm.beta
        B = self.full(b)
        return self.packed(2 * mu * (1 - beta) * (B - np.eye(2)) + 2 * mu * beta * (B @ B - B))

    def lam_element(self, t, B):
        """Lambda_ij = sum_k (g^k)_i (e_k)_j M_k with M_k fixed by the chain rule."""
        beta = self.prm.beta
        P = self.X[self.T[t]]
        E = np.array([P[1] - P[0], P[2] - P[0]])
        g = np.linalg.inv(E).T                  # rows g^k with g^k . e_l = delta_kl
        mats = [self.full(B[v]) for v in self.T[t]]

        def G(m):
            return beta * m - (1 - beta) * np.linalg.inv(m)

        def theta(m):
            return 0.5 * beta * np.sum(m * m) + (1 - beta) * np.log(np.linalg.det(m))

        lam = np.zeros((2, 2, 2, 2))
        for k in (1, 2):
            a, c = mats[k], mats[0]
            dG = G(a) - G(c)
            mk = 0.5 * (a + c)
            n2 = np.sum(dG * dG)
            if n2 > 0:
                mk = mk + (theta(a) - theta(c) - np.sum(mk * dG)) / n2 * dG
            for i in range(2):
                for j in range(2):
                    lam[i, j] += g[k - 1, i] * E[k - 1, j] * mk
        return lam

    # --- nonlinear residual ---------------------------------------------------------

    def unknowns(self, v, p, B):
        return np.concatenate([np.ravel(v)[self.free], p, [0.0], np.ravel(B)])

    def split(self, x):
        nf = len(self.free)
        v = np.zeros(2 * self.n2)
        v[self.free] = x[:nf]
        p = x[nf:nf + self.nv]
        lm = x[nf + self.nv]
        B = x[nf + self.nv + 1:].reshape(-1, 3)
        return v, p, lm, B

    def residual(self, x, v_prev, B_prev):
        prm = self.prm
        dt = prm.dt
        v, p, lm, B = self.split(x)
        vp = np.ravel(v_prev)
        T = np.array([self.stress(b) for b in B])
        rv = (self.M @ (v - vp) / dt + self.Cprev @ v + prm.eta * self.A @ v
              - self.D.T @ p + self.S @ T.ravel())[self.free]
        rp = self.D @ v + lm * self.w
        rm = self.w @ p
        # tensor equation, one row per (vertex a, packed component c)
        rb = np.zeros((self.nv, 3))
        gv = (self.G @ v).reshape(-1, 2, 2)             # int phi_a grad v
        E = [np.array([[1, 0], [0, 0]]), np.array([[0, .5], [.5, 0]]), np.array([[0, 0], [0, 1]])]
        for a in range(self.nv):
            Ba = self.full(B[a])
            for c in range(3):
                rb[a, c] += np.sum(gv[a] * (E[c] @ Ba)) * -2.0
        sq = np.array([self.packed(self.full(b) @ self.full(b)) for b in B])
        rb += self.w[:, None] * ((B - B_prev) / dt + prm.delta1 * (B - np.array([1, 0, 1]))
                                 + prm.delta2 * (sq - B))
        rb += prm.lam * self.K @ B
        vp2 = vp.reshape(-1, 2)
        for t in range(len(self.T)):
            lam = self.lam_element(t, B)
            vbar = self.vint[t] @ vp2[self.cells[t]]      # int_K v_prev
            P = self.X[self.T[t]]
            dhat = np.linalg.inv(np.column_stack([np.ones(3), P]))[1:].T
            for la, a in enumerate(self.T[t]):
                m = sum(vbar[i] * lam[i, j] * dhat[la, j] for i in range(2) for j in range(2))
                rb[a] -= self.packed(m)
        return np.concatenate([rv, rp, [rm], rb.ravel()])

    def step(self, v_prev, B_prev, tol=1e-13, max_iter=30):
        """Newton's method with a central-difference Jacobian."""
        self.Cprev = self.convection(np.asarray(v_prev).reshape(-1, 2))
        x = self.unknowns(v_prev, np.zeros(self.nv), B_prev)
        for _ in range(max_iter):
            r = self.residual(x, v_prev, B_prev)
            if np.abs(r).max() < tol:
                break
            J = np.empty((len(x), len(x)))
            h = 1e-6
            for j in range(len(x)):
                e = np.zeros(len(x))
                e[j] = h
                J[:, j] = (self.residual(x + e, v_prev, B_prev)
                           - self.residual(x - e, v_prev, B_prev)) / (2 * h)
            x = x - np.linalg.solve(J, r)
        v, p, lm, B = self.split(x)
        return v.reshape(-1, 2), p, B, np.abs(self.residual(x, v_prev, B_prev)).max()
