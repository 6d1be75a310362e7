"""Pointwise calculus on symmetric 2x2 matrices and the discrete chain-rule tensor.

Symmetric matrices are packed along the last axis as ``(b11, b12, b22)``;
every function broadcasts over leading axes.  ``matrix_function`` works on
full ``(..., d, d)`` arrays for any d.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 1.0])
GUARD_EPS = 1e-14


class DomainError(ValueError):
    """A matrix that must be positive definite is not."""


def pack(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1)


def unpack(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.stack([np.stack([b[..., 0], b[..., 1]], -1),
                     np.stack([b[..., 1], b[..., 2]], -1)], -2)


def frob(a, b):
    """Frobenius contraction a : b of packed symmetric matrices."""
    return a[..., 0] * b[..., 0] + 2.0 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def frob_norm2(a):
    return frob(a, a)


def trace(b):
    return b[..., 0] + b[..., 2]


def det(b):
    return b[..., 0] * b[..., 2] - b[..., 1] ** 2


def inv(b):
    d = det(b)
    return np.stack([b[..., 2], -b[..., 1], b[..., 0]], axis=-1) / d[..., None]


def square(b):
    a, c, e = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a * a + c * c, c * (a + e), c * c + e * e], axis=-1)


def sym_product(a, b):
    """Symmetric part of the matrix product, (ab + ba)/2."""
    p, q, r = a[..., 0], a[..., 1], a[..., 2]
    x, y, z = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([p * x + q * y, 0.5 * (q * x + (p + r) * y + q * z), q * y + r * z], axis=-1)


def sym_product_matrix(a):
    """Matrix of X -> (aX + Xa)/2 in packed coordinates, shape (..., 3, 3)."""
    p, q, r = a[..., 0], a[..., 1], a[..., 2]
    z = np.zeros_like(p)
    return np.stack([np.stack([p, q, z], -1),
                     np.stack([0.5 * q, 0.5 * (p + r), 0.5 * q], -1),
                     np.stack([z, q, r], -1)], -2)


def _angle(b):
    mid = 0.5 * (b[..., 0] + b[..., 2])
    half = 0.5 * (b[..., 0] - b[..., 2])
    rad = np.hypot(half, b[..., 1])
    theta = 0.5 * np.arctan2(b[..., 1], half)
    return mid, rad, np.cos(theta), np.sin(theta)


def eigvalsh(b):
    """Eigenvalues in ascending order, shape (..., 2)."""
    mid, rad, _, _ = _angle(np.asarray(b, dtype=float))
    return np.stack([mid - rad, mid + rad], axis=-1)


def eig_sym(b):
    """Closed-form eigendecomposition.

    Returns ascending eigenvalues ``(..., 2)`` and an orthonormal matrix
    ``(..., 2, 2)`` whose columns are the matching eigenvectors.
    """
    mid, rad, c, s = _angle(np.asarray(b, dtype=float))
    lam = np.stack([mid - rad, mid + rad], axis=-1)
    q = np.stack([np.stack([-s, c], -1), np.stack([c, s], -1)], -2)
    return lam, q


def spectral(b, f):
    """Apply a scalar function to the eigenvalues of packed matrices."""
    mid, rad, c, s = _angle(np.asarray(b, dtype=float))
    f1 = f(mid - rad)
    f2 = f(mid + rad)
    return np.stack([f2 * c * c + f1 * s * s, (f2 - f1) * c * s, f2 * s * s + f1 * c * c], axis=-1)


def matrix_function(m, f):
    """Spectral function of full symmetric ``(..., d, d)`` matrices, any d."""
    lam, q = np.linalg.eigh(np.asarray(m, dtype=float))
    return np.einsum("...ik,...k,...jk->...ij", q, f(lam), q)


def min_eig(b):
    return eigvalsh(b)[..., 0]


def require_pd(b, what="matrix"):
    lmin = np.min(min_eig(b)) if np.size(b) else 1.0
    if not lmin > 0:
        raise DomainError(f"{what} is not positive definite (min eigenvalue {lmin:.3e})")


def cutoff_delta(b, delta):
    """Eigenvalues replaced by max(lambda_i, delta)."""
    return spectral(b, lambda s: np.maximum(s, delta))


def g_delta(s, delta):
    """C^1 extension of ln below delta; returns (value, derivative)."""
    s = np.asarray(s, dtype=float)
    low = s < delta
    safe = np.where(low, delta, s)
    val = np.where(low, s / delta + np.log(delta) - 1.0, np.log(safe))
    return val, 1.0 / safe


def trace_g_delta(b, delta):
    lam = eigvalsh(b)
    return g_delta(lam, delta)[0].sum(axis=-1)


def trace_log_cutoff(b, delta):
    """tr ln [B]_delta, the sum of ln max(lambda, delta) over the eigenvalues."""
    return np.log(np.maximum(eigvalsh(b), delta)).sum(axis=-1)


def mat_power(b, p, what="matrix"):
    """Spectral power of positive definite matrices."""
    require_pd(b, what)
    return spectral(b, lambda s: s ** p)


def sqrt_pd(b):
    return mat_power(b, 0.5)


def psi(b, params):
    """Helmholtz free energy density (positive definite input only)."""
    require_pd(b, "argument of psi")
    mu, beta = params.mu, params.beta
    d = b - IDENTITY
    return (mu * (1 - beta) * (trace(b) - np.log(det(b)) - 2.0)
            + 0.5 * mu * beta * frob_norm2(d))


def psi_delta(b, params, delta):
    mu, beta = params.mu, params.beta
    return (mu * (1 - beta) * (trace(b) - trace_g_delta(b, delta) - 2.0)
            + 0.5 * mu * beta * frob_norm2(b - IDENTITY))


def psi_prime(b, params, delta=None):
    """Derivative of psi; with ``delta`` the inverse is taken of [B]_delta."""
    mu, beta = params.mu, params.beta
    if delta is None:
        require_pd(b, "argument of psi'")
        binv = inv(b)
    else:
        binv = inv(cutoff_delta(b, delta))
    return mu * (1 - beta) * (IDENTITY - binv) + mu * beta * (b - IDENTITY)


def elastic_stress(b, mu, beta):
    """T_e = 2 mu (1-beta)(B - I) + 2 mu beta (B^2 - B)."""
    return 2 * mu * (1 - beta) * (b - IDENTITY) + 2 * mu * beta * (square(b) - b)


def elastic_stress_delta(b, mu, beta, delta):
    bd = cutoff_delta(b, delta)
    return 2 * mu * (1 - beta) * (bd - IDENTITY) + 2 * mu * beta * (sym_product(b, bd) - b)


def chain_G(b, beta):
    """G(B) = beta B - (1-beta) B^{-1}."""
    return beta * b - (1 - beta) * inv(b)


def chain_theta(b, beta):
    """theta(B) = beta/2 |B|^2 + (1-beta) ln det B."""
    return 0.5 * beta * frob_norm2(b) + (1 - beta) * np.log(det(b))


def chain_G_delta(b, beta, delta):
    return beta * b - (1 - beta) * inv(cutoff_delta(b, delta))


THETA_POTENTIALS = ("log_cutoff", "g_delta")


def _trace_potential(potential):
    if potential == "log_cutoff":
        return trace_log_cutoff
    if potential == "g_delta":
        return trace_g_delta
    raise ValueError(f"potential must be one of {THETA_POTENTIALS}, got {potential!r}")


def chain_theta_delta(b, beta, delta, potential="log_cutoff"):
    """Potential paired with G_delta in the regularised chain rule.

    With ``"log_cutoff"`` it is beta/2 |B|^2 + (1-beta) tr ln [B]_delta, for
    which B : dG_delta = dtheta_delta holds exactly: the eigenvalue function
    s -> -1/max(s, delta) has s-weighted derivative d ln s above delta and 0
    below.  ``"g_delta"`` uses tr g_delta(B) instead; that pairing leaves a
    first-order edge residual wherever the cut-off is active, so the
    corrected means grow like 1/delta.
    """
    return 0.5 * beta * frob_norm2(b) + (1 - beta) * _trace_potential(potential)(b, delta)


def _full(b):
    return unpack(b)


def _edge_terms_pd(a, c, beta):
    """Chain-rule increment and residual along an edge with PD endpoints.

    The beta-parts of theta and G cancel exactly in the residual, and the
    log-determinant difference is formed from the increment, so the result
    stays accurate when ``a`` and ``c`` are close.
    """
    d = a - c
    ainv, cinv = inv(a), inv(c)
    x = np.einsum("...ij,...jk->...ik", _full(cinv), _full(d))
    tr_x = x[..., 0, 0] + x[..., 1, 1]
    det_x = x[..., 0, 0] * x[..., 1, 1] - x[..., 0, 1] * x[..., 1, 0]
    dlogdet = np.log1p(tr_x + det_x)
    r = (1 - beta) * (dlogdet - 0.5 * frob(d, ainv + cinv))
    adc = np.einsum("...ij,...jk,...kl->...il", _full(ainv), _full(d), _full(cinv))
    dg = beta * d + (1 - beta) * pack(adc)
    return dg, r


def _edge_terms_delta(a, c, beta, delta, potential="log_cutoff"):
    ai = inv(cutoff_delta(a, delta))
    ci = inv(cutoff_delta(c, delta))
    dg = beta * (a - c) - (1 - beta) * (ai - ci)
    tr = _trace_potential(potential)
    r = (1 - beta) * (tr(a, delta) - tr(c, delta) + 0.5 * frob(a + c, ai - ci))
    return dg, r


def _assemble(edges, dual, means):
    # Lambda_{ij} = sum_k (g^k)_i (e_k)_j M_k
    return np.einsum("...ki,...kj,...kc->...ijc", dual, edges, means)


def build_lambda(edges, dual, nodal, beta):
    """Discrete chain-rule tensor on a batch of elements.

    Parameters
    ----------
    edges, dual : (..., 2, 2)
        Edge vectors ``P^k - P^0`` and dual basis (row k is vector k).
    nodal : (..., 3, 3)
        Packed nodal values at the three vertices, all positive definite.

    Returns
    -------
    lam : (..., 2, 2, 3)
        ``lam[..., i, j, :]`` is the packed symmetric matrix Lambda_{ij}.
    flag : (...)
        Unresolved chain-rule residual (always zero here).
    """
    nodal = np.asarray(nodal, dtype=float)
    require_pd(nodal, "nodal value of B_h")
    means = []
    for k in (1, 2):
        a, c = nodal[..., k, :], nodal[..., 0, :]
        dg, r = _edge_terms_pd(a, c, beta)
        n2 = frob_norm2(dg)
        coef = np.divide(r, n2, out=np.zeros_like(r), where=n2 > 0)
        means.append(0.5 * (a + c) + coef[..., None] * dg)
    lam = _assemble(edges, dual, np.stack(means, axis=-2))
    return lam, np.zeros(lam.shape[:-3])


def build_lambda_delta(edges, dual, nodal, beta, delta, potential="log_cutoff"):
    """Regularised chain-rule tensor for merely symmetric nodal values.

    Edges whose endpoints both have eigenvalues >= delta are treated exactly
    as in :func:`build_lambda`.  Elsewhere G and theta use the cut-off, and
    the correction is skipped when the increment of G is below the
    round-off guard; the skipped residual is returned in ``flag``.
    ``potential`` selects theta_delta, see :func:`chain_theta_delta`.
    """
    nodal = np.asarray(nodal, dtype=float)
    lmin = min_eig(nodal)
    means = []
    flag = np.zeros(nodal.shape[:-2])
    for k in (1, 2):
        a, c = nodal[..., k, :], nodal[..., 0, :]
        safe = (lmin[..., k] >= delta) & (lmin[..., 0] >= delta)
        # PD formula evaluated on safe stand-ins where the edge is not safe
        a_s = np.where(safe[..., None], a, IDENTITY)
        c_s = np.where(safe[..., None], c, IDENTITY)
        dg_pd, r_pd = _edge_terms_pd(a_s, c_s, beta)
        dg_d, r_d = _edge_terms_delta(a, c, beta, delta, potential)
        dg = np.where(safe[..., None], dg_pd, dg_d)
        r = np.where(safe, r_pd, r_d)
        n2 = frob_norm2(dg)
        guard = np.sqrt(n2) < GUARD_EPS * (1.0 + np.sqrt(frob_norm2(a - c)))
        skip = np.where(safe, n2 == 0, guard)
        coef = np.divide(r, n2, out=np.zeros_like(r), where=~skip)
        flag = np.maximum(flag, np.where(skip, np.abs(r), 0.0))
        means.append(0.5 * (a + c) + coef[..., None] * dg)
    return _assemble(edges, dual, np.stack(means, axis=-2)), flag
