"""Discrete energy ledger, positivity monitoring and energy of initial data.

Every ledger row is in time-step-multiplied form: the dissipation terms carry
the factor dt, so ``lhs <= rhs`` is the per-step energy inequality

    E(v^n, B^n) + 1/2 |v^n - v^{n-1}|^2 + mu beta / 2 |B^n - B^{n-1}|_h^2
        + dt * D^n  <=  E(v^{n-1}, B^{n-1})

with E = 1/2 |v|^2 + <psi(B), 1>_h.  The tensor increment carries the factor
beta: convexity of psi only yields the quadratic part of the Frobenius
term, the log-det part contributes no positive increment.
"""

from __future__ import annotations

import numpy as np

from . import matfunc as mf
from .params import ModelParams

LEDGER_COLUMNS = (
    "step", "t", "kinetic", "kinetic_increment", "free_energy", "tensor_increment",
    "viscous", "diffusion_B", "diffusion_logdet", "relax_beta_delta1", "relax_beta_delta2",
    "relax_1mbeta_delta1", "relax_1mbeta_delta2", "energy", "lhs", "rhs", "slack",
    "picard_iterations", "min_eig_B",
)
_FROB_W = np.array([1.0, 2.0, 1.0])


def lumped_norm2(b, weights):
    """<b, b>_h for packed nodal tensors."""
    return float(np.sum(weights * mf.frob_norm2(b)))


def kinetic(v, asm) -> float:
    vf = np.ravel(v)
    return 0.5 * float(vf @ (asm.mass_v @ vf))


def velocity_dissipation(v, asm) -> float:
    vf = np.ravel(v)
    return float(vf @ (asm.stiff_v @ vf))


def tensor_grad_norm2(B, asm) -> float:
    """|grad B|^2 for a P1 tensor field, Frobenius weights (1, 2, 1)."""
    kb = asm.stiff_p1 @ B
    return float(np.sum(_FROB_W * np.sum(B * kb, axis=0)))


def scalar_grad_norm2(f, asm) -> float:
    return float(f @ (asm.stiff_p1 @ f))


def free_energy(B, params: ModelParams, weights, delta=None) -> float:
    if delta is None:
        return float(np.sum(weights * mf.psi(B, params)))
    return float(np.sum(weights * mf.psi_delta(B, params, delta)))


def min_eig_field(B):
    """Smallest nodal eigenvalue and the vertex where it occurs."""
    lmin = mf.min_eig(B)
    i = int(np.argmin(lmin))
    return float(lmin[i]), i


def _dissipation(B, params, asm, delta):
    w = asm.w
    mu, beta = params.mu, params.beta
    out = {}
    out["diffusion_B"] = mu * beta * params.lam * tensor_grad_norm2(B, asm)
    if delta is None:
        logdet = np.log(mf.det(B))
        bd = B
        d2_beta = mf.spectral(B, lambda s: s ** 1.5 - s ** 0.5)
        d1_1mb = mf.spectral(B, lambda s: s ** 0.5 - s ** -0.5)
    else:
        bd = mf.cutoff_delta(B, delta)
        logdet = np.log(mf.det(bd))
        # (B - I)[B]_delta^{1/2} is not symmetric: |X|^2 = tr((B - I)^2 [B]_delta)
        d2_beta = None
        d1_1mb = mf.spectral(bd, lambda s: s ** 0.5 - s ** -0.5)
    out["diffusion_logdet"] = 0.5 * mu * (1 - beta) * params.lam * scalar_grad_norm2(logdet, asm)
    out["relax_beta_delta1"] = mu * beta * params.delta1 * lumped_norm2(bd - mf.IDENTITY, w)
    if params.delta2:
        if d2_beta is not None:
            q = lumped_norm2(d2_beta, w)
        else:
            q = float(np.sum(w * mf.frob(mf.square(B - mf.IDENTITY), bd)))
        out["relax_beta_delta2"] = mu * beta * params.delta2 * q
        out["relax_1mbeta_delta2"] = (mu * (1 - beta) * params.delta2
                                      * lumped_norm2(bd - mf.IDENTITY, w))
    else:
        out["relax_beta_delta2"] = 0.0
        out["relax_1mbeta_delta2"] = 0.0
    out["relax_1mbeta_delta1"] = mu * (1 - beta) * params.delta1 * lumped_norm2(d1_1mb, w)
    return out


def energy_row(state, prev, params: ModelParams, asm, delta=None) -> dict:
    """One ledger row for the step ``prev -> state``."""
    w = asm.w
    dt = params.dt
    kin = kinetic(state.v, asm)
    kin_prev = kinetic(prev.v, asm)
    kin_inc = kinetic(np.ravel(state.v) - np.ravel(prev.v), asm)
    fe = free_energy(state.B, params, w, delta)
    fe_prev = free_energy(prev.B, params, w, delta)
    t_inc = 0.5 * params.mu * params.beta * lumped_norm2(state.B - prev.B, w)
    row = {"step": state.n, "t": state.t, "kinetic": kin, "kinetic_increment": kin_inc,
           "free_energy": fe, "tensor_increment": t_inc,
           "viscous": params.eta * velocity_dissipation(state.v, asm)}
    diss = _dissipation(state.B, params, asm, delta)
    row.update(diss)
    total = row["viscous"] + sum(diss.values())
    lhs = kin + kin_inc + fe + t_inc + dt * total
    rhs = kin_prev + fe_prev
    row.update(energy=kin + fe, lhs=lhs, rhs=rhs, slack=rhs - lhs,
               picard_iterations=state.picard_iterations,
               min_eig_B=min_eig_field(state.B)[0])
    return {k: row[k] for k in LEDGER_COLUMNS}


def verify_step(row: dict, tol: float = 1e-8, sources_active: bool = False):
    """``(status, margin)``; status is "pass", "fail" or "not applicable".

    The inequality only holds without body forces, so with active sources
    the check is reported as not applicable.
    """
    margin = row["rhs"] + tol * (1.0 + abs(row["rhs"])) - row["lhs"]
    if sources_active:
        return "not applicable", margin
    return ("pass" if margin >= 0 else "fail"), margin


def initial_energy(spaces, v0, B0_nodal, params: ModelParams, B0_fn=None, degree=6) -> dict:
    """Energy of the discrete initial data and, given ``B0_fn``, of the
    continuous tensor by quadrature of psi."""
    from .forms import Assembler

    asm = Assembler(spaces, params)
    kin = kinetic(v0, asm)
    out = {"kinetic": kin,
           "free_energy_lumped": free_energy(B0_nodal, params, spaces.lumped_weights)}
    out["energy_lumped"] = kin + out["free_energy_lumped"]
    if B0_fn is not None:
        pts, wq, _ = spaces.quad_points(degree)
        vals = np.asarray(B0_fn(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2] + (3,))
        out["free_energy_quadrature"] = float(np.sum(wq * mf.psi(vals, params)))
        out["energy_quadrature"] = kin + out["free_energy_quadrature"]
    return out
