"""Experiment drivers: manufactured-solution runs, convergence tables, the
zero-source stability run and the chain-rule tensor checks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import matfunc as mf
from . import mms
from .diagnostics import verify_step
from .forms import Assembler
from .mesh import build_crisscross
from .params import ModelParams
from .spaces import FESpaces
from .stepper import RunResult, SolverConfig, Sources, Stepper, run

log = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = (
    "level", "h", "dt", "err_v_LinfL2", "err_v_L2H1", "err_B_LinfL2", "err_B_L2H1",
    "eoc_v_LinfL2", "eoc_v_L2H1", "eoc_B_LinfL2", "eoc_B_L2H1", "avg_picard_iters",
    "min_eigB", "runtime_s",
)
_EOC_KEYS = ("v_LinfL2", "v_L2H1", "B_LinfL2", "B_L2H1")


def mms_sources(params: ModelParams) -> Sources:
    return Sources(lambda x, t: mms.sources(x, t, params)[0],
                   lambda x, t: mms.sources(x, t, params)[1])


def manufactured_run(k: int, level: int, params: ModelParams = ModelParams(),
                     solver: SolverConfig = SolverConfig(), sources: bool = True,
                     ledger: bool = True, hooks=()) -> tuple:
    """Trajectory from the manufactured initial data on mesh level ``k`` with
    dt = (T/5) 2^-level.  Returns ``(stepper, initial state, RunResult)``; the
    error accumulator is ``result.errors``."""
    params = replace(params, dt=ModelParams.dt_for_level(level, params.T))
    spaces = FESpaces(build_crisscross(k))
    stepper = Stepper(spaces, params, solver, mms_sources(params) if sources else None)
    state0 = stepper.initial_state(lambda x: mms.velocity(x, 0.0),
                                   lambda x: mms.tensor(x, 0.0))
    errors = mms.ErrorAccumulator(spaces, params.dt) if sources else None
    result = run(stepper, state0, errors=errors, ledger=ledger, hooks=hooks)
    return stepper, state0, result


def convergence_rows(levels: Sequence[tuple], params: ModelParams = ModelParams(),
                     solver: SolverConfig = SolverConfig(), mode: str = "temporal",
                     on_row=None) -> list:
    """One row per ``(k, level)`` pair; EOCs against the previous row.

    In temporal mode each row after the first also carries
    ``diff_v_LinfL2``, the largest L2 distance between the velocities of this
    and the previous time level at the coarsest level's time points, and
    ``eoc_diff_v_LinfL2`` for consecutive differences.  This isolates the
    time-discretisation error from the spatial error on the fixed mesh.

    ``on_row(row)`` is called as soon as a row is complete, so a failing
    level still leaves the finished rows behind.
    """
    rows = []
    prev = None
    prev_snaps = None
    coarse_dt = ModelParams.dt_for_level(min(lv for _, lv in levels), params.T)
    for k, level in levels:
        t0 = time.perf_counter()
        snaps = {}

        def snapshot(state, _prev):
            m = state.t / coarse_dt
            if abs(m - round(m)) < 1e-9:
                snaps[int(round(m))] = state.v.copy()

        stepper, _, res = manufactured_run(k, level, params, solver, ledger=False,
                                           hooks=(snapshot,))
        err = res.errors.summary()
        row = {"level": level if mode == "temporal" else k,
               "h": stepper.spaces.mesh.h, "dt": stepper.params.dt}
        if mode == "temporal" and prev_snaps is not None:
            mass = stepper.asm.mass_v
            diffs = [np.ravel(snaps[m] - prev_snaps[m]) for m in snaps if m in prev_snaps]
            row["diff_v_LinfL2"] = max(math.sqrt(max(d @ (mass @ d), 0.0)) for d in diffs)
            row["eoc_diff_v_LinfL2"] = (None if "diff_v_LinfL2" not in prev
                                        else mms.eoc(prev["diff_v_LinfL2"], row["diff_v_LinfL2"]))
        prev_snaps = snaps if mode == "temporal" else None
        for key in _EOC_KEYS:
            row[f"err_{key}"] = err[f"err_{key}"]
            row[f"eoc_{key}"] = (None if prev is None
                                 else mms.eoc(prev[f"err_{key}"], err[f"err_{key}"]))
        row.update(err_v_L2H1_full=err["err_v_L2H1_full"],
                   err_B_L2H1_full=err["err_B_L2H1_full"], err_p_LinfL2=err["err_p_LinfL2"],
                   avg_picard_iters=float(np.mean(res.iterations)),
                   max_picard_iters=int(max(res.iterations)),
                   min_eigB=float(min(res.min_eigs)), runtime_s=time.perf_counter() - t0,
                   k=k, l=level)
        rows.append(row)
        if on_row is not None:
            on_row(row)
        log.info("level k=%d l=%d done: %s", k, level,
                 ", ".join(f"{c}={row[c]:.4e}" for c in CONVERGENCE_COLUMNS[3:7]))
        prev = row
    return rows


def flattened_suffix(eocs: Sequence[float], low: float = 0.8) -> int:
    """Index from which the temporal EOC sequence counts as flattened.

    A pair is flattened when its EOC lies below ``low`` and every later EOC
    is no larger (the spatial error floor is reached).  The first pair is
    never treated as flattened.
    """
    start = len(eocs)
    for i in range(len(eocs) - 1, 0, -1):
        later = eocs[i + 1:]
        if eocs[i] < low and all(e <= eocs[i] + 1e-12 for e in later):
            start = i
        else:
            break
    return start


def stability_run(k: int = 4, level: int = 4, params: ModelParams = ModelParams(),
                  solver: SolverConfig = SolverConfig(), tol: float = 1e-8):
    """Zero-source run from the manufactured initial data with per-step checks."""
    stepper, state0, res = manufactured_run(k, level, params, solver, sources=False)
    for row in res.ledger:
        status, margin = verify_step(row, tol)
        row["verify"] = status
        row["margin"] = margin
    energies = [state_energy(stepper, state0)] + [r["energy"] for r in res.ledger]
    return stepper, state0, res, energies


def state_energy(stepper: Stepper, state) -> float:
    from .diagnostics import free_energy, kinetic
    return kinetic(state.v, stepper.asm) + free_energy(state.B, stepper.params,
                                                        stepper.spaces.lumped_weights)


# --- chain-rule tensor checks ----------------------------------------------------

def random_pd_field(rng: np.random.Generator, n: int, spread: float = 1.5) -> np.ndarray:
    """Packed random SPD matrices with log-eigenvalues uniform in [-spread, spread]."""
    lam = np.exp(rng.uniform(-spread, spread, size=(n, 2)))
    ang = rng.uniform(0, np.pi, size=n)
    c, s = np.cos(ang), np.sin(ang)
    return np.stack([lam[:, 0] * c * c + lam[:, 1] * s * s, (lam[:, 0] - lam[:, 1]) * c * s,
                     lam[:, 0] * s * s + lam[:, 1] * c * c], axis=-1)


def chain_rule_functional(asm: Assembler, v: np.ndarray, B: np.ndarray):
    """``sum_ij (v_i Lambda_ij(B), d_j I_h G(B))`` and the sum of the absolute
    values of its nodal contributions."""
    lam, _ = asm.lambda_field(B)
    G = mf.chain_G(B, asm.params.beta)
    terms = asm.lambda_convection(v, lam) * np.array([1.0, 2.0, 1.0]) * G
    return float(terms.sum()), float(np.abs(terms).sum())


def verify_lambda(k: int = 3, trials: int = 100, seed: int = 0,
                  params: ModelParams = ModelParams(), tol: float = 1e-12) -> list:
    """Random PD tensor fields and discretely divergence-free velocities."""
    rng = np.random.default_rng(seed)
    spaces = FESpaces(build_crisscross(k))
    stepper = Stepper(spaces, params)
    rows = []
    for trial in range(trials):
        B = random_pd_field(rng, spaces.n_vertices)
        raw = rng.standard_normal((spaces.n_p2, 2))
        raw[spaces.p2_boundary] = 0.0
        v = stepper.initial_velocity(raw)
        value, scale = chain_rule_functional(stepper.asm, v, B)
        bound = tol * (1.0 + scale)
        rows.append({"trial": trial, "functional": value, "scale": scale, "bound": bound,
                     "passed": abs(value) <= bound})
    return rows


def smooth_pd_field(x):
    """A fixed smooth SPD field used for the consistency study."""
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([2.0 + np.sin(np.pi * x1) * np.cos(np.pi * x2),
                     0.5 * np.sin(np.pi * (x1 + x2)),
                     1.5 + x1 * x2 ** 2], axis=-1)


def lambda_consistency(ks: Sequence[int] = (3, 4, 5, 6), field=smooth_pd_field,
                       params: ModelParams = ModelParams()) -> tuple:
    """max_K |Lambda_ij - delta_ij mean_K(B)| per mesh level and the fitted order."""
    rows = []
    for k in ks:
        mesh = build_crisscross(k)
        spaces = FESpaces(mesh)
        B = spaces.interpolate_tensor(field)
        nodal = B[spaces.p1_cells]
        lam, _ = mf.build_lambda(mesh.edge_vectors, mesh.dual_vectors, nodal, params.beta)
        mean = nodal.mean(axis=1)
        diff = lam - np.eye(2)[None, :, :, None] * mean[:, None, None, :]
        err = float(np.sqrt(np.sum(mf.frob_norm2(diff), axis=(1, 2))).max())
        rows.append({"k": k, "h": mesh.h, "error": err})
    hs = np.log([r["h"] for r in rows])
    es = np.log([r["error"] for r in rows])
    slope = float(np.polyfit(hs, es, 1)[0]) if len(rows) > 1 else math.nan
    return rows, slope


__all__ = ["CONVERGENCE_COLUMNS", "manufactured_run", "convergence_rows", "flattened_suffix",
           "stability_run", "verify_lambda", "lambda_consistency", "chain_rule_functional",
           "random_pd_field", "smooth_pd_field", "mms_sources", "RunResult"]
