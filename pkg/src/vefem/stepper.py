"""Time stepping: Picard iteration over the linear Navier-Stokes and tensor solves."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import matfunc as mf
from .forms import Assembler
from .linsolve import solve_refined
from .params import ModelParams
from .spaces import FESpaces

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergence(SolverError):
    pass


class PDViolation(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    picard_tol: float = 1e-12
    picard_max_iter: int = 50
    regularization: Optional[float] = None
    fallback_on_pd_failure: bool = False
    fallback_delta: float = 1e-3

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be > 0")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if self.regularization is not None and not 0 < self.regularization < 1:
            raise ValueError("regularization delta must lie in (0, 1)")


@dataclass
class TimeStepState:
    n: int
    t: float
    v: np.ndarray
    p: np.ndarray
    B: np.ndarray
    picard_iterations: int = 0
    min_eig_B: float = float("nan")
    residual: float = 0.0
    regularized: bool = False

    def __post_init__(self):
        if np.isnan(self.min_eig_B):
            self.min_eig_B = float(np.min(mf.min_eig(self.B)))


@dataclass
class Sources:
    """Pointwise source terms ``momentum(x, t) -> (N, 2)``, ``tensor(x, t) -> (N, 3)``."""

    momentum: Callable
    tensor: Callable


class Stepper:
    """Advances the discrete system one time step at a time."""

    def __init__(self, spaces: FESpaces, params: ModelParams,
                 config: SolverConfig = SolverConfig(), sources: Optional[Sources] = None,
                 assembler: Optional[Assembler] = None):
        self.spaces = spaces
        self.params = params
        self.config = config
        self.sources = sources
        self.asm = assembler if assembler is not None else Assembler(spaces, params)
        self._leray_lu = None

    # --- initial data -------------------------------------------------------

    def initial_velocity(self, v0) -> np.ndarray:
        """Discrete Leray projection of a pointwise velocity onto V_{h,div}.

        ``v0`` is a callable ``points -> (N, 2)`` or a P2 coefficient array.
        """
        asm = self.asm
        if callable(v0):
            load = self._l2_load(v0)
        else:
            load = asm.mass_v @ np.ravel(v0)
        mat = asm.leray_matrix()
        if self._leray_lu is None:
            self._leray_lu = asm.ns_solver.factor(mat)
        rhs = np.zeros(asm.ns_size)
        rhs[: asm.n_free] = load[self.spaces.velocity_free]
        x = self._leray_lu.solve(rhs)
        return asm.split_ns(x)[0]

    def _l2_load(self, f):
        # degree-6 quadrature for (v0, w)
        sp_ = self.spaces
        pts, wq, bary = sp_.quad_points(6)
        from .spaces import p2_basis
        phi = p2_basis(bary)
        vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[0], -1, 2)
        loc = np.einsum("tq,qb,tqc->tbc", wq, phi, vals)
        out = np.zeros((sp_.n_p2, 2))
        np.add.at(out, sp_.p2_cells, loc)
        return out.ravel()

    def initial_state(self, v0, B0) -> TimeStepState:
        """State at t = 0 from a velocity (projected) and a tensor (interpolated)."""
        v = self.initial_velocity(v0)
        B = self.spaces.interpolate_tensor(B0) if callable(B0) else np.array(B0, dtype=float)
        return TimeStepState(0, 0.0, v, np.zeros(self.spaces.n_vertices), B)

    # --- one step -------------------------------------------------------------

    def _source_terms(self, t):
        if self.sources is None:
            return None, None
        load = self.asm.momentum_load(self.sources.momentum, t)
        fB = np.asarray(self.sources.tensor(self.spaces.mesh.vertices, t), dtype=float)
        return load, fB

    def residual_norm(self, prev: TimeStepState, v, p, B, delta=None) -> float:
        """Absolute l-infinity norm of the stacked nonlinear residual."""
        load, fB = self._source_terms(prev.t + self.params.dt)
        return self._residual(prev, v, p, B, load, fB, delta)

    def _residual(self, prev, v, p, B, load, fB, delta, momentum_op=None, lam=None):
        rv, rp, rb = self.asm.residual(prev.v, prev.B, v, p, B, load, fB, delta=delta,
                                       momentum_op=momentum_op, lam=lam)
        return float(max(np.abs(rv).max(initial=0.0), np.abs(rp).max(initial=0.0),
                         np.abs(rb).max(initial=0.0)))

    def step(self, prev: TimeStepState) -> TimeStepState:
        """One step of the unregularised scheme, with the configured fallback."""
        delta = self.config.regularization
        if delta is not None:
            return self.step_regularized(prev, delta)
        try:
            return self._picard(prev, None)
        except (PDViolation, NonConvergence) as exc:
            if not self.config.fallback_on_pd_failure:
                raise
            log.warning("step %d: %s; retrying with the regularised scheme (delta=%g)",
                        prev.n + 1, exc, self.config.fallback_delta)
            return self.step_regularized(prev, self.config.fallback_delta)

    def step_regularized(self, prev: TimeStepState, delta: float) -> TimeStepState:
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        return self._picard(prev, delta)

    def _picard(self, prev: TimeStepState, delta):
        asm, prm, cfg = self.asm, self.params, self.config
        n = prev.n + 1
        t = prev.t + prm.dt
        load, fB = self._source_terms(t)
        if delta is None:
            lmin0 = float(np.min(mf.min_eig(prev.B)))
            if not lmin0 > 0:
                raise PDViolation(f"step {n}: B at step {prev.n} has min eigenvalue "
                                  f"{lmin0:.3e}", step=n)
        ns_mat = asm.assemble_ns_matrix(prev.v)
        lu = asm.ns_solver.factor(ns_mat)
        mom = asm.momentum_operator(prev.v)

        B = prev.B
        lam = asm.lambda_field(B, delta)[0]
        res = np.inf
        for it in range(1, cfg.picard_max_iter + 1):
            if delta is None:
                stress = mf.elastic_stress(B, prm.mu, prm.beta)
            else:
                stress = mf.elastic_stress_delta(B, prm.mu, prm.beta, delta)
            x = lu.solve(asm.ns_rhs(prev.v, stress, load))
            v, p = asm.split_ns(x)
            if delta is None:
                sysb = asm.assemble_b(v, prev.v, prev.B, B, lam, fB)
            else:
                sysb = asm.assemble_regularized_b(v, prev.v, prev.B, B, lam, delta, fB)
            B = solve_refined(sysb.matrix, sysb.rhs).reshape(-1, 3)
            lmin = float(np.min(mf.min_eig(B)))
            if delta is None and not lmin > 0:
                raise PDViolation(f"step {n}, Picard iterate {it}: B has min eigenvalue "
                                  f"{lmin:.3e}", step=n)
            lam = asm.lambda_field(B, delta)[0]
            res = self._residual(prev, v, p, B, load, fB, delta, momentum_op=mom, lam=lam)
            if res < cfg.picard_tol:
                return TimeStepState(n, t, v, p, B, picard_iterations=it, min_eig_B=lmin,
                                     residual=res, regularized=delta is not None)
        raise NonConvergence(f"step {n}: Picard iteration stalled at residual {res:.3e} "
                             f"after {cfg.picard_max_iter} iterations", step=n)


@dataclass
class RunResult:
    final: TimeStepState
    ledger: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    min_eigs: list = field(default_factory=list)
    errors: object = None
    runtime_s: float = 0.0
    failed_step: Optional[int] = None
    states: list = field(default_factory=list)


def run(stepper: Stepper, state0: TimeStepState, n_steps: Optional[int] = None,
        hooks: Sequence[Callable] = (), ledger: bool = True, errors=None,
        keep_states: bool = False) -> RunResult:
    """Iterate ``stepper.step`` from ``state0`` for ``n_steps`` (default T/dt).

    ``hooks`` are called as ``hook(state, prev_state)`` after every step.  With
    an :class:`~vefem.mms.ErrorAccumulator` the errors against the exact
    solution are accumulated at every step n >= 1.
    """
    from .diagnostics import energy_row

    prm = stepper.params
    n_steps = prm.n_steps if n_steps is None else n_steps
    result = RunResult(final=state0, errors=errors)
    if keep_states:
        result.states.append(state0)
    prev = state0
    t0 = time.perf_counter()
    for _ in range(n_steps):
        try:
            state = stepper.step(prev)
        except SolverError as exc:
            result.failed_step = exc.step
            result.final = prev
            result.runtime_s = time.perf_counter() - t0
            exc.partial = result
            raise
        result.iterations.append(state.picard_iterations)
        result.min_eigs.append(state.min_eig_B)
        row = None
        if ledger:
            cfg = stepper.config
            delta = (cfg.regularization or cfg.fallback_delta) if state.regularized else None
            row = energy_row(state, prev, prm, stepper.asm, delta=delta)
            result.ledger.append(row)
        if errors is not None:
            errors.add(state.t, state.v, state.p, state.B)
        for hook in hooks:
            hook(state, prev)
        log.info("step %d t=%.6g iters=%d min_eig=%.6g%s", state.n, state.t,
                 state.picard_iterations, state.min_eig_B,
                 "" if row is None else f" energy={row['energy']:.12g}")
        if keep_states:
            result.states.append(state)
        prev = state
    result.final = prev
    result.runtime_s = time.perf_counter() - t0
    return result


def relaxation_state(spaces: FESpaces, B_value, v=None) -> TimeStepState:
    """Spatially constant tensor and (default) zero velocity."""
    B = np.tile(np.asarray(B_value, dtype=float), (spaces.n_vertices, 1))
    vv = np.zeros((spaces.n_p2, 2)) if v is None else v
    return TimeStepState(0, 0.0, vv, np.zeros(spaces.n_vertices), B)


__all__ = ["SolverConfig", "TimeStepState", "Sources", "Stepper", "RunResult", "run",
           "NonConvergence", "PDViolation", "SolverError", "relaxation_state", "replace"]
