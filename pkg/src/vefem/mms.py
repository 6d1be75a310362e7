"""Manufactured solution on the unit square, its source terms and error norms.

    v(x, t) = e^{-t} (f(x1) f'(x2) / 2, -f'(x1) f(x2) / 2),  f(s) = s^2 (s - 1)^2
    p(x, t) = e^{-t} (2 x1 - 1)(2 x2 - 1)
    B(x, t) = I + s(x, t) diag(1, -1),  s = e^{-t} cos(pi x1) cos(pi x2) / 20
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import matfunc as mf
from .params import ModelParams

_PI = np.pi
_D0 = np.array([1.0, 0.0, -1.0])


def _f(s):
    return s * s * (s - 1) ** 2


def _f1(s):
    return 2 * s * (s - 1) * (2 * s - 1)


def _f2(s):
    return 12 * s * s - 12 * s + 2


def _f3(s):
    return 24 * s - 12


def _xy(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def velocity(x, t):
    x1, x2 = _xy(x)
    e = 0.5 * math.exp(-t)
    return np.stack([e * _f(x1) * _f1(x2), -e * _f1(x1) * _f(x2)], axis=-1)


def velocity_grad(x, t):
    """``grad[..., c, d] = d v_c / d x_d``."""
    x1, x2 = _xy(x)
    e = 0.5 * math.exp(-t)
    g11 = e * _f1(x1) * _f1(x2)
    g12 = e * _f(x1) * _f2(x2)
    g21 = -e * _f2(x1) * _f(x2)
    return np.stack([np.stack([g11, g12], -1), np.stack([g21, -g11], -1)], -2)


def velocity_laplacian(x, t):
    x1, x2 = _xy(x)
    e = 0.5 * math.exp(-t)
    return np.stack([e * (_f2(x1) * _f1(x2) + _f(x1) * _f3(x2)),
                     -e * (_f3(x1) * _f(x2) + _f1(x1) * _f2(x2))], axis=-1)


def pressure(x, t):
    x1, x2 = _xy(x)
    return math.exp(-t) * (2 * x1 - 1) * (2 * x2 - 1)


def pressure_grad(x, t):
    x1, x2 = _xy(x)
    e = math.exp(-t)
    return np.stack([2 * e * (2 * x2 - 1), 2 * e * (2 * x1 - 1)], axis=-1)


def _s(x, t):
    x1, x2 = _xy(x)
    return math.exp(-t) / 20 * np.cos(_PI * x1) * np.cos(_PI * x2)


def _s_grad(x, t):
    x1, x2 = _xy(x)
    e = -_PI * math.exp(-t) / 20
    return np.stack([e * np.sin(_PI * x1) * np.cos(_PI * x2),
                     e * np.cos(_PI * x1) * np.sin(_PI * x2)], axis=-1)


def tensor(x, t):
    """Packed B(x, t)."""
    return mf.IDENTITY + _s(x, t)[..., None] * _D0


def tensor_grad(x, t):
    """``(..., 3, 2)``: gradient of each packed component."""
    return _D0[:, None] * _s_grad(x, t)[..., None, :]


def exact(x, t):
    return velocity(x, t), pressure(x, t), tensor(x, t)


def sources(x, t, params: ModelParams):
    """Momentum and tensor sources that make the fields above an exact solution."""
    mu, beta = params.mu, params.beta
    v = velocity(x, t)
    gv = velocity_grad(x, t)
    s = _s(x, t)
    gs = _s_grad(x, t)

    # T_e(B) = 2 mu s D0 + 2 mu beta s^2 I for B = I + s D0
    div_t = np.stack([(2 * mu + 4 * mu * beta * s) * gs[..., 0],
                      (-2 * mu + 4 * mu * beta * s) * gs[..., 1]], axis=-1)
    conv = np.einsum("...d,...cd->...c", v, gv)
    f_v = (-v + conv - params.eta * velocity_laplacian(x, t)
           + pressure_grad(x, t) - div_t)

    b = tensor(x, t)
    bfull = mf.unpack(b)
    stretch = gv @ bfull + bfull @ np.swapaxes(gv, -1, -2)
    adv = np.einsum("...d,...d->...", v, gs)
    lap_s = -2 * _PI ** 2 * s
    f_b = ((-s + adv + params.delta1 * s - params.lam * lap_s)[..., None] * _D0
           + params.delta2 * (mf.square(b) - b) - mf.pack(stretch))
    return f_v, f_b


@dataclass
class ExactSolution:
    """Bundle of the manufactured fields, usable as initial data and sources."""

    params: ModelParams

    def velocity(self, x, t):
        return velocity(x, t)

    def pressure(self, x, t):
        return pressure(x, t)

    def tensor(self, x, t):
        return tensor(x, t)

    def momentum_source(self, x, t):
        return sources(x, t, self.params)[0]

    def tensor_source(self, x, t):
        return sources(x, t, self.params)[1]


def eoc(coarse: float, fine: float, ratio: float = 2.0):
    """Observed order between two levels; ``None`` if either error is not positive."""
    if not (coarse > 0 and fine > 0):
        return None
    return math.log(coarse / fine) / math.log(ratio)


@dataclass
class ErrorAccumulator:
    """Streams the space-time error norms over a trajectory.

    L^inf(L^2) is the max over steps n >= 1, L^2(H^1) is
    ``sqrt(dt * sum_n ||.||^2)``; both the gradient seminorm and the full H^1
    norm are kept.
    """

    spaces: object
    dt: float
    degree: int = 6
    v_linf_l2: float = 0.0
    B_linf_l2: float = 0.0
    p_linf_l2: float = 0.0
    _v_h1s: float = 0.0
    _v_l2sq: float = 0.0
    _B_h1s: float = 0.0
    _B_l2sq: float = 0.0
    steps: int = 0
    history: list = field(default_factory=list)

    def add(self, t, v, p, B, velocity_fn=velocity, velocity_grad_fn=velocity_grad,
            pressure_fn=pressure, tensor_fn=tensor, tensor_grad_fn=tensor_grad):
        sp_ = self.spaces
        pts, wq, _ = sp_.quad_points(self.degree)
        vh, gvh = sp_.eval_p2_vector(v, self.degree)
        ev = vh - velocity_fn(pts, t)
        egv = gvh - velocity_grad_fn(pts, t)
        bh, gbh = sp_.eval_p1(B, self.degree)
        eb = bh - tensor_fn(pts, t)
        egb = gbh[:, None, :, :] - tensor_grad_fn(pts, t)
        ph, _ = sp_.eval_p1(p, self.degree)
        ep = ph - pressure_fn(pts, t)

        wfro = np.array([1.0, 2.0, 1.0])
        v_l2 = float(np.sum(wq * np.sum(ev ** 2, -1)))
        v_h1 = float(np.sum(wq * np.sum(egv ** 2, (-1, -2))))
        b_l2 = float(np.sum(wq * np.sum(wfro * eb ** 2, -1)))
        b_h1 = float(np.sum(wq * np.sum(wfro[:, None] * egb ** 2, (-1, -2))))
        p_l2 = float(np.sum(wq * ep ** 2))

        self.v_linf_l2 = max(self.v_linf_l2, math.sqrt(v_l2))
        self.B_linf_l2 = max(self.B_linf_l2, math.sqrt(b_l2))
        self.p_linf_l2 = max(self.p_linf_l2, math.sqrt(p_l2))
        self._v_h1s += v_h1
        self._v_l2sq += v_l2
        self._B_h1s += b_h1
        self._B_l2sq += b_l2
        self.steps += 1
        self.history.append((t, math.sqrt(v_l2), math.sqrt(v_h1), math.sqrt(b_l2),
                             math.sqrt(b_h1), math.sqrt(p_l2)))

    @property
    def v_l2_h1(self):
        return math.sqrt(self.dt * self._v_h1s)

    @property
    def v_l2_h1_full(self):
        return math.sqrt(self.dt * (self._v_h1s + self._v_l2sq))

    @property
    def B_l2_h1(self):
        return math.sqrt(self.dt * self._B_h1s)

    @property
    def B_l2_h1_full(self):
        return math.sqrt(self.dt * (self._B_h1s + self._B_l2sq))

    def summary(self) -> dict:
        return {"err_v_LinfL2": self.v_linf_l2, "err_v_L2H1": self.v_l2_h1,
                "err_B_LinfL2": self.B_linf_l2, "err_B_L2H1": self.B_l2_h1,
                "err_v_L2H1_full": self.v_l2_h1_full, "err_B_L2H1_full": self.B_l2_h1_full,
                "err_p_LinfL2": self.p_linf_l2}
