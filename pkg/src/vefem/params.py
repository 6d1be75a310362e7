from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Invalid or out-of-range configuration value."""


@dataclass(frozen=True)
class ModelParams:
    """Model and time-discretisation parameters.

    Defaults are the values of the manufactured-solution experiment
    (eta = delta1 = mu = lam = 1, beta = 1/2, delta2 = 0, T = 0.1).
    """

    eta: float = 1.0
    mu: float = 1.0
    beta: float = 0.5
    lam: float = 1.0
    delta1: float = 1.0
    delta2: float = 0.0
    dt: float = 0.1 / 5 / 2 ** 3
    T: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or v != v:
                raise ConfigError(f"{f.name} must be a real number, got {v!r}")
        positive = {"eta": self.eta, "mu": self.mu, "lam": self.lam, "dt": self.dt, "T": self.T}
        for name, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{name} must be > 0, got {v}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.delta1 < 0 or self.delta2 < 0:
            raise ConfigError("delta1 and delta2 must be >= 0")

    @staticmethod
    def dt_for_level(level: int, T: float = 0.1) -> float:
        """Time step (T/5) 2^-level of the convergence studies."""
        return T / 5 / 2 ** level

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))
