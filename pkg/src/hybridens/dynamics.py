"""Synthetic chaotic ground truth: Lorenz-96 rings on the latitude bands.

Each (variable, latitude) band is a cyclic Lorenz-96 ring over the
longitudes. Neighbouring bands are coupled diffusively with strength
``coupling`` (no-flux at the polar bands) and, with more than one
variable, each variable is nudged toward the next one with the same
strength.

Time is measured in model hours; one Lorenz time unit is 120 hours, so
the 6-hour output interval equals the customary 0.05 time units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import l96_integrate, l96_tendency as _kernel_tendency
from .sphere import SphericalGrid

__all__ = [
    "HOURS_PER_TIME_UNIT",
    "ToySystemConfig",
    "Trajectory",
    "BlowUpError",
    "l96_tendency",
    "integrate",
    "rk4",
    "make_dataset",
]

HOURS_PER_TIME_UNIT = 120.0
BLOW_UP = 1e3


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ToySystemConfig:
    forcing: float = 8.0
    n_vars: int = 1
    coupling: float = 0.05
    dt_int: float = 1.2
    output_interval: float = 6.0
    grid: SphericalGrid = field(default_factory=SphericalGrid)
    names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.names and len(self.names) != self.n_vars:
            raise ValueError(f"dynamics.variables lists {len(self.names)} names for {self.n_vars} variables")
        if len(set(self.names)) != len(self.names):
            raise ValueError("dynamics.variables names must be unique")
        if not self.forcing >= 0:
            raise ValueError(f"dynamics.forcing must be >= 0, got {self.forcing}")
        if self.n_vars < 1:
            raise ValueError(f"dynamics.n_vars must be >= 1, got {self.n_vars}")
        if not 0 < self.dt_int <= self.output_interval:
            raise ValueError("dynamics.dt_int must satisfy 0 < dt_int <= output_interval")
        n_sub = self.output_interval / self.dt_int
        if abs(n_sub - round(n_sub)) > 1e-9:
            raise ValueError("dynamics.output_interval must be a whole multiple of dt_int")

    @property
    def n_sub(self) -> int:
        return int(round(self.output_interval / self.dt_int))

    @property
    def variables(self) -> tuple:
        return self.names or tuple(f"x{k}" for k in range(self.n_vars))

    @property
    def state_shape(self) -> tuple:
        return (self.n_vars,) + self.grid.shape


@dataclass
class Trajectory:
    states: np.ndarray  # (n_times, n_vars, n_lat, n_lon)
    seed: int | None = None
    interval: float = 6.0
    start_index: int = 0

    def __len__(self):
        return len(self.states)


def l96_tendency(x, forcing: float) -> np.ndarray:
    """Plain Lorenz-96 right-hand side for a single ring."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise ValueError("Lorenz-96 ring needs at least 4 sites")
    return _kernel_tendency(x[None, None, :], forcing, 0.0)[0, 0]


def rk4(f, x0, dt: float, n_steps: int) -> np.ndarray:
    """Classical fourth-order Runge-Kutta for ``dx/dt = f(x)``; returns all states."""
    x = np.array(x0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def integrate(cfg: ToySystemConfig, initial, n_steps: int, seed: int | None = None) -> Trajectory:
    """RK4 at ``dt_int`` sampled every output interval; ``n_steps`` outputs after the initial state."""
    x0 = np.asarray(initial, dtype=np.float64)
    if x0.shape != cfg.state_shape:
        raise ValueError(f"initial state shape {x0.shape} != {cfg.state_shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state is not finite")
    dt = cfg.dt_int / HOURS_PER_TIME_UNIT
    states, failed = l96_integrate(x0, cfg.forcing, cfg.coupling, dt, int(n_steps), cfg.n_sub, BLOW_UP)
    if failed >= 0:
        raise BlowUpError(f"state exceeded |x| > {BLOW_UP:g} at output step {failed}")
    return Trajectory(states, seed, cfg.output_interval)


def make_dataset(cfg: ToySystemConfig, n_train: int, n_val: int, n_test: int, seed: int,
                 spinup: int = 500) -> dict:
    """One long spun-up run split chronologically into train/val/test."""
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("train, validation and test lengths must all be >= 1")
    if spinup < 500:
        raise ValueError("spin-up must be at least 500 output steps")
    rng = np.random.default_rng(seed)
    x0 = cfg.forcing + 0.01 * rng.standard_normal(cfg.state_shape)
    traj = integrate(cfg, x0, spinup + n_train + n_val + n_test, seed)
    states = traj.states[spinup + 1:]
    bounds = np.cumsum([0, n_train, n_val, n_test])
    return {
        name: Trajectory(states[lo:hi].copy(), seed, cfg.output_interval, spinup + 1 + lo)
        for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:])
    }
