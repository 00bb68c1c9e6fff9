"""AR(1)-correlated random fields and flow-dependent multiplicative perturbations.

State fields are arrays of shape ``(n_vars, n_lat, n_lon)``. A single
random field ``r_t`` is shared by every variable and scaled per variable
by its amplitude ``mu``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .sphere import (
    SphericalGrid,
    SpectrumParams,
    angular_distance,
    isotropic_covariance,
    real_harmonic_basis,
    sample_innovations,
    synthesize_batch,
)

__all__ = [
    "AR1Config",
    "RandomFieldState",
    "PerturbConfig",
    "StatePair",
    "ar1_init",
    "ar1_step",
    "ar1_series",
    "apply_sppt",
    "analytic_point_variance",
    "analytic_covariance",
    "build_sigma_x",
    "input_covariance",
    "apply_gaussian_baseline",
]


@dataclass(frozen=True)
class AR1Config:
    """Discretized Ornstein-Uhlenbeck step; ``eta = inf`` freezes the field."""

    dt: float = 6.0
    eta: float = 24.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"ar1.dt must be > 0, got {self.dt}")
        if not self.eta > 0:
            raise ValueError(f"ar1.eta must be > 0, got {self.eta}")
        if not self.alpha > 0:
            raise ValueError(f"ar1.dt / ar1.eta = {self.dt / self.eta:g} underflows the AR(1) coefficient")

    @property
    def alpha(self) -> float:
        return math.exp(-self.dt / self.eta)

    @property
    def beta(self) -> float:
        return math.sqrt(1.0 - self.alpha**2)


@dataclass
class RandomFieldState:
    grid: SphericalGrid
    values: np.ndarray
    spectrum: SpectrumParams
    ar1: AR1Config
    rng: np.random.Generator
    step: int = 0


@dataclass(frozen=True)
class PerturbConfig:
    mu: dict = field(default_factory=dict)
    clip: float | None = 1.0

    def __post_init__(self):
        for name, value in self.mu.items():
            if not value >= 0:
                raise ValueError(f"perturbation.mu.{name} must be >= 0, got {value}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError(f"perturbation.clip must be > 0 or null, got {self.clip}")

    def amplitudes(self, variables) -> np.ndarray:
        missing = [v for v in variables if v not in self.mu]
        if missing:
            raise KeyError(f"no perturbation amplitude mu for variable {missing[0]!r}")
        return np.array([float(self.mu[v]) for v in variables])


@dataclass
class StatePair:
    """Two consecutive states ``X_{t-1}`` and ``X_t``."""

    x_prev: np.ndarray
    x_curr: np.ndarray
    variables: tuple = ("x",)

    def __post_init__(self):
        self.x_prev = np.asarray(self.x_prev, dtype=np.float64)
        self.x_curr = np.asarray(self.x_curr, dtype=np.float64)
        self.variables = tuple(self.variables)
        if self.x_prev.shape != self.x_curr.shape:
            raise ValueError(f"state shapes differ: {self.x_prev.shape} vs {self.x_curr.shape}")
        if self.x_curr.ndim != 3 or self.x_curr.shape[0] != len(self.variables):
            raise ValueError(
                f"states must be (n_vars, n_lat, n_lon) with {len(self.variables)} variables, "
                f"got {self.x_curr.shape}"
            )

    @property
    def increment(self) -> np.ndarray:
        return self.x_curr - self.x_prev

    def flat_input(self) -> np.ndarray:
        """Network input: ``X_{t-1}`` then ``X_t``, each flattened var/lat/lon."""
        return np.concatenate([self.x_prev.ravel(), self.x_curr.ravel()])

    def var_index(self, variable) -> int:
        try:
            return self.variables.index(variable)
        except ValueError:
            raise KeyError(f"unknown variable {variable!r}") from None


def ar1_init(spectrum: SpectrumParams, ar1: AR1Config, rng: np.random.Generator,
             grid: SphericalGrid, mode: str = "stationary") -> RandomFieldState:
    if mode == "zero":
        values = np.zeros(grid.shape)
    elif mode == "stationary":
        xi = sample_innovations(spectrum, rng, 1)[0]
        values = synthesize_batch(xi, spectrum, real_harmonic_basis(spectrum.L, grid)).reshape(grid.shape)
    else:
        raise ValueError(f"unknown init mode {mode!r}; expected 'stationary' or 'zero'")
    return RandomFieldState(grid, values, spectrum, ar1, rng)


def ar1_step(state: RandomFieldState) -> RandomFieldState:
    """Advance ``r`` by one step in place: ``r <- alpha r + beta eps``."""
    xi = sample_innovations(state.spectrum, state.rng, 1)[0]
    eps = synthesize_batch(xi, state.spectrum, real_harmonic_basis(state.spectrum.L, state.grid))
    state.values = state.ar1.alpha * state.values + state.ar1.beta * eps.reshape(state.grid.shape)
    state.step += 1
    return state


def ar1_series(state: RandomFieldState, n_steps: int, points=None, chunk: int = 4096) -> np.ndarray:
    """Field values after each of ``n_steps`` steps, shape (n_steps, n_points).

    Consumes the random stream exactly as ``n_steps`` calls to
    :func:`ar1_step`. ``points`` (flat lat-major indices) restricts the
    output; since the recursion is pointwise this is exact, but the stored
    full-grid state is only advanced when ``points`` is None.
    """
    basis = real_harmonic_basis(state.spectrum.L, state.grid)
    r = state.values.ravel().copy()
    if points is not None:
        points = np.asarray(points, dtype=int)
        basis, r = basis[:, points], r[points]
    a, b = state.ar1.alpha, state.ar1.beta
    out = np.empty((n_steps, basis.shape[1]))
    done = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        eps = synthesize_batch(sample_innovations(state.spectrum, state.rng, n), state.spectrum, basis)
        for k in range(n):
            r = a * r + b * eps[k]
            out[done + k] = r
        done += n
    if points is None:
        state.values = r.reshape(state.grid.shape)
        state.step += n_steps
    return out


def apply_sppt(pair: StatePair, r, cfg: PerturbConfig) -> np.ndarray:
    """Perturbed state ``X_{t-1} + (1 + mu r) (X_t - X_{t-1})`` per variable."""
    mu = cfg.amplitudes(pair.variables)
    r_values = r.values if isinstance(r, RandomFieldState) else np.asarray(r, dtype=np.float64)
    factor = mu[:, None, None] * r_values[None]
    if cfg.clip is not None:
        factor = np.clip(factor, -cfg.clip, cfg.clip)
    # X_t + f dX equals X_{t-1} + (1 + f) dX and is exact when f = 0
    return pair.x_curr + factor * pair.increment


def _mu_dx(pair, cfg, variable):
    v = pair.var_index(variable)
    mu = cfg.amplitudes([variable])[0]
    return mu, pair.increment[v]


def analytic_point_variance(pair: StatePair, cfg: PerturbConfig, spectrum: SpectrumParams,
                            s: tuple[int, int], variable) -> float:
    mu, dx = _mu_dx(pair, cfg, variable)
    return float((mu * dx[s]) ** 2 * spectrum.point_variance())


def analytic_covariance(pair: StatePair, cfg: PerturbConfig, spectrum: SpectrumParams,
                        s_u: tuple[int, int], s_v: tuple[int, int], variable, grid: SphericalGrid) -> float:
    mu, dx = _mu_dx(pair, cfg, variable)
    angle = angular_distance(grid.point(*s_u), grid.point(*s_v))
    return float(mu**2 * dx[s_u] * dx[s_v] * isotropic_covariance(spectrum, angle))


def _field_covariance(spectrum, grid, points):
    idx = np.asarray(points, dtype=int).reshape(-1, 2)
    lon, lat = grid.lon[idx[:, 1]], grid.lat[idx[:, 0]]
    ang = angular_distance((lon[:, None], lat[:, None]), (lon[None, :], lat[None, :]))
    return isotropic_covariance(spectrum, ang)


def build_sigma_x(pair: StatePair, cfg: PerturbConfig, spectrum: SpectrumParams,
                  points, variable, grid: SphericalGrid, diagonal: bool = False) -> np.ndarray:
    """``mu^2 D Sigma D`` over ``points`` (a list of (h, w) indices).

    ``diagonal=True`` keeps only the pointwise variances, a cheap stand-in
    for grids too large for the dense matrix.
    """
    mu, dx = _mu_dx(pair, cfg, variable)
    idx = np.asarray(points, dtype=int).reshape(-1, 2)
    d = dx[idx[:, 0], idx[:, 1]]
    if diagonal:
        return np.diag(mu**2 * d**2 * spectrum.point_variance())
    sigma = _field_covariance(spectrum, grid, idx)
    return mu**2 * d[:, None] * sigma * d[None, :]


def input_covariance(pair: StatePair, cfg: PerturbConfig, spectrum: SpectrumParams,
                     grid: SphericalGrid) -> np.ndarray:
    """Covariance of the perturbed network input over all variables and grid points.

    Only ``X_t`` is perturbed, so the ``X_{t-1}`` rows and columns are zero.
    Cross-variable blocks use ``mu_a mu_b`` because the field is shared.
    """
    n_vars = len(pair.variables)
    points = [(h, w) for h in range(grid.n_lat) for w in range(grid.n_lon)]
    sigma = _field_covariance(spectrum, grid, points)
    scale = (cfg.amplitudes(pair.variables)[:, None] * pair.increment.reshape(n_vars, -1)).ravel()
    d = n_vars * grid.size
    out = np.zeros((2 * d, 2 * d))
    out[d:, d:] = scale[:, None] * np.tile(sigma, (n_vars, n_vars)) * scale[None, :]
    return out


def apply_gaussian_baseline(pair: StatePair, sigma: float, rng: np.random.Generator) -> StatePair:
    """Additive i.i.d. Gaussian input noise on both time levels."""
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noise = rng.standard_normal((2,) + pair.x_curr.shape)
    return replace(pair, x_prev=pair.x_prev + sigma * noise[0], x_curr=pair.x_curr + sigma * noise[1])
