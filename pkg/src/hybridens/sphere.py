"""Spherical grid geometry, Legendre functions, harmonics and isotropic fields.

Fields are synthesized in the real spherical-harmonic basis: one
standard-normal coefficient per basis function (cosine branch for m > 0,
sine branch for m < 0). This gives the same angular power spectrum as
complex coefficients with conjugate symmetry and keeps every field real.

Mode ordering everywhere is ``l = 1..L`` and, within a degree,
``m = -l..l``; the ``l = 0`` mode is never stored because ``C_0 = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .kernels import legendre_table

__all__ = [
    "SphericalGrid",
    "SpectrumParams",
    "HarmonicCoeffs",
    "ScalarField",
    "legendre_p",
    "assoc_legendre",
    "spherical_harmonic",
    "power_spectrum",
    "mode_degrees",
    "sample_innovation",
    "sample_innovations",
    "synthesize_field",
    "synthesize_batch",
    "real_harmonic_basis",
    "isotropic_covariance",
    "angular_distance",
]


@dataclass(frozen=True)
class SphericalGrid:
    """Equiangular latitude/longitude grid with cell-centre latitudes.

    No ring sits on a pole, so every latitude weight is strictly positive.
    """

    n_lat: int = 32
    n_lon: int = 64

    def __post_init__(self):
        if int(self.n_lat) != self.n_lat or self.n_lat < 2:
            raise ValueError(f"n_lat must be an integer >= 2, got {self.n_lat}")
        if int(self.n_lon) != self.n_lon or self.n_lon < 4:
            raise ValueError(f"n_lon must be an integer >= 4, got {self.n_lon}")

    @cached_property
    def lat(self) -> np.ndarray:
        return -0.5 * np.pi + (np.arange(self.n_lat) + 0.5) * np.pi / self.n_lat

    @cached_property
    def lon(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

    @cached_property
    def area_weights(self) -> np.ndarray:
        c = np.cos(self.lat)
        return c / c.mean()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def size(self) -> int:
        return self.n_lat * self.n_lon

    def point(self, h: int, w: int) -> tuple[float, float]:
        """(lon, lat) of grid node ``(h, w)``."""
        return float(self.lon[w]), float(self.lat[h])

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (lon, lat) of every node, lat-major."""
        lon, lat = np.meshgrid(self.lon, self.lat)
        return lon.ravel(), lat.ravel()


@dataclass(frozen=True)
class SpectrumParams:
    """Angular power spectrum ``C_l = kappa^2 (l(l+1)/R^2 + tau^2)^(-gamma)``."""

    kappa: float = 0.5
    tau: float = 5.31
    gamma: float = 2.0
    L: int = 16
    R: float = 1.0

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be an integer >= 1, got {self.L}")
        if not self.R > 0:
            raise ValueError(f"R must be > 0, got {self.R}")

    @property
    def n_modes(self) -> int:
        return (self.L + 1) ** 2 - 1

    def amplitudes(self) -> np.ndarray:
        """Per-degree amplitude ``sqrt(C_l)`` for l = 0..L."""
        return np.sqrt(power_spectrum(self))

    def point_variance(self) -> float:
        """Pointwise field variance ``(1/4pi) sum_l (2l+1) C_l``."""
        c = power_spectrum(self)
        l = np.arange(self.L + 1)
        return float(((2 * l + 1) * c).sum() / (4.0 * np.pi))


@dataclass
class HarmonicCoeffs:
    """Unscaled standard-normal coefficients ``xi``, one per real basis mode."""

    L: int
    xi: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        if self.xi.shape[-1] != (self.L + 1) ** 2 - 1:
            raise ValueError(
                f"expected {(self.L + 1) ** 2 - 1} coefficients for L={self.L}, got {self.xi.shape[-1]}"
            )

    def scaled(self, params: SpectrumParams) -> np.ndarray:
        """Coefficients multiplied by ``sqrt(C_l)``; variance ``C_l`` per mode."""
        if params.L != self.L:
            raise ValueError(f"coefficient degree {self.L} does not match spectrum L={params.L}")
        return self.xi * params.amplitudes()[mode_degrees(self.L)]


@dataclass
class ScalarField:
    grid: SphericalGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


def _check_x(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("Legendre argument must satisfy |x| <= 1")
    return x


def legendre_p(l: int, x):
    """Legendre polynomial ``P_l(x)`` by the three-term recurrence."""
    if l < 0:
        raise ValueError(f"degree must be >= 0, got {l}")
    x = _check_x(x)
    p_prev, p = np.ones_like(x), x.copy()
    if l == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    for k in range(2, l + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p if p.ndim else float(p)


def assoc_legendre(l: int, m: int, x):
    """Associated Legendre function ``P_l^m(x)`` with the ``(-1)^m`` phase.

    Only ``|m|`` enters, so negative orders return the same value as
    positive ones. Evaluated upward from the diagonal ``P_m^m``.
    """
    if l < 0:
        raise ValueError(f"degree must be >= 0, got {l}")
    am = abs(m)
    if am > l:
        raise ValueError(f"|m| = {am} exceeds degree {l}")
    x = _check_x(x)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    pmm = np.ones_like(x)
    for k in range(1, am + 1):
        pmm = -(2 * k - 1) * s * pmm
    if l == am:
        out = pmm
    else:
        p_prev, p = pmm, x * (2 * am + 1) * pmm
        for k in range(am + 2, l + 1):
            p_prev, p = p, ((2 * k - 1) * x * p - (k + am - 1) * p_prev) / (k - am)
        out = p
    return out if out.ndim else float(out)


def spherical_harmonic(l: int, m: int, s: tuple[float, float]) -> tuple[float, float]:
    """Complex ``Y_lm`` at ``s = (lon, lat)`` returned as (real, imag)."""
    am = abs(m)
    if am > l:
        raise ValueError(f"|m| = {am} exceeds degree {l}")
    lon, lat = s
    log_ratio = math.lgamma(l - am + 1) - math.lgamma(l + am + 1)
    norm = math.sqrt((2 * l + 1) / (4.0 * math.pi)) * math.exp(0.5 * log_ratio)
    amp = norm * assoc_legendre(l, m, math.sin(lat))
    return amp * math.cos(m * lon), amp * math.sin(m * lon)


def power_spectrum(params: SpectrumParams) -> np.ndarray:
    l = np.arange(params.L + 1, dtype=np.float64)
    c = params.kappa**2 * (l * (l + 1) / params.R**2 + params.tau**2) ** (-params.gamma)
    c[0] = 0.0
    return c


@lru_cache(maxsize=32)
def mode_degrees(L: int) -> np.ndarray:
    """Degree ``l`` of every stored mode, in storage order."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(1, L + 1)])


def sample_innovation(params: SpectrumParams, rng: np.random.Generator) -> HarmonicCoeffs:
    xi = rng.standard_normal(params.n_modes)
    if params.kappa == 0:
        xi = np.zeros_like(xi)
    return HarmonicCoeffs(params.L, xi)


def sample_innovations(params: SpectrumParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` stacked draws; same stream as ``n`` calls to :func:`sample_innovation`."""
    xi = rng.standard_normal((n, params.n_modes))
    if params.kappa == 0:
        xi[:] = 0.0
    return xi


def _real_basis(L: int, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Real orthonormal harmonics, shape (n_modes, n_points)."""
    plm = legendre_table(L, np.sin(lat))
    rows = []
    for l in range(1, L + 1):
        for m in range(-l, l + 1):
            if m == 0:
                rows.append(plm[l, 0])
            elif m > 0:
                rows.append(math.sqrt(2.0) * plm[l, m] * np.cos(m * lon))
            else:
                rows.append(math.sqrt(2.0) * plm[l, -m] * np.sin(-m * lon))
    return np.array(rows)


@lru_cache(maxsize=16)
def _grid_basis(n_lat: int, n_lon: int, L: int) -> np.ndarray:
    grid = SphericalGrid(n_lat, n_lon)
    lon, lat = grid.points()
    basis = _real_basis(L, lon, lat)
    basis.setflags(write=False)
    return basis


def real_harmonic_basis(L: int, grid: SphericalGrid | None = None, points=None) -> np.ndarray:
    """Basis matrix ``(n_modes, n_points)`` on a grid (cached) or at ``points = (lon, lat)``."""
    if points is not None:
        lon, lat = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in points)
        return _real_basis(L, lon, lat)
    if grid is None:
        raise ValueError("need a grid or explicit points")
    return _grid_basis(grid.n_lat, grid.n_lon, L)


def synthesize_batch(xi: np.ndarray, params: SpectrumParams, basis: np.ndarray) -> np.ndarray:
    """Fields for stacked coefficients ``xi`` (..., n_modes) on a basis's points."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != basis.shape[0]:
        raise ValueError(f"coefficient count {xi.shape[-1]} does not match basis {basis.shape[0]}")
    return (xi * params.amplitudes()[mode_degrees(params.L)]) @ basis


def synthesize_field(coeffs: HarmonicCoeffs, params: SpectrumParams, grid: SphericalGrid) -> ScalarField:
    if coeffs.L != params.L:
        raise ValueError(f"coefficient degree {coeffs.L} does not match spectrum L={params.L}")
    values = synthesize_batch(coeffs.xi, params, real_harmonic_basis(params.L, grid))
    return ScalarField(grid, values.reshape(grid.shape))


def isotropic_covariance(params: SpectrumParams, angle):
    """Two-point field covariance at angular separation ``angle``."""
    angle = np.asarray(angle, dtype=np.float64)
    c = power_spectrum(params)
    x = np.clip(np.cos(angle), -1.0, 1.0)
    total = np.zeros_like(x)
    for l in range(1, params.L + 1):
        total = total + (2 * l + 1) / (4.0 * np.pi) * c[l] * legendre_p(l, x)
    return total if total.ndim else float(total)


def angular_distance(s_u, s_v):
    """Great-circle angle between ``(lon, lat)`` points (Vincenty form)."""
    lon1, lat1 = (np.asarray(a, dtype=np.float64) for a in s_u)
    lon2, lat2 = (np.asarray(a, dtype=np.float64) for a in s_v)
    dlon = lon2 - lon1
    num = np.hypot(
        np.cos(lat2) * np.sin(dlon),
        np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon),
    )
    den = np.sin(lat1) * np.sin(lat2) + np.cos(lat1) * np.cos(lat2) * np.cos(dlon)
    out = np.arctan2(num, den)
    return out if out.ndim else float(out)
