"""Latitude-weighted probabilistic verification scores.

Spatial means use the area weights ``a_h = cos(lat_h) / mean(cos(lat))``
applied to every point of ring ``h``. When several initializations are
pooled, squared quantities (MSE, ensemble variance) are averaged across
initializations before the square root, CRPS/MAE are plain averages, and
the spread/skill ratio is formed from the pooled spread and skill.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import fair_crps_points
from .sphere import SphericalGrid

__all__ = [
    "VerificationSet",
    "MetricReport",
    "CSV_COLUMNS",
    "ensemble_mean_rmse",
    "fair_crps",
    "spread",
    "spread_skill_ratio",
    "weighted_mae",
    "metric_table",
    "report_rows",
]

MAX_FAILED_FRACTION = 0.05
CSV_COLUMNS = ("scheme", "variable", "lead_hours", "metric", "value", "n_members", "n_inits")


@dataclass
class VerificationSet:
    """``members`` (K, n_lat, n_lon) against ``truth`` (n_lat, n_lon)."""

    members: np.ndarray
    truth: np.ndarray
    grid: SphericalGrid
    variable: str = "x0"
    lead: float = 0.0

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if self.truth.shape != self.grid.shape:
            raise ValueError(f"truth shape {self.truth.shape} does not match grid {self.grid.shape}")
        if self.members.ndim != 3 or self.members.shape[1:] != self.grid.shape:
            raise ValueError(f"members must be (K, {self.grid.n_lat}, {self.grid.n_lon}), got {self.members.shape}")

    @property
    def K(self) -> int:
        return self.members.shape[0]


@dataclass
class MetricReport:
    scheme: str
    variable: str
    lead_hours: float
    K: int
    n_inits: int
    rmse: float
    crps: float | None = None
    spread: float | None = None
    ssr: float | None = None
    mae: float | None = None


def _wmean(values, grid):
    return float(np.mean(values * grid.area_weights[:, None]))


def _need_two(vs):
    if vs.K < 2:
        raise ValueError(f"ensemble metrics need K >= 2 members, got {vs.K}")


def _mse(vs):
    return _wmean((vs.truth - vs.members.mean(axis=0)) ** 2, vs.grid)


def _variance(vs):
    return _wmean(vs.members.var(axis=0, ddof=1), vs.grid)


def ensemble_mean_rmse(vs: VerificationSet) -> float:
    return math.sqrt(_mse(vs))


def weighted_mae(vs: VerificationSet) -> float:
    """Weighted absolute error of the ensemble mean (deterministic score)."""
    return _wmean(np.abs(vs.truth - vs.members.mean(axis=0)), vs.grid)


def fair_crps(vs: VerificationSet) -> float:
    """Fair (finite-ensemble unbiased) CRPS, ordered-pair convention."""
    _need_two(vs)
    per_point = fair_crps_points(vs.members.reshape(vs.K, -1), vs.truth.ravel())
    return _wmean(per_point.reshape(vs.grid.shape), vs.grid)


def spread(vs: VerificationSet) -> float:
    """Root of the weighted mean unbiased ensemble variance."""
    _need_two(vs)
    return math.sqrt(_variance(vs))


def _ssr(spread_value, skill, K):
    if not skill > 0:
        raise ValueError("spread/skill ratio undefined for zero ensemble-mean error")
    return math.sqrt((K + 1.0) / K) * spread_value / skill


def spread_skill_ratio(vs: VerificationSet) -> float:
    return _ssr(spread(vs), ensemble_mean_rmse(vs), vs.K)


def _pooled(sets, scheme, variable, lead):
    K = sets[0].K
    n = len(sets)
    rmse = math.sqrt(sum(_mse(s) for s in sets) / n)
    if K < 2:
        mae = sum(weighted_mae(s) for s in sets) / n
        return MetricReport(scheme, variable, lead, K, n, rmse, mae=mae)
    crps = sum(fair_crps(s) for s in sets) / n
    spr = math.sqrt(sum(_variance(s) for s in sets) / n)
    ssr = _ssr(spr, rmse, K) if rmse > 0 else math.nan
    return MetricReport(scheme, variable, lead, K, n, rmse, crps, spr, ssr)


def metric_table(forecasts: dict, truth: np.ndarray, grid: SphericalGrid, variables,
                 leads_hours, interval: float = 6.0) -> list[MetricReport]:
    """Pooled scores for every (scheme, variable, lead).

    ``forecasts[scheme]`` has shape (n_inits, K, horizon, n_vars, n_lat, n_lon),
    with lead index ``k`` at ``(k + 1) * interval`` hours; ``truth`` has shape
    (n_inits, horizon, n_vars, n_lat, n_lon). Members that are NaN anywhere
    (failed rollouts) are dropped per initialization; more than 5% failed
    members is an error.
    """
    if truth is None or np.size(truth) == 0:
        raise ValueError("missing truth trajectories")
    truth = np.asarray(truth, dtype=np.float64)
    rows = []
    for scheme in sorted(forecasts):
        fc = np.asarray(forecasts[scheme])
        if fc.ndim != 6 or fc.shape[0] != truth.shape[0] or fc.shape[3:] != truth.shape[2:]:
            raise ValueError(f"scheme {scheme!r}: forecast shape {fc.shape} does not match truth {truth.shape}")
        valid = np.all(np.isfinite(fc.reshape(fc.shape[0], fc.shape[1], -1)), axis=2)
        failed = 1.0 - valid.mean()
        if failed > MAX_FAILED_FRACTION:
            raise ValueError(f"scheme {scheme!r}: {failed:.1%} of members failed; refusing to score")
        for v, name in enumerate(variables):
            for lead in leads_hours:
                k = int(round(lead / interval)) - 1
                if k < 0 or k >= fc.shape[2] or k >= truth.shape[1]:
                    raise ValueError(f"lead {lead} h outside the forecast horizon")
                sets = [
                    VerificationSet(fc[i, valid[i], k, v], truth[i, k, v], grid, name, lead)
                    for i in range(fc.shape[0])
                ]
                rows.append(_pooled(sets, scheme, name, float(lead)))
    return rows


def report_rows(reports: list[MetricReport]) -> list[tuple]:
    """Long-format rows matching :data:`CSV_COLUMNS`."""
    out = []
    for r in reports:
        metrics = [("rmse", r.rmse)]
        if r.K < 2:
            metrics.append(("mae", r.mae))
        else:
            metrics += [("crps", r.crps), ("spread", r.spread), ("ssr", r.ssr)]
        for name, value in metrics:
            out.append((r.scheme, r.variable, r.lead_hours, name, value, r.K, r.n_inits))
    return out
