"""Hybrid M x P ensemble rollouts and the predictive-variance decomposition.

Member ``(i, j)`` uses parameter draw ``theta_i`` for its whole trajectory
and the AR(1) field sequence ``j``. Both are seeded from the run seed via
:func:`~hybridens.seeding.seed_tree` with labels ``("theta", i)`` and
``("field", j)``, so the field sequence ``j`` is shared by every ``i``
(the Cartesian design the decomposition assumes) and a run with the
perturbation amplitudes at zero reproduces the parameter-only ensemble
member for member.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .perturbation import (
    AR1Config,
    PerturbConfig,
    StatePair,
    apply_gaussian_baseline,
    ar1_init,
    ar1_series,
)
from .seeding import rng_for, seed_tree
from .sphere import SphericalGrid, SpectrumParams
from .varnet import DenseNet, VariationalParams, _forward, backward, forward, sample_weights

__all__ = [
    "MODES",
    "EnsembleConfig",
    "PerturbationSetup",
    "EnsembleRun",
    "UncertaintyDecomposition",
    "draw_thetas",
    "generate_ensemble",
    "predictive_mean",
    "total_variance",
    "epistemic_variance",
    "aleatoric_variance_linearized",
    "decompose",
    "gradient_of_output",
    "input_jacobian",
]

MODES = ("epistemic_only", "aleatoric_only", "hybrid", "gaussian_baseline", "deterministic")


@dataclass(frozen=True)
class EnsembleConfig:
    M: int = 6
    P: int = 8
    horizon: int = 40
    mode: str = "hybrid"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"ensemble.mode must be one of {MODES}, got {self.mode!r}")
        if self.M < 1 or self.P < 1 or self.horizon < 1:
            raise ValueError("ensemble M, P and horizon must all be >= 1")
        if self.mode == "epistemic_only" and self.P != 1:
            raise ValueError("epistemic_only ensembles need P = 1")
        if self.mode in ("aleatoric_only", "gaussian_baseline") and self.M != 1:
            raise ValueError(f"{self.mode} ensembles need M = 1")
        if self.mode == "deterministic" and (self.M, self.P) != (1, 1):
            raise ValueError("deterministic runs need M = P = 1")

    @property
    def n_members(self) -> int:
        return self.M * self.P

    @property
    def samples_theta(self) -> bool:
        return self.mode in ("epistemic_only", "hybrid")

    @property
    def uses_sppt(self) -> bool:
        return self.mode in ("aleatoric_only", "hybrid")


@dataclass(frozen=True)
class PerturbationSetup:
    spectrum: SpectrumParams = field(default_factory=SpectrumParams)
    ar1: AR1Config = field(default_factory=AR1Config)
    sppt: PerturbConfig = field(default_factory=PerturbConfig)
    gaussian_sigma: float = 0.3
    init_mode: str = "stationary"


@dataclass
class EnsembleRun:
    """``trajectories`` has shape (M, P, horizon, n_vars, n_lat, n_lon)."""

    trajectories: np.ndarray
    seeds: dict
    config: EnsembleConfig
    failed: np.ndarray = None

    def __post_init__(self):
        if self.failed is None:
            self.failed = ~np.all(np.isfinite(self.trajectories.reshape(self.config.M, self.config.P, -1)), axis=2)

    def members(self, lead: int) -> np.ndarray:
        """Valid members at 1-based ``lead`` as (K, ...)."""
        if not 1 <= lead <= self.config.horizon:
            raise ValueError(f"lead {lead} outside 1..{self.config.horizon}")
        return self.trajectories[:, :, lead - 1][~self.failed]


@dataclass
class UncertaintyDecomposition:
    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    cross_residual: np.ndarray


def draw_thetas(model, M: int, seed: int, sample: bool = True) -> list[DenseNet]:
    """Parameter draws for members ``0..M-1``; the mean network when not sampling."""
    if isinstance(model, DenseNet):
        if sample:
            raise ValueError("sampling parameters requires VariationalParams, got a fixed network")
        return [model] * M
    if not sample:
        return [model.mean_net()] * M
    return [sample_weights(model, rng_for(seed, "theta", i)) for i in range(M)]


def _field_sequences(setup, grid, seed, P, horizon):
    out = np.empty((P, horizon) + grid.shape)
    for j in range(P):
        state = ar1_init(setup.spectrum, setup.ar1, rng_for(seed, "field", j), grid, setup.init_mode)
        out[j, 0] = state.values
        if horizon > 1:
            out[j, 1:] = ar1_series(state, horizon - 1).reshape((horizon - 1,) + grid.shape)
    return out


def generate_ensemble(model, pair: StatePair, setup: PerturbationSetup, cfg: EnsembleConfig,
                      grid: SphericalGrid, seed: int) -> EnsembleRun:
    """Autoregressive rollout of all ``M x P`` members from ``pair``.

    At each step the member's current increment is perturbed (SPPT modes),
    ``[X_{t-1}, X^p_t]`` is fed to ``f_theta_i``, and the pair advances to
    ``(X^p_t, prediction)``.
    """
    M, P, horizon = cfg.M, cfg.P, cfg.horizon
    thetas = draw_thetas(model, M, seed, cfg.samples_theta)
    seeds = {
        "run": int(seed),
        "theta": [seed_tree(seed, "theta", i) for i in range(M)] if cfg.samples_theta else [],
        "field": [seed_tree(seed, "field", j) for j in range(P)] if cfg.uses_sppt else [],
        "gaussian": [seed_tree(seed, "gaussian", j) for j in range(P)] if cfg.mode == "gaussian_baseline" else [],
    }
    shape = pair.x_curr.shape
    prev = np.broadcast_to(pair.x_prev, (M, P) + shape).copy()
    curr = np.broadcast_to(pair.x_curr, (M, P) + shape).copy()
    if cfg.mode == "gaussian_baseline":
        for j in range(P):
            p = apply_gaussian_baseline(pair, setup.gaussian_sigma, rng_for(seed, "gaussian", j))
            prev[:, j], curr[:, j] = p.x_prev, p.x_curr
    if cfg.uses_sppt:
        fields = _field_sequences(setup, grid, seed, P, horizon)
        mu = setup.sppt.amplitudes(pair.variables)[:, None, None]
    out = np.empty((M, P, horizon) + shape)
    d = int(np.prod(shape))
    with np.errstate(all="ignore"):
        for t in range(horizon):
            if cfg.uses_sppt:
                factor = mu[None] * fields[:, t][:, None]  # (P, V, H, W)
                if setup.sppt.clip is not None:
                    factor = np.clip(factor, -setup.sppt.clip, setup.sppt.clip)
                curr = curr + factor[None] * (curr - prev)
            inputs = np.concatenate([prev.reshape(M, P, d), curr.reshape(M, P, d)], axis=2)
            pred = np.stack([forward(thetas[i], inputs[i]) for i in range(M)]).reshape((M, P) + shape)
            out[:, :, t] = pred
            prev, curr = curr, pred
    failed = ~np.all(np.isfinite(out.reshape(M, P, -1)), axis=2)
    out[failed] = np.nan
    return EnsembleRun(out, seeds, cfg, failed)


def predictive_mean(run: EnsembleRun, lead: int) -> np.ndarray:
    return run.members(lead).mean(axis=0)


def total_variance(run: EnsembleRun, lead: int) -> np.ndarray:
    """Biased (1/MP) sample variance about the grand mean."""
    members = run.members(lead)
    if len(members) < 2:
        raise ValueError("total variance needs at least two members")
    return members.var(axis=0)


def gradient_of_output(net: DenseNet, x, k: int) -> np.ndarray:
    """Gradient of output ``k`` with respect to every input."""
    x = np.asarray(x, dtype=np.float64)
    _, acts = _forward(net.weights, net.biases, net.skip, x)
    seed = np.zeros(net.n_out)
    seed[k] = 1.0
    return backward(net.weights, acts, net.skip, seed)[2]


def input_jacobian(net: DenseNet, x, outputs=None) -> np.ndarray:
    """Rows of the input Jacobian, one reverse sweep per selected output."""
    x = np.asarray(x, dtype=np.float64)
    outputs = np.arange(net.n_out) if outputs is None else np.asarray(outputs)
    xb = np.broadcast_to(x, (len(outputs), x.size))
    _, acts = _forward(net.weights, net.biases, net.skip, xb)
    seeds = np.zeros((len(outputs), net.n_out))
    seeds[np.arange(len(outputs)), outputs] = 1.0
    return backward(net.weights, acts, net.skip, seeds)[2]


def epistemic_variance(model, pair: StatePair, M: int, seed: int, thetas=None) -> np.ndarray:
    """Spread of unperturbed predictions over parameter draws (1/M convention)."""
    thetas = draw_thetas(model, M, seed) if thetas is None else thetas
    if len(thetas) < 2:
        raise ValueError("epistemic variance needs M >= 2")
    x = pair.flat_input()
    preds = np.stack([forward(th, x) for th in thetas])
    return preds.var(axis=0).reshape(pair.x_curr.shape)


def aleatoric_variance_linearized(model, pair: StatePair, sigma_x: np.ndarray, M: int,
                                  seed: int = 0, thetas=None) -> np.ndarray:
    """Mean over parameter draws of ``grad^T Sigma_x grad`` per output point.

    ``sigma_x`` is the covariance of the full network input (2d x 2d).
    """
    if thetas is None:
        sample = isinstance(model, VariationalParams)
        thetas = draw_thetas(model, M, seed, sample)
    x = pair.flat_input()
    sigma_x = np.asarray(sigma_x, dtype=np.float64)
    if sigma_x.shape != (x.size, x.size):
        raise ValueError(f"sigma_x must be {x.size}x{x.size}, got {sigma_x.shape}")
    total = np.zeros(thetas[0].n_out)
    for th in thetas:
        J = input_jacobian(th, x)
        total += np.einsum("ki,ij,kj->k", J, sigma_x, J)
    return (total / len(thetas)).reshape(pair.x_curr.shape)


def decompose(run: EnsembleRun, model, pair: StatePair, sigma_x: np.ndarray) -> UncertaintyDecomposition:
    """One-step decomposition of a run's total variance.

    Parameter draws are regenerated from the run's seed record, so ``model``
    must be the one the run was generated with.
    """
    cfg = run.config
    thetas = draw_thetas(model, cfg.M, run.seeds["run"], cfg.samples_theta)
    total = total_variance(run, 1)
    if cfg.M >= 2 and cfg.samples_theta:
        epi = epistemic_variance(model, pair, cfg.M, run.seeds["run"], thetas)
    else:
        epi = np.zeros_like(total)
    ale = aleatoric_variance_linearized(model, pair, sigma_x, cfg.M, thetas=thetas)
    return UncertaintyDecomposition(total, ale, epi, total - (ale + epi))
