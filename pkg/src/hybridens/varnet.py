"""Dense forecasting network with deterministic and variational training.

The network maps the flattened pair ``[X_{t-1}, X_t]`` to ``X_{t+1}``.
Hidden layers use tanh; the output layer is linear. An optional skip adds
a fixed linear first guess to the layer output: ``"persistence"`` adds
``X_t`` and ``"extrapolation"`` adds ``2 X_t - X_{t-1}``, so the layers
only learn the correction.

Gradients are computed by an explicit reverse sweep over the cached
layer activations; no autodiff library is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sphere import SphericalGrid

__all__ = [
    "DenseNet",
    "VariationalParams",
    "LossBreakdown",
    "OptimizerConfig",
    "DivergenceError",
    "init_dense",
    "forward",
    "backward",
    "weighted_l1",
    "kl_gaussian",
    "sample_eps",
    "sample_weights",
    "elbo_loss",
    "pretrain_loss",
    "pretrain",
    "posttrain_vi",
    "softplus",
    "inverse_softplus",
]


class DivergenceError(FloatingPointError):
    """Raised when a loss becomes non-finite during training."""


@dataclass
class DenseNet:
    weights: list
    biases: list
    skip: str = "none"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input {w.shape[1]} != previous output {self.weights[k - 1].shape[0]}")
        _check_skip(self.skip, self.n_in, self.n_out)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.skip)


SKIPS = ("none", "persistence", "extrapolation")


def _check_skip(skip, n_in, n_out):
    if skip not in SKIPS:
        raise ValueError(f"skip must be one of {SKIPS}, got {skip!r}")
    if skip != "none" and n_in != 2 * n_out:
        raise ValueError("skip connections need n_in == 2 * n_out")


def init_dense(sizes, rng: np.random.Generator, skip: str = "none", out_scale: float = 1.0) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        if k == len(sizes) - 2:
            w *= out_scale
        weights.append(w)
        biases.append(np.zeros(n_out))
    return DenseNet(weights, biases, skip)


def _forward(weights, biases, skip, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights[0].shape[1]:
        raise ValueError(f"input length {x.shape[-1]} does not match network input {weights[0].shape[1]}")
    acts = [x]
    h = x
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        h = z if k == last else np.tanh(z)
        acts.append(h)
    half = x.shape[-1] // 2
    if skip == "persistence":
        y = h + x[..., half:]
    elif skip == "extrapolation":
        y = h + 2.0 * x[..., half:] - x[..., :half]
    else:
        y = h
    return y, acts


def forward(net: DenseNet, x) -> np.ndarray:
    """Prediction for one input vector or a batch (rows)."""
    return _forward(net.weights, net.biases, net.skip, x)[0]


def backward(weights, acts, skip, gy):
    """Reverse sweep. Returns (weight grads, bias grads, input grad)."""
    gw, gb = [None] * len(weights), [None] * len(weights)
    g = gy
    last = len(weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (1.0 - acts[k + 1] ** 2)
        a_in = acts[k]
        if a_in.ndim == 1:
            gw[k] = np.outer(g, a_in)
            gb[k] = g.copy()
        else:
            gw[k] = g.T @ a_in
            gb[k] = g.sum(axis=0)
        g = g @ weights[k]
    if skip != "none":
        half = g.shape[-1] // 2
        g = g.copy()
        if skip == "persistence":
            g[..., half:] += gy
        else:
            g[..., half:] += 2.0 * gy
            g[..., :half] -= gy
    return gw, gb, g


def _as_fields(a, grid, n_vars):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape[:-1] + (n_vars, grid.n_lat, grid.n_lon)) if a.shape[-1] == n_vars * grid.size else a


def weighted_l1(pred, truth, grid: SphericalGrid, var_weights) -> float:
    """Latitude- and variable-weighted mean absolute error.

    Inputs are ``(..., C, H, W)`` arrays or flattened ``(..., C*H*W)``.
    """
    w_c = np.atleast_1d(np.asarray(var_weights, dtype=np.float64))
    if np.any(w_c <= 0):
        raise ValueError("variable weights must be positive")
    p, t = _as_fields(pred, grid, w_c.size), _as_fields(truth, grid, w_c.size)
    if p.shape != t.shape or p.shape[-3:] != (w_c.size,) + grid.shape:
        raise ValueError(f"shape mismatch: pred {np.shape(pred)}, truth {np.shape(truth)}")
    weight = w_c[:, None, None] * grid.area_weights[None, :, None]
    return float(np.mean(weight * np.abs(p - t)))


def _weighted_l1_grad(pred, truth, grid, var_weights):
    w_c = np.atleast_1d(np.asarray(var_weights, dtype=np.float64))
    diff = pred - truth
    per_point = w_c[:, None, None] * grid.area_weights[None, :, None]
    weight = np.broadcast_to(per_point, (w_c.size,) + grid.shape).ravel()
    loss = float(np.mean(weight * np.abs(diff)))
    return loss, weight * np.sign(diff) / diff.size


def softplus(rho):
    return np.logaddexp(0.0, rho)


def inverse_softplus(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.where(sigma > 30.0, sigma, np.log(np.expm1(np.minimum(sigma, 30.0))))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class VariationalParams:
    """Mean-field Gaussian posterior over weight matrices; biases stay point estimates.

    ``prior_mu`` of None means a zero-mean prior.
    """

    w_mu: list
    w_rho: list
    biases: list
    prior_std: float = 2e-4
    beta_kl: float = 1e-4
    prior_mu: list | None = None
    skip: str = "none"

    def __post_init__(self):
        if len(self.w_mu) != len(self.w_rho) or len(self.w_mu) != len(self.biases):
            raise ValueError("w_mu, w_rho and biases must have one entry per layer")
        for mu, rho in zip(self.w_mu, self.w_rho):
            if np.shape(mu) != np.shape(rho):
                raise ValueError(f"w_mu {np.shape(mu)} and w_rho {np.shape(rho)} differ")
        if not self.prior_std > 0:
            raise ValueError(f"vi.prior_std must be > 0, got {self.prior_std}")
        if not self.beta_kl >= 0:
            raise ValueError(f"vi.beta_kl must be >= 0, got {self.beta_kl}")

    @property
    def sigma(self) -> list:
        return [softplus(r) for r in self.w_rho]

    def mean_net(self) -> DenseNet:
        return DenseNet([m.copy() for m in self.w_mu], [b.copy() for b in self.biases], self.skip)

    @classmethod
    def from_net(cls, net: DenseNet, prior_std=2e-4, beta_kl=1e-4, init_std=None,
                 prior_mean: str = "zero") -> "VariationalParams":
        init_std = prior_std if init_std is None else init_std
        rho = float(inverse_softplus(init_std))
        if prior_mean == "zero":
            prior_mu = None
        elif prior_mean == "pretrained":
            prior_mu = [w.copy() for w in net.weights]
        else:
            raise ValueError(f"prior_mean must be 'zero' or 'pretrained', got {prior_mean!r}")
        return cls(
            [w.copy() for w in net.weights],
            [np.full_like(w, rho) for w in net.weights],
            [b.copy() for b in net.biases],
            prior_std, beta_kl, prior_mu, net.skip,
        )

    def copy(self) -> "VariationalParams":
        return VariationalParams(
            [m.copy() for m in self.w_mu], [r.copy() for r in self.w_rho],
            [b.copy() for b in self.biases], self.prior_std, self.beta_kl,
            None if self.prior_mu is None else [p.copy() for p in self.prior_mu], self.skip,
        )


@dataclass
class LossBreakdown:
    l1: float
    kl: float
    total: float
    grads: dict = field(default_factory=dict, repr=False)


def _prior_means(vp):
    return vp.prior_mu if vp.prior_mu is not None else [0.0] * len(vp.w_mu)


def kl_gaussian(vp: VariationalParams) -> float:
    """Closed-form KL(q || p) summed over all weights."""
    sp = vp.prior_std
    total = 0.0
    for mu, sigma, pm in zip(vp.w_mu, vp.sigma, _prior_means(vp)):
        if np.any(sigma <= 0):
            raise ValueError("posterior standard deviations must be positive")
        total += float(np.sum(np.log(sp / sigma) + (sigma**2 + (mu - pm) ** 2) / (2.0 * sp**2) - 0.5))
    return total


def sample_eps(vp: VariationalParams, rng: np.random.Generator) -> list:
    return [rng.standard_normal(np.shape(m)) for m in vp.w_mu]


def sample_weights(vp: VariationalParams, rng: np.random.Generator | None = None, eps=None) -> DenseNet:
    """Reparameterized draw ``theta = W_mu + eps * W_sigma``."""
    if eps is None:
        eps = sample_eps(vp, rng)
    weights = [mu + e * s for mu, e, s in zip(vp.w_mu, eps, vp.sigma)]
    return DenseNet(weights, [b.copy() for b in vp.biases], vp.skip)


def elbo_loss(vp: VariationalParams, batch, grid: SphericalGrid, var_weights=1.0,
              rng: np.random.Generator | None = None, eps=None, n_samples: int = 1) -> LossBreakdown:
    """``L1 + beta * KL`` and its gradients w.r.t. ``w_mu``, ``w_rho`` and biases.

    ``eps`` fixes the weight noise (a list of arrays, or a list of such lists
    when ``n_samples > 1``); otherwise it is drawn from ``rng``.
    """
    inputs, targets = (np.asarray(a, dtype=np.float64) for a in batch)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    var_weights = _var_weights(var_weights, targets.shape[-1], grid)
    sigmas = vp.sigma
    if eps is None:
        eps_list = [sample_eps(vp, rng) for _ in range(n_samples)]
    else:
        eps_list = eps if n_samples > 1 else [eps]
    g_mu = [np.zeros_like(m) for m in vp.w_mu]
    g_rho = [np.zeros_like(r) for r in vp.w_rho]
    g_b = [np.zeros_like(b) for b in vp.biases]
    l1 = 0.0
    for e in eps_list:
        weights = [mu + ei * s for mu, ei, s in zip(vp.w_mu, e, sigmas)]
        pred, acts = _forward(weights, vp.biases, vp.skip, inputs)
        loss, gy = _weighted_l1_grad(pred, targets, grid, var_weights)
        gw, gb, _ = backward(weights, acts, vp.skip, gy)
        l1 += loss / len(eps_list)
        for k in range(len(weights)):
            g_mu[k] += gw[k] / len(eps_list)
            g_rho[k] += gw[k] * e[k] * _sigmoid(vp.w_rho[k]) / len(eps_list)
            g_b[k] += gb[k] / len(eps_list)
    kl = kl_gaussian(vp)
    sp2 = vp.prior_std**2
    for k, (mu, s, pm) in enumerate(zip(vp.w_mu, sigmas, _prior_means(vp))):
        g_mu[k] += vp.beta_kl * (mu - pm) / sp2
        g_rho[k] += vp.beta_kl * (-1.0 / s + s / sp2) * _sigmoid(vp.w_rho[k])
    total = l1 + vp.beta_kl * kl
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite ELBO loss (l1={l1}, kl={kl})")
    return LossBreakdown(l1, kl, total, {"w_mu": g_mu, "w_rho": g_rho, "biases": g_b})


def pretrain_loss(net: DenseNet, batch, grid: SphericalGrid, var_weights=1.0) -> LossBreakdown:
    """Deterministic weighted-L1 loss with weight and bias gradients."""
    inputs, targets = (np.asarray(a, dtype=np.float64) for a in batch)
    var_weights = _var_weights(var_weights, targets.shape[-1], grid)
    pred, acts = _forward(net.weights, net.biases, net.skip, inputs)
    loss, gy = _weighted_l1_grad(pred, targets, grid, var_weights)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss}")
    gw, gb, _ = backward(net.weights, acts, net.skip, gy)
    return LossBreakdown(loss, 0.0, loss, {"weights": gw, "biases": gb})


def _var_weights(var_weights, d, grid):
    w = np.atleast_1d(np.asarray(var_weights, dtype=np.float64))
    n_vars = d // grid.size
    if n_vars * grid.size != d:
        raise ValueError(f"output length {d} is not a multiple of the grid size {grid.size}")
    return np.broadcast_to(w, (n_vars,)) if w.size == 1 else w


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient descent with heavy-ball momentum and a cosine learning-rate decay."""

    lr: float = 1e-3
    momentum: float = 0.9
    steps: int = 2000
    batch_size: int = 64
    lr_min: float = 0.0
    schedule: str = "cosine"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def rate(self, step: int) -> float:
        if self.schedule == "constant" or self.steps <= 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * frac))


def _minibatch(dataset, size, rng):
    inputs, targets = dataset
    n = len(inputs)
    if size >= n:
        return inputs, targets
    idx = rng.choice(n, size=size, replace=False)
    return inputs[idx], targets[idx]


def pretrain(net: DenseNet, dataset, grid: SphericalGrid, opt: OptimizerConfig,
             rng: np.random.Generator, var_weights=1.0, log_every: int = 0,
             input_noise: float = 0.0):
    """Minimize the weighted L1 loss. Returns (trained copy, loss history).

    ``input_noise`` adds i.i.d. Gaussian noise of that standard deviation to
    every training input (targets untouched), which keeps autoregressive
    rollouts of perturbed states from drifting off the data manifold.
    """
    if input_noise < 0:
        raise ValueError(f"input_noise must be >= 0, got {input_noise}")
    net = net.copy()
    params = net.weights + net.biases
    velocity = [np.zeros_like(p) for p in params]
    history = []
    for step in range(opt.steps):
        inputs, targets = _minibatch(dataset, opt.batch_size, rng)
        if input_noise:
            inputs = inputs + input_noise * rng.standard_normal(inputs.shape)
        out = pretrain_loss(net, (inputs, targets), grid, var_weights)
        grads = out.grads["weights"] + out.grads["biases"]
        lr = opt.rate(step)
        for p, v, g in zip(params, velocity, grads):
            v *= opt.momentum
            v += g
            p -= lr * v
        history.append(out.total)
        if log_every and step % log_every == 0:
            print(f"pretrain step {step:6d}  l1 {out.total:.6g}")
    return net, history


def posttrain_vi(net: DenseNet, dataset, grid: SphericalGrid, opt: OptimizerConfig,
                 rng: np.random.Generator, prior_std=2e-4, beta_kl=1e-4, var_weights=1.0,
                 prior_mean: str = "zero", init_std=None, n_samples: int = 1,
                 vp: VariationalParams | None = None, log_every: int = 0):
    """Variational post-training starting from a pretrained network.

    ``W_mu`` starts at the pretrained weights and ``W_sigma`` at ``init_std``
    (default ``prior_std``). Returns (params, history of LossBreakdown).
    """
    if vp is None:
        vp = VariationalParams.from_net(net, prior_std, beta_kl, init_std, prior_mean)
    else:
        vp = vp.copy()
    params = vp.w_mu + vp.w_rho + vp.biases
    velocity = [np.zeros_like(p) for p in params]
    history = []
    for step in range(opt.steps):
        out = elbo_loss(vp, _minibatch(dataset, opt.batch_size, rng), grid, var_weights,
                        rng=rng, n_samples=n_samples)
        grads = out.grads["w_mu"] + out.grads["w_rho"] + out.grads["biases"]
        lr = opt.rate(step)
        for p, v, g in zip(params, velocity, grads):
            v *= opt.momentum
            v += g
            p -= lr * v
        history.append(LossBreakdown(out.l1, out.kl, out.total))
        if log_every and step % log_every == 0:
            print(f"posttrain step {step:6d}  l1 {out.l1:.6g}  kl {out.kl:.6g}")
    return vp, history
