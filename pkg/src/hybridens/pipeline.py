"""Stage orchestration: data, pre-training, variational post-training, ensembles, scores.

Output directory layout::

    config.yaml                 resolved config (defaults applied)
    data/{train,val,test}.field toy trajectories (see :mod:`hybridens.fieldio`)
    checkpoints/pretrained.npz  deterministic network + normalization
    checkpoints/posterior.npz   variational parameters
    logs/*.csv                  training loss histories
    ensembles/<mode>.npz        forecasts, truth and failure mask
    seeds/<mode>.json           seed record for exact replay
    metrics/metrics.{csv,json}  scores for every ensemble archive
    ablation/...                the three single/hybrid schemes on shared seeds

Forecasts run in normalized units (per-variable train mean/std) and are
mapped back to physical units before scoring.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config
from .dynamics import Trajectory, make_dataset
from .ensemble import MODES, PerturbationSetup, generate_ensemble
from .fieldio import FieldFile, read_field, write_field
from .metrics import CSV_COLUMNS, metric_table, report_rows
from .perturbation import StatePair
from .seeding import rng_for, seed_tree
from .varnet import DenseNet, VariationalParams, forward, init_dense, posttrain_vi, pretrain, weighted_l1

__all__ = [
    "STAGES",
    "ABLATION_SCHEMES",
    "PrerequisiteError",
    "Forecaster",
    "run_pipeline",
    "save_network",
    "load_network",
    "save_posterior",
    "load_posterior",
]

log = logging.getLogger(__name__)

STAGES = ("gen-data", "pretrain", "posttrain", "ensemble", "metrics", "ablation", "all")
ABLATION_SCHEMES = ("epistemic_only", "aleatoric_only", "hybrid")
SPLITS = ("train", "val", "test")


class PrerequisiteError(RuntimeError):
    """A stage was asked to run before the artifacts it consumes exist."""


@dataclass
class Forecaster:
    """A network together with the normalization it was trained under."""

    net: DenseNet
    mean: np.ndarray  # (n_vars,)
    std: np.ndarray

    def normalize(self, x):
        return (x - self.mean[:, None, None]) / self.std[:, None, None]

    def denormalize(self, x):
        return x * self.std[:, None, None] + self.mean[:, None, None]


# ---------------------------------------------------------------- checkpoints

def save_network(path, fc: Forecaster) -> None:
    arrays = {f"w{k}": w for k, w in enumerate(fc.net.weights)}
    arrays.update({f"b{k}": b for k, b in enumerate(fc.net.biases)})
    np.savez(path, n_layers=len(fc.net.weights), skip=fc.net.skip, mean=fc.mean, std=fc.std, **arrays)


def load_network(path) -> Forecaster:
    with np.load(path) as z:
        n = int(z["n_layers"])
        net = DenseNet([z[f"w{k}"] for k in range(n)], [z[f"b{k}"] for k in range(n)], str(z["skip"]))
        return Forecaster(net, z["mean"], z["std"])


def save_posterior(path, vp: VariationalParams) -> None:
    arrays = {}
    for k in range(len(vp.w_mu)):
        arrays[f"mu{k}"] = vp.w_mu[k]
        arrays[f"rho{k}"] = vp.w_rho[k]
        arrays[f"b{k}"] = vp.biases[k]
        if vp.prior_mu is not None:
            arrays[f"prior{k}"] = vp.prior_mu[k]
    np.savez(path, n_layers=len(vp.w_mu), skip=vp.skip, prior_std=vp.prior_std,
             beta_kl=vp.beta_kl, has_prior_mu=vp.prior_mu is not None, **arrays)


def load_posterior(path) -> VariationalParams:
    with np.load(path) as z:
        n = int(z["n_layers"])
        prior = [z[f"prior{k}"] for k in range(n)] if bool(z["has_prior_mu"]) else None
        return VariationalParams(
            [z[f"mu{k}"] for k in range(n)], [z[f"rho{k}"] for k in range(n)],
            [z[f"b{k}"] for k in range(n)], float(z["prior_std"]), float(z["beta_kl"]),
            prior, str(z["skip"]),
        )


# ---------------------------------------------------------------- helpers

def _need(path: Path, stage: str, what: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(f"missing {what} ({path}); run the '{stage}' stage first")
    return path


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _training_pairs(states: np.ndarray, fc: Forecaster):
    """(inputs, targets) from consecutive normalized states."""
    s = fc.normalize(states)
    n = len(s)
    d = s[0].size
    x = np.concatenate([s[:-2].reshape(n - 2, d), s[1:-1].reshape(n - 2, d)], axis=1)
    return x, s[2:].reshape(n - 2, d)


def _load_split(out: Path, name: str) -> FieldFile:
    return read_field(_need(out / "data" / f"{name}.field", "gen-data", f"{name} data"))


def _setup(cfg: ExperimentConfig) -> PerturbationSetup:
    return PerturbationSetup(cfg.spectrum_obj(), cfg.ar1_obj(), cfg.sppt_obj(),
                             cfg.perturbation.gaussian_sigma, cfg.ar1.init)


# ---------------------------------------------------------------- stages

def stage_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    d = cfg.dynamics
    system = cfg.dynamics_obj()
    data = make_dataset(system, d.n_train, d.n_val, d.n_test, seed_tree(cfg.seeds.master, "data"), d.spinup)
    (out / "data").mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        traj: Trajectory = data[name]
        write_field(out / "data" / f"{name}.field", FieldFile(traj.states, system.variables, traj.start_index))
    log.info("gen-data: %d/%d/%d states written", d.n_train, d.n_val, d.n_test)


def stage_pretrain(cfg: ExperimentConfig, out: Path) -> None:
    train, val = _load_split(out, "train"), _load_split(out, "val")
    grid = cfg.grid_obj()
    mean = train.values.mean(axis=(0, 2, 3))
    std = train.values.std(axis=(0, 2, 3))
    d = train.values[0].size
    sizes = [2 * d, *cfg.network.hidden, d]
    net = init_dense(sizes, rng_for(cfg.seeds.master, "network-init"), cfg.network.skip, cfg.network.out_scale)
    fc = Forecaster(net, mean, std)
    opt = cfg.optimizer_obj(cfg.pretrain.optimizer)
    net, history = pretrain(net, _training_pairs(train.values, fc), grid, opt,
                            rng_for(cfg.seeds.master, "pretrain"), input_noise=cfg.pretrain.input_noise)
    fc = Forecaster(net, mean, std)
    xv, yv = _training_pairs(val.values, fc)
    summary = {
        "val_l1": weighted_l1(forward(net, xv), yv, grid, 1.0),
        "val_l1_persistence": weighted_l1(xv[:, d:], yv, grid, 1.0),
        "train_l1_last": float(np.mean(history[-100:])) if history else math.nan,
    }
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    save_network(out / "checkpoints" / "pretrained.npz", fc)
    _write_csv(out / "logs" / "pretrain.csv", ("step", "l1"), enumerate(history))
    _write_json(out / "logs" / "pretrain_summary.json", summary)
    log.info("pretrain: validation L1 %.4f (persistence %.4f)", summary["val_l1"], summary["val_l1_persistence"])


def stage_posttrain(cfg: ExperimentConfig, out: Path) -> None:
    fc = load_network(_need(out / "checkpoints" / "pretrained.npz", "pretrain", "pretrained network"))
    train = _load_split(out, "train")
    vi = cfg.vi
    vp, history = posttrain_vi(
        fc.net, _training_pairs(train.values, fc), cfg.grid_obj(), cfg.optimizer_obj(vi.optimizer),
        rng_for(cfg.seeds.master, "posttrain"), vi.prior_std, vi.beta_kl, 1.0, vi.prior_mean,
        vi.init_std, vi.n_samples,
    )
    save_posterior(out / "checkpoints" / "posterior.npz", vp)
    _write_csv(out / "logs" / "posttrain.csv", ("step", "l1", "kl", "total"),
               ((k, h.l1, h.kl, h.total) for k, h in enumerate(history)))
    sig = np.concatenate([s.ravel() for s in vp.sigma])
    log.info("posttrain: final l1 %.4f, mean weight std %.3g", history[-1].l1 if history else math.nan, sig.mean())


def _model_for(mode: str, out: Path):
    """Variational params for sampling schemes, the posterior mean for the
    perturbation-only scheme, and the pretrained network for the baselines."""
    fc = load_network(_need(out / "checkpoints" / "pretrained.npz", "pretrain", "pretrained network"))
    if mode in ("deterministic", "gaussian_baseline"):
        return fc, fc.net
    vp = load_posterior(_need(out / "checkpoints" / "posterior.npz", "posttrain", "variational posterior"))
    return fc, (vp.mean_net() if mode == "aleatoric_only" else vp)


def _run_init(args):
    model, pair, setup, ens_cfg, grid, seed = args
    run = generate_ensemble(model, pair, setup, ens_cfg, grid, seed)
    return run.trajectories, run.failed, run.seeds


def run_scheme(cfg: ExperimentConfig, out: Path, mode: str, dest: Path, workers: int | None = None) -> Path:
    """Roll out ``mode`` from every test initialization and archive it under ``dest``."""
    fc, model = _model_for(mode, out)
    test = _load_split(out, "test")
    e = cfg.ensemble
    ens_cfg = cfg.ensemble_obj(mode)
    grid = cfg.grid_obj()
    setup = _setup(cfg)
    variables = test.variables
    tasks, truth, starts = [], [], []
    for k in range(e.n_inits):
        i0 = k * e.init_spacing
        pair = StatePair(fc.normalize(test.values[i0]), fc.normalize(test.values[i0 + 1]), variables)
        tasks.append((model, pair, setup, ens_cfg, grid, seed_tree(cfg.seeds.master, "init", k)))
        truth.append(test.values[i0 + 2:i0 + 2 + e.horizon])
        starts.append(test.time_start + i0 + 1)
    workers = e.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_init, tasks))
    else:
        results = [_run_init(t) for t in tasks]
    K = ens_cfg.n_members
    forecasts = np.empty((e.n_inits, K, e.horizon) + test.values.shape[1:])
    failed = np.empty((e.n_inits, K), dtype=bool)
    for k, (traj, fail, _) in enumerate(results):
        forecasts[k] = fc.denormalize(traj.reshape((K,) + traj.shape[2:]))
        failed[k] = fail.ravel()
    dest.mkdir(parents=True, exist_ok=True)
    archive = dest / "ensembles" / f"{mode}.npz"
    archive.parent.mkdir(parents=True, exist_ok=True)
    np.savez(archive, forecasts=forecasts, truth=np.stack(truth), failed=failed,
             init_time=np.array(starts), variables=np.array(variables), M=ens_cfg.M, P=ens_cfg.P,
             interval=cfg.dynamics.output_interval)
    record = {
        "master": cfg.seeds.master,
        "mode": mode,
        "M": ens_cfg.M,
        "P": ens_cfg.P,
        "horizon": ens_cfg.horizon,
        "inits": [
            {"index": k, "time": int(starts[k]), "seed": tasks[k][-1], **results[k][2]}
            for k in range(e.n_inits)
        ],
        "failed_members": int(failed.sum()),
    }
    _write_json(dest / "seeds" / f"{mode}.json", record)
    log.info("%s: %d inits x %d members, %d failed", mode, e.n_inits, K, int(failed.sum()))
    return archive


def _load_archives(paths):
    forecasts, truth, variables, interval = {}, None, None, None
    for p in paths:
        with np.load(p) as z:
            forecasts[p.stem] = z["forecasts"]
            if truth is None:
                truth, variables, interval = z["truth"], [str(v) for v in z["variables"]], float(z["interval"])
    return forecasts, truth, variables, interval


def score(cfg: ExperimentConfig, archives, dest: Path, stem: str = "metrics"):
    forecasts, truth, variables, interval = _load_archives(archives)
    reports = metric_table(forecasts, truth, cfg.grid_obj(), variables, cfg.metrics.leads, interval)
    rows = report_rows(reports)
    _write_csv(dest / f"{stem}.csv", CSV_COLUMNS, rows)
    _write_json(dest / f"{stem}.json", [dict(zip(CSV_COLUMNS, r)) for r in rows])
    return reports


def stage_ensemble(cfg: ExperimentConfig, out: Path, mode: str | None = None, workers: int | None = None) -> None:
    run_scheme(cfg, out, mode or cfg.ensemble.mode, out, workers)


def stage_metrics(cfg: ExperimentConfig, out: Path) -> None:
    archives = sorted((out / "ensembles").glob("*.npz")) if (out / "ensembles").is_dir() else []
    if not archives:
        raise PrerequisiteError(f"no ensemble archives in {out / 'ensembles'}; run the 'ensemble' stage first")
    score(cfg, archives, out / "metrics")


def stage_ablation(cfg: ExperimentConfig, out: Path, workers: int | None = None) -> None:
    dest = out / "ablation"
    archives = [run_scheme(cfg, out, mode, dest, workers) for mode in ABLATION_SCHEMES]
    reports = score(cfg, archives, dest, "metrics")
    table = sorted(reports, key=lambda r: (r.variable, r.lead_hours, ABLATION_SCHEMES.index(r.scheme)))
    _write_csv(
        dest / "ablation.csv",
        ("scheme", "variable", "lead_hours", "ssr", "spread", "rmse", "crps", "n_members", "n_inits"),
        ((r.scheme, r.variable, r.lead_hours, r.ssr, r.spread, r.rmse, r.crps, r.K, r.n_inits) for r in table),
    )
    for r in table:
        log.info("ablation %-15s %s %6.0f h  SSR %.3f", r.scheme, r.variable, r.lead_hours, r.ssr)


def run_pipeline(cfg: ExperimentConfig, stage: str, mode: str | None = None, workers: int | None = None) -> int:
    """Run one stage (or ``all``) and return a process exit status."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    if mode is not None and mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode is not None:
        cfg.ensemble_obj(mode)  # validates the member layout for the override
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    steps = {
        "gen-data": lambda: stage_gen_data(cfg, out),
        "pretrain": lambda: stage_pretrain(cfg, out),
        "posttrain": lambda: stage_posttrain(cfg, out),
        "ensemble": lambda: stage_ensemble(cfg, out, mode, workers),
        "metrics": lambda: stage_metrics(cfg, out),
        "ablation": lambda: stage_ablation(cfg, out, workers),
    }
    order = list(steps) if stage == "all" else [stage]
    for name in order:
        log.info("stage %s", name)
        steps[name]()
    return 0
