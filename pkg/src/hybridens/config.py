"""Experiment configuration: a YAML tree of named sections with strict validation.

Every key has a documented default, so an empty file is a complete config.
Unknown keys, wrong types and values that violate a component's invariants
are rejected with a message naming the dotted key, e.g. ``spectrum.tau``.
"""
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dynamics import ToySystemConfig
from .ensemble import MODES, EnsembleConfig
from .perturbation import AR1Config, PerturbConfig
from .sphere import SphericalGrid, SpectrumParams
from .varnet import SKIPS, OptimizerConfig

__all__ = [
    "ConfigError",
    "DEFAULT_MU",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "config_to_dict",
]

# Per-variable perturbation amplitudes for the upper-air and surface fields.
DEFAULT_MU = {
    "z": 0.04, "q": 0.00, "t": 0.06, "u": 0.07, "v": 0.07,
    "t2m": 0.05, "10u": 0.07, "10v": 0.07, "msl": 0.05,
}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class GridSection:
    n_lat: int = 32
    n_lon: int = 64


@dataclass
class SpectrumSection:
    kappa: float = 0.5
    tau: float = 5.31
    gamma: float = 2.0
    L: int = 16
    R: float = 1.0


@dataclass
class AR1Section:
    dt: float = 6.0
    eta: float = 24.0
    init: str = "stationary"


@dataclass
class PerturbationSection:
    mu: dict = field(default_factory=lambda: dict(DEFAULT_MU))
    clip: Optional[float] = 1.0
    gaussian_sigma: float = 0.3


@dataclass
class OptimizerSection:
    lr: float = 1e-3
    momentum: float = 0.9
    steps: int = 2000
    batch_size: int = 64
    lr_min: float = 0.0
    schedule: str = "cosine"


@dataclass
class VISection:
    beta_kl: float = 1e-4
    prior_std: float = 2e-4
    prior_mean: str = "pretrained"
    init_std: Optional[float] = None
    n_samples: int = 1
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)


@dataclass
class NetworkSection:
    hidden: list = field(default_factory=lambda: [64, 64])
    skip: str = "persistence"
    out_scale: float = 0.1


@dataclass
class PretrainSection:
    input_noise: float = 0.0
    optimizer: OptimizerSection = field(default_factory=lambda: OptimizerSection(lr=3e-3, steps=5000))


@dataclass
class EnsembleSection:
    M: int = 6
    P: int = 8
    horizon: int = 40
    mode: str = "hybrid"
    n_inits: int = 10
    init_spacing: int = 120
    workers: int = 1


@dataclass
class DynamicsSection:
    forcing: float = 8.0
    coupling: float = 0.05
    dt_int: float = 1.2
    output_interval: float = 6.0
    variables: list = field(default_factory=lambda: ["t"])
    n_train: int = 20000
    n_val: int = 2000
    n_test: int = 4000
    spinup: int = 500


@dataclass
class MetricsSection:
    leads: list = field(default_factory=lambda: [24, 72, 120, 168, 240])


@dataclass
class SeedsSection:
    master: int = 0


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    spectrum: SpectrumSection = field(default_factory=SpectrumSection)
    ar1: AR1Section = field(default_factory=AR1Section)
    perturbation: PerturbationSection = field(default_factory=PerturbationSection)
    vi: VISection = field(default_factory=VISection)
    network: NetworkSection = field(default_factory=NetworkSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    output: OutputSection = field(default_factory=OutputSection)

    # component objects built from the sections
    def grid_obj(self) -> SphericalGrid:
        return SphericalGrid(self.grid.n_lat, self.grid.n_lon)

    def spectrum_obj(self) -> SpectrumParams:
        s = self.spectrum
        return SpectrumParams(s.kappa, s.tau, s.gamma, s.L, s.R)

    def ar1_obj(self) -> AR1Config:
        return AR1Config(self.ar1.dt, self.ar1.eta)

    def sppt_obj(self) -> PerturbConfig:
        return PerturbConfig(dict(self.perturbation.mu), self.perturbation.clip)

    def dynamics_obj(self) -> ToySystemConfig:
        d = self.dynamics
        return ToySystemConfig(d.forcing, len(d.variables), d.coupling, d.dt_int,
                               d.output_interval, self.grid_obj(), tuple(d.variables))

    def ensemble_obj(self, mode: str | None = None) -> EnsembleConfig:
        """Member layout for ``mode`` at the configured total ``M * P``."""
        e = self.ensemble
        mode = e.mode if mode is None else mode
        K = e.M * e.P
        M, P = {
            "hybrid": (e.M, e.P),
            "epistemic_only": (K, 1),
            "aleatoric_only": (1, K),
            "gaussian_baseline": (1, K),
            "deterministic": (1, 1),
        }[mode]
        return EnsembleConfig(M, P, e.horizon, mode)

    @staticmethod
    def optimizer_obj(o: OptimizerSection) -> OptimizerConfig:
        return OptimizerConfig(o.lr, o.momentum, o.steps, o.batch_size, o.lr_min, o.schedule)


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if value is None:
        raise ConfigError(key, "must not be null")
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(key, f"expected a number, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return list(value)
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a mapping, got {value!r}")
        return dict(value)
    raise ConfigError(key, f"unsupported type {_type_name(tp)}")


def _build(cls, data, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix, f"expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}.{key}" if prefix else str(key), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        key = f"{prefix}.{f.name}" if prefix else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            base = getattr(cls(), f.name)
            kwargs[f.name] = _build(tp, {**config_to_dict(base), **(data[f.name] or {})}, key)
        else:
            kwargs[f.name] = _coerce(data[f.name], tp, key)
    return cls(**kwargs)


def _check(key, fn):
    """Run a component constructor, re-raising its error under the config key."""
    try:
        return fn()
    except (ValueError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        section, _, _ = key.partition(".")
        first = str(msg).split(" ", 1)[0]
        if first.startswith(section + "."):
            raise ConfigError(first, str(msg).split(" ", 1)[1]) from None
        if first.isidentifier():
            raise ConfigError(f"{key}.{first}", str(msg).split(" ", 1)[1]) from None
        raise ConfigError(key, str(msg)) from None


def _positive_ints(values, key):
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{key}[{i}]", f"expected a positive integer, got {v!r}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every section against its component's invariants."""
    _check("grid", cfg.grid_obj)
    _check("spectrum", cfg.spectrum_obj)
    _check("ar1", cfg.ar1_obj)
    if cfg.ar1.init not in ("stationary", "zero"):
        raise ConfigError("ar1.init", f"must be 'stationary' or 'zero', got {cfg.ar1.init!r}")
    for name, value in cfg.perturbation.mu.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"perturbation.mu.{name}", f"expected a number, got {value!r}")
    _check("perturbation", cfg.sppt_obj)
    if not cfg.perturbation.gaussian_sigma >= 0:
        raise ConfigError("perturbation.gaussian_sigma", "must be >= 0")

    vi = cfg.vi
    if not vi.beta_kl >= 0:
        raise ConfigError("vi.beta_kl", f"must be >= 0, got {vi.beta_kl}")
    if not vi.prior_std > 0:
        raise ConfigError("vi.prior_std", f"must be > 0, got {vi.prior_std}")
    if vi.prior_mean not in ("zero", "pretrained"):
        raise ConfigError("vi.prior_mean", f"must be 'zero' or 'pretrained', got {vi.prior_mean!r}")
    if vi.init_std is not None and not vi.init_std > 0:
        raise ConfigError("vi.init_std", "must be > 0 or null")
    if vi.n_samples < 1:
        raise ConfigError("vi.n_samples", "must be >= 1")
    _check("vi.optimizer", lambda: cfg.optimizer_obj(vi.optimizer))
    _check("pretrain.optimizer", lambda: cfg.optimizer_obj(cfg.pretrain.optimizer))
    if not cfg.pretrain.input_noise >= 0:
        raise ConfigError("pretrain.input_noise", "must be >= 0")

    net = cfg.network
    if not net.hidden:
        raise ConfigError("network.hidden", "needs at least one hidden layer")
    _positive_ints(net.hidden, "network.hidden")
    if net.skip not in SKIPS:
        raise ConfigError("network.skip", f"must be one of {SKIPS}, got {net.skip!r}")
    if not net.out_scale > 0:
        raise ConfigError("network.out_scale", "must be > 0")

    e = cfg.ensemble
    if e.mode not in MODES:
        raise ConfigError("ensemble.mode", f"must be one of {MODES}, got {e.mode!r}")
    for name in ("M", "P", "horizon", "n_inits", "init_spacing", "workers"):
        if getattr(e, name) < 1:
            raise ConfigError(f"ensemble.{name}", "must be >= 1")
    _check("ensemble", cfg.ensemble_obj)

    d = cfg.dynamics
    if not d.variables:
        raise ConfigError("dynamics.variables", "needs at least one variable")
    for i, v in enumerate(d.variables):
        if not isinstance(v, str) or not v or any(c.isspace() for c in v):
            raise ConfigError(f"dynamics.variables[{i}]", f"expected a name without whitespace, got {v!r}")
    _check("dynamics", cfg.dynamics_obj)
    for name in ("n_train", "n_val", "n_test"):
        if getattr(d, name) < 3:
            raise ConfigError(f"dynamics.{name}", "must be >= 3")
    if d.spinup < 500:
        raise ConfigError("dynamics.spinup", "must be >= 500 output steps")
    needed = (e.n_inits - 1) * e.init_spacing + e.horizon + 2
    if needed > d.n_test:
        raise ConfigError("dynamics.n_test", f"{d.n_test} states cannot hold {e.n_inits} initializations "
                          f"of horizon {e.horizon} spaced {e.init_spacing} apart (need {needed})")
    for i, name in enumerate(d.variables):
        if name not in cfg.perturbation.mu:
            raise ConfigError(f"perturbation.mu.{name}", f"no amplitude for dynamics variable {name!r}")

    if not cfg.metrics.leads:
        raise ConfigError("metrics.leads", "needs at least one lead time")
    for i, lead in enumerate(cfg.metrics.leads):
        key = f"metrics.leads[{i}]"
        if isinstance(lead, bool) or not isinstance(lead, (int, float)):
            raise ConfigError(key, f"expected hours as a number, got {lead!r}")
        steps = lead / d.output_interval
        if abs(steps - round(steps)) > 1e-9 or not 1 <= round(steps) <= e.horizon:
            raise ConfigError(key, f"{lead} h is not a whole step within the {e.horizon}-step horizon")
    if cfg.seeds.master < 0:
        raise ConfigError("seeds.master", "must be >= 0")
    if not cfg.output.dir:
        raise ConfigError("output.dir", "must not be empty")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"parse error: {exc}") from None
    if data is None:
        data = {}
    return validate(_build(ExperimentConfig, data, ""))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)
