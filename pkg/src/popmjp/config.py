"""Run configuration: schema, loading and translation into library objects.

Configs are YAML (JSON is accepted as a subset) with four blocks, ``model``,
``data``, ``sampler`` (or ``samplers`` for comparisons) and ``run``.
Unknown keys are rejected.  A run manifest written by ``infer`` is itself a
valid config source.
"""
from __future__ import annotations

from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import InitialDistribution
from .envelopes import GammaEnvelopeParams, NormalEnvelopeParams, SplitScheme
from .models import BirthDeathModel, GammaPrior, LotkaVolterraModel, SIRModel
from .samplers import Psi, SamplerConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "build_model", "build_sampler"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PriorBlock(_Strict):
    shape: float = Field(1.0, gt=0)
    rate: float = Field(0.01, gt=0)


class ModelBlock(_Strict):
    kind: Literal["birth_death", "sir", "lotka_volterra"]
    capacity: int = Field(..., ge=1, description="N: capacity or population size")
    horizon: Optional[float] = Field(None, gt=0)
    seasonal: bool = True
    params: dict[str, float] = Field(default_factory=dict)
    priors: dict[str, PriorBlock] = Field(default_factory=dict)
    initial: Optional[list[int]] = None
    infer: Optional[list[str]] = None

    @model_validator(mode="after")
    def _names(self):
        names = {"birth_death": ("lam", "mu"), "sir": ("beta", "gamma"),
                 "lotka_volterra": ("alpha", "beta", "delta", "gamma")}[self.kind]
        for key in list(self.params) + list(self.priors) + list(self.infer or []):
            if key not in names:
                raise ValueError(f"unknown parameter {key!r} for {self.kind}; expected {names}")
        if self.kind != "sir" and self.horizon is None:
            raise ValueError("horizon is required")
        return self


class DataBlock(_Strict):
    kind: Literal["noisy", "exact", "removals"] = "noisy"
    count: int = Field(0, ge=0)
    sigma: Optional[float] = Field(None, gt=0)
    path: Optional[str] = None
    final_removed: Optional[int] = Field(None, ge=1)
    window: Optional[float] = Field(None, gt=0)


class EnvelopeBlock(_Strict):
    kind: Literal["normal", "gamma"]
    mu: float
    sigma: float = Field(..., gt=0)
    kappa: float = Field(1.0, gt=0)
    lag: Optional[int] = Field(None, ge=1)
    alpha: int = Field(2, ge=1)


class SplitBlock(_Strict):
    kind: Literal["bridge", "partition"]
    lag: int = Field(..., ge=1)
    width: Optional[int] = Field(None, ge=1)


class SamplerBlock(_Strict):
    name: Optional[str] = None
    variant: Literal["naive", "stationary", "nonstationary", "vanilla", "mh"] = "nonstationary"
    psi: Literal["exit", "half-exit", "vanilla"] = "exit"
    omega_factor: float = Field(1.5, gt=1)
    envelope: Optional[EnvelopeBlock] = None
    split: Optional[SplitBlock] = None
    max_retries: int = Field(25, ge=0)
    memory_budget_mb: float = Field(512.0, gt=0)
    engine: Literal["compiled", "reference"] = "compiled"

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        env = f"+{self.envelope.kind}" if self.envelope else ""
        return f"{self.variant}{env}"


class RunBlock(_Strict):
    sweeps: int = Field(1000, ge=0)
    burn_in: int = Field(0, ge=0)
    thin: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    output: str = "out"
    grid: int = Field(200, ge=2)
    level: float = Field(0.95, gt=0, lt=1)


class CompareBlock(_Strict):
    benchmark: str
    replicates: int = Field(1, ge=1)


class RunConfig(_Strict):
    model: ModelBlock
    data: DataBlock = Field(default_factory=DataBlock)
    sampler: Optional[SamplerBlock] = None
    samplers: Optional[list[SamplerBlock]] = None
    run: RunBlock = Field(default_factory=RunBlock)
    compare: Optional[CompareBlock] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.sampler is None and not self.samplers:
            self.sampler = SamplerBlock()
        if self.model.kind == "sir":
            if self.data.kind != "removals":
                raise ValueError("SIR data must be of kind 'removals'")
        elif self.data.kind == "removals":
            raise ValueError("removal data needs an SIR model")
        if self.data.kind == "noisy" and self.data.sigma is None and self.data.path is None:
            raise ValueError("noisy data needs sigma")
        for s in self.all_samplers():
            if s.variant == "mh" and self.model.kind != "sir":
                raise ValueError("the Metropolis-Hastings baseline is only defined for SIR")
        if self.samplers:
            labels = [s.label for s in self.samplers]
            if len(set(labels)) != len(labels):
                raise ValueError("sampler labels must be unique")
            if self.compare is not None and self.compare.benchmark not in labels:
                raise ValueError(f"benchmark {self.compare.benchmark!r} is not among {labels}")
        return self

    def all_samplers(self) -> list[SamplerBlock]:
        return list(self.samplers) if self.samplers else [self.sampler]


def load_config(path) -> RunConfig:
    """Parse and validate a config file or a run manifest."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    if isinstance(raw, dict) and "config" in raw and "versions" in raw:
        raw = raw["config"]
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(str(err)) from err


_DEFAULTS = {
    "birth_death": {"lam": 0.5, "mu": 0.01},
    "sir": {"beta": None, "gamma": 1.0},
    "lotka_volterra": {"alpha": 0.125, "beta": 0.005, "delta": 0.005, "gamma": 0.1},
}


def model_params(block: ModelBlock) -> dict:
    p = dict(_DEFAULTS[block.kind])
    if block.kind == "sir":
        p["beta"] = 2.0 / block.capacity
    p.update(block.params)
    return p


def build_model(block: ModelBlock, data: DataBlock | None = None, removal_times=None):
    """Library model for a model block."""
    p = model_params(block)
    pri = {k: GammaPrior(v.shape, v.rate) for k, v in block.priors.items()}
    if block.kind == "birth_death":
        init = InitialDistribution.point(block.initial) if block.initial else None
        m = BirthDeathModel(block.capacity, p["lam"], p["mu"], block.horizon, block.seasonal,
                            prior_mu=pri.get("mu"), prior_lam=pri.get("lam"),
                            infer_lam="lam" in (block.infer or []), initial=init)
        if block.infer is not None:
            m.free[:] = [n in block.infer for n in m.param_names]
        return m
    if block.kind == "lotka_volterra":
        names = LotkaVolterraModel.param_names
        priors = [pri.get(n, GammaPrior()) for n in names]
        if not block.seasonal:
            raise ConfigError("the predator-prey model is always seasonal")
        m = LotkaVolterraModel(block.capacity, [p[n] for n in names], block.horizon, block.initial, priors)
        if block.infer is not None:
            m.free[:] = [n in block.infer for n in names]
        return m
    window = None if data is None else data.window
    priors = [pri.get(n, GammaPrior()) for n in SIRModel.param_names]
    m = SIRModel(block.capacity, p["beta"], p["gamma"], removal_times, priors, window=window)
    if block.infer is not None:
        m.free[:] = [n in block.infer for n in SIRModel.param_names]
    return m


def build_sampler(block: SamplerBlock) -> SamplerConfig:
    """Sampler configuration for a sampler block (``mh`` maps to a placeholder)."""
    env = None
    if block.envelope is not None:
        e = block.envelope
        if e.kind == "normal":
            env = NormalEnvelopeParams(e.mu, e.sigma, e.kappa)
        else:
            if e.lag is None:
                raise ConfigError("a gamma envelope needs a lag")
            env = GammaEnvelopeParams(e.mu, e.sigma, e.kappa, e.lag, e.alpha)
    split = None
    if block.split is not None:
        s = block.split
        split = SplitScheme(s.kind, s.lag, s.width if s.width is not None else 1)
    variant = "nonstationary" if block.variant == "mh" else block.variant
    return SamplerConfig(variant, Psi.preset(block.psi) if variant != "vanilla" else "exit",
                         omega_factor=block.omega_factor, envelope=env, split=split,
                         max_retries=block.max_retries, memory_budget=block.memory_budget_mb * 2**20,
                         engine=block.engine)


def dump_config(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json", exclude_none=True)
