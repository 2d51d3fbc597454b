"""Scenario configuration: YAML schema, built-in defaults and validation."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
KINDS = ("academic", "aortic-flow", "aortic-pressure", "custom")


@dataclass
class FitConfig:
    M: int = 3
    M_y: int = 1
    adaptive: bool = False
    thresholds: Any = None          # scalar, per-parameter mapping or null for the default


@dataclass
class GainConfig:
    state_weight: float = 1e4
    input_weight: float = 1.0
    series_order: int = 40
    pairing_nodes: int = 24


@dataclass
class SpectralConfig:
    N_x: int = 14
    N_y: int = 1


@dataclass
class CertifyConfig:
    grid: int = 40
    tol: float = 1e-11


@dataclass
class InitialConfig:
    plant: str = "sine"             # sine | exponential
    u_amp: float = 1.0
    v_amp: float = 1.0
    observer_ode: float = 1.0


@dataclass
class SimulateConfig:
    T: float = 10.0
    dt: Any = None                  # null selects the default step
    sample_dt: float = 0.01
    initial: InitialConfig = field(default_factory=InitialConfig)


@dataclass
class ODEConfig:
    waveform: Any = "flow"          # flow | pressure | null (use explicit harmonics)
    scale: float = 1.0
    a0: float = 0.0
    harmonics: list = field(default_factory=list)   # [[omega, a, b], ...]


@dataclass
class MeasurementConfig:
    m1: int = 1
    m2: Any = None                  # null means the last channel
    g: Any = None                   # null means unit weights


@dataclass
class ScenarioConfig:
    scenario: str = "academic"
    schema_version: int = SCHEMA_VERSION
    ensemble: dict = field(default_factory=dict)
    arteries: dict = field(default_factory=dict)
    ode: ODEConfig = field(default_factory=ODEConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    gains: GainConfig = field(default_factory=GainConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ScenarioConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version!r}")
        if self.scenario not in KINDS:
            raise ConfigError(f"scenario must be one of {KINDS}, got {self.scenario!r}")
        for name, v in (("fit.M", self.fit.M), ("fit.M_y", self.fit.M_y),
                        ("spectral.N_x", self.spectral.N_x), ("spectral.N_y", self.spectral.N_y),
                        ("gains.series_order", self.gains.series_order)):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.fit.M_y > self.fit.M:
            raise ConfigError("fit.M_y must not exceed fit.M")
        if not self.simulate.T > 0:
            raise ConfigError("simulate.T must be positive")
        if self.simulate.dt is not None and not float(self.simulate.dt) > 0:
            raise ConfigError("simulate.dt must be positive")
        if not self.simulate.sample_dt > 0:
            raise ConfigError("simulate.sample_dt must be positive")
        if self.simulate.initial.plant not in ("sine", "exponential"):
            raise ConfigError("simulate.initial.plant must be 'sine' or 'exponential'")
        if self.gains.state_weight <= 0 or self.gains.input_weight <= 0:
            raise ConfigError("gain weights must be positive")
        if self.ode.waveform not in ("flow", "pressure", None):
            raise ConfigError("ode.waveform must be 'flow', 'pressure' or null")
        if self.ode.waveform is None:
            for h in self.ode.harmonics:
                if len(h) != 3:
                    raise ConfigError("each harmonic is [omega, a, b]")
        if self.scenario == "custom":
            need = ("lam", "mu", "w", "theta", "q", "r", "f")
            missing = [k for k in need if k not in self.ensemble]
            if missing:
                raise ConfigError(f"custom ensemble lacks {missing}")
        return self


def _build(cls, data: Mapping, path: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {unknown}")
    kw = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        kw[name] = _build(sub, value, f"{path}.{name}" if path else name) if sub else value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_SECTIONS = {
    (ScenarioConfig, "ode"): ODEConfig,
    (ScenarioConfig, "measurement"): MeasurementConfig,
    (ScenarioConfig, "fit"): FitConfig,
    (ScenarioConfig, "gains"): GainConfig,
    (ScenarioConfig, "spectral"): SpectralConfig,
    (ScenarioConfig, "certify"): CertifyConfig,
    (ScenarioConfig, "simulate"): SimulateConfig,
    (SimulateConfig, "initial"): InitialConfig,
}


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and out[k]:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(kind: str) -> ScenarioConfig:
    """Settings of the built-in scenarios."""
    if kind == "academic":
        cfg = ScenarioConfig(scenario=kind)
        cfg.ode = ODEConfig(waveform="flow", scale=1e3)
        cfg.simulate = SimulateConfig(T=10.0, initial=InitialConfig("sine", 1.0, 1.0, 1.0))
    elif kind == "aortic-flow":
        cfg = ScenarioConfig(scenario=kind)
        cfg.ode = ODEConfig(waveform="flow", scale=1.0)
        cfg.measurement = MeasurementConfig(m1=4, m2=7, g=[1.0, 2.0, 4.0, 3.0])
        cfg.fit = FitConfig(M=3, M_y=3)
        cfg.spectral = SpectralConfig(N_x=14, N_y=3)
        cfg.simulate = SimulateConfig(T=5.0, initial=InitialConfig("exponential", 0.75, -0.5, 1.0))
    elif kind == "aortic-pressure":
        cfg = ScenarioConfig(scenario=kind)
        cfg.ode = ODEConfig(waveform="pressure", scale=1.0)
        cfg.gains = GainConfig(state_weight=100.0)
        cfg.simulate = SimulateConfig(T=5.0, initial=InitialConfig("exponential", 4.0, -1.0, 1.0))
    elif kind == "custom":
        cfg = ScenarioConfig(scenario=kind)
    else:
        raise ConfigError(f"scenario must be one of {KINDS}, got {kind!r}")
    return cfg


def config_from_dict(data: Mapping) -> ScenarioConfig:
    """Resolve a (possibly partial) mapping against the defaults of its scenario kind."""
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    kind = data.get("scenario", "academic")
    base = default_config(kind).to_dict()
    return _build(ScenarioConfig, _merge(base, data), "").validate()


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return config_from_dict(data or {})


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=None)
