"""Pipeline stages shared by the command line and the tests: fit, gains, certify, simulate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .analysis import StabilityReport, certify, detectability_probe
from .config import ScenarioConfig
from .errors import AssumptionViolation, ConfigError
from .fit import ChannelData, ContinuumParams, FitError, FitReport, StepEnsemble, run_algorithm1
from .gains import (InjectionGains, ObserverGain, compute_gamma, kernel_gamma_fn, pairing_row,
                    project_P12, synthesize_L)
from .model import (RADII, ArteryPhysical, ChannelParams, HarmonicODE, assemble_network,
                    build_harmonic_ode, synthetic_waveform)
from .scenarios import CTHETA_DATA, CW_DATA, Q_DATA, R_DATA, academic_ensemble
from .sim import (PlantChannels, TimeSeries, assemble_continuum, assemble_observer,
                  assemble_plant_channels, project_profile, run_cascade)

log = logging.getLogger(__name__)

ARTERY_FIELDS = ("rho", "K_r", "h", "E", "b", "R_T", "p_frac")


@dataclass
class Problem:
    ensemble: StepEnsemble
    ode: HarmonicODE
    channels: list | None = None        # linearised arteries, when the scenario has them


@dataclass
class GainsResult:
    gain: ObserverGain
    injection: InjectionGains
    detectability: object
    gamma2_y: np.ndarray
    gamma2_at_zero: np.ndarray          # (ny, n)


@dataclass
class SimulationResult:
    series: TimeSeries
    projection_residual: float
    speed_max: float
    info: dict = field(default_factory=dict)


def build_ode(cfg: ScenarioConfig) -> HarmonicODE:
    o = cfg.ode
    try:
        if o.waveform is not None:
            return synthetic_waveform(o.waveform, float(o.scale))
        return build_harmonic_ode(float(o.a0) * float(o.scale),
                                  [(float(w), float(o.scale) * a, float(o.scale) * b)
                                   for w, a, b in o.harmonics])
    except ValueError as exc:
        raise ConfigError(f"ode: {exc}") from exc


def _poly_channels(rows, name: str) -> ChannelData:
    try:
        coefs = [np.atleast_1d(np.asarray(r, dtype=float)) for r in rows]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ensemble.{name}: expected lists of polynomial coefficients") from exc
    return ChannelData([lambda x, c=c: npoly.polyval(np.asarray(x, dtype=float), c) for c in coefs],
                       [lambda x, c=c: npoly.polyval(np.asarray(x, dtype=float), npoly.polyder(c))
                        for c in coefs])


def build_problem(cfg: ScenarioConfig) -> Problem:
    """Channel ensemble and signal generator described by the configuration."""
    ode = build_ode(cfg)
    meas = cfg.measurement
    try:
        if cfg.scenario == "academic":
            e = cfg.ensemble
            q = e.get("q", Q_DATA)
            ens = academic_ensemble(q, e.get("r", R_DATA), e.get("c_w", CW_DATA),
                                    e.get("c_theta", CTHETA_DATA), m1=meas.m1,
                                    m2=meas.m2, g=meas.g)
            return Problem(ens, ode)
        if cfg.scenario == "custom":
            e = cfg.ensemble
            m = len(e["q"])
            ens = StepEnsemble(lam=_poly_channels(e["lam"], "lam"), mu=_poly_channels(e["mu"], "mu"),
                               w=_poly_channels(e["w"], "w"), theta=_poly_channels(e["theta"], "theta"),
                               q=e["q"], r=e["r"], f=e["f"],
                               g=np.ones((meas.m2 or m) - meas.m1 + 1) if meas.g is None else meas.g,
                               m1=meas.m1, m2=meas.m2 or m)
            return Problem(ens, ode)
        a = cfg.arteries
        unknown = sorted(set(a) - set(ARTERY_FIELDS) - {"radii_mm"})
        if unknown:
            raise ConfigError(f"unknown artery field(s): {unknown}")
        radii = np.asarray(a.get("radii_mm", RADII * 1e3), dtype=float) * 1e-3
        kw = {k: float(a[k]) for k in ARTERY_FIELDS if k in a}
        kw.setdefault("p_frac", 1.0 / radii.size)
        arteries = [ArteryPhysical.from_radius(r, **kw) for r in radii]
        mode = "flow" if cfg.scenario == "aortic-flow" else "pressure"
        ens, ode, chans = assemble_network(arteries, ode, mode, meas.m1, meas.m2, meas.g)
        return Problem(ens, ode, chans)
    except ConfigError:
        raise
    except (FitError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{cfg.scenario} scenario: {exc}") from exc


def run_fit(cfg: ScenarioConfig, prob: Problem) -> tuple[ContinuumParams, FitReport]:
    f = cfg.fit
    try:
        return run_algorithm1(prob.ensemble, f.M, f.M_y, f.thresholds, adaptive=f.adaptive)
    except FitError as exc:
        raise ConfigError(f"fit: {exc}") from exc


def run_gains(cfg: ScenarioConfig, params: ContinuumParams, ode: HarmonicODE,
              n_gamma_y: int = 21) -> GainsResult:
    """Observer gain, injection gains and the detectability report.

    Raises ``AssumptionViolation`` naming the offending eigenvalue when the
    transfer denominators or output gains vanish.
    """
    g = cfg.gains
    A, C = ode.A, ode.C
    det = detectability_probe(params, A, C)
    if not det.ok:
        worst = det.flagged[0]
        s = complex(*worst["s"])
        raise AssumptionViolation(
            f"detectability fails at s = {s:.6g}: {worst['issue']} {worst['value']:.3g}")
    pairing = pairing_row(params, A, C, g.pairing_nodes, g.series_order)
    gain = synthesize_L(A, pairing, g.state_weight, g.input_weight)
    inj = project_P12(kernel_gamma_fn(params, A, C, g.series_order), gain.L,
                      cfg.spectral.N_x, cfg.spectral.N_y)
    ys = np.linspace(params.y1, params.y2, n_gamma_y)
    g20 = compute_gamma(params, A, C, ys, g.series_order).gamma2_at_zero()
    return GainsResult(gain, inj, det, ys, g20)


def run_certify(cfg: ScenarioConfig, params: ContinuumParams) -> StabilityReport:
    report, _ = certify(params, n=cfg.certify.grid, tol=cfg.certify.tol)
    return report


def plant_initial_state(cfg: ScenarioConfig, prob: Problem, N_x: int) -> tuple[np.ndarray, float]:
    """Projected plant initial coefficients and the worst relative projection residual."""
    ini = cfg.simulate.initial
    blocks, worst = [], 0.0
    m = prob.ensemble.m
    for i in range(m):
        if ini.plant == "sine":
            fu = lambda x: ini.u_amp * np.sin(np.pi * x)          # noqa: E731
            fv = lambda x: ini.v_amp * np.sin(np.pi * x)          # noqa: E731
        else:
            if prob.channels is None:
                raise ConfigError("exponential initial data needs an artery scenario")
            c: ChannelParams = prob.channels[i]
            fu = lambda x, c=c: ini.u_amp * np.exp(c.sigma / c.lam * x)    # noqa: E731
            fv = lambda x, c=c: ini.v_amp * np.exp(-c.psi / c.mu * x)      # noqa: E731
        cu, ru = project_profile(fu, N_x)
        cv, rv = project_profile(fv, N_x)
        worst = max(worst, ru, rv)
        blocks.append(np.concatenate([cu, cv]))
    return np.concatenate(blocks), worst


def speed_bound(ens: StepEnsemble, params: ContinuumParams | None = None) -> float:
    xs = np.linspace(0.0, 1.0, 101)
    s = max(np.max(ens.lam.values(xs)), np.max(ens.mu.values(xs)))
    if params is not None:
        s = max(s, np.max(params.lam.grid(xs, xs)), np.max(params.mu.grid(xs, xs)))
    return float(s)


def run_simulate(cfg: ScenarioConfig, prob: Problem, params: ContinuumParams,
                 gains: GainsResult | None, N_x: int | None = None,
                 plant=None, plant_init=None) -> SimulationResult:
    """Integrate plant, signal generator and observer over the configured horizon.

    ``plant`` and ``plant_init`` replace the channel plant and its initial data
    (for instance with the continuum model itself).
    """
    sim, sp = cfg.simulate, cfg.spectral
    N_x = sp.N_x if N_x is None else N_x
    ens = prob.ensemble
    inj = gains.injection if gains is not None else None
    if inj is not None and inj.N_x != N_x:
        inj = project_P12(kernel_gamma_fn(params, prob.ode.A, prob.ode.C, cfg.gains.series_order),
                          gains.gain.L, N_x, sp.N_y)
    observer = assemble_observer(assemble_continuum(params, N_x, sp.N_y), inj, params.g,
                                 params.y1, params.y2)
    L = gains.gain.L if gains is not None else np.zeros(prob.ode.n)
    if plant is None:
        plant = PlantChannels(assemble_plant_channels(ens, N_x), ens.m1, ens.m2, ens.g)
        init, resid = plant_initial_state(cfg, prob, N_x)
    else:
        if plant_init is None:
            raise ConfigError("a replacement plant needs its initial state")
        init, resid = np.asarray(plant_init, dtype=float), 0.0
    speed = speed_bound(ens, params)
    Xhat0 = np.full(prob.ode.n, float(sim.initial.observer_ode))
    ts = run_cascade(prob.ode, plant, observer, L, sim.T, init, Xhat0=Xhat0,
                     dt=None if sim.dt is None else float(sim.dt), speed_max=speed,
                     sample_dt=sim.sample_dt)
    log.info("simulated T=%g with dt=%.3g", sim.T, ts.dt)
    return SimulationResult(ts, resid, speed, {"dt": ts.dt, "N_x": N_x, "N_y": sp.N_y})
