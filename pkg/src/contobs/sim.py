"""Spectral Galerkin discretisation and coupled simulation of plant and observer.

Each PDE state is expanded on ``phi_k(x, y) = L_i(x) L_j(y)`` with the
x-fastest ordering ``k = i + (N_x + 1) j``. Testing the weak form against every
``phi_k`` gives ``M c' = K c + B CX``; inflow boundary conditions enter through
the integration-by-parts terms. Rows of ``K`` correspond to test functions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .basis import gauss_nodes, shifted_legendre, shifted_legendre_deriv
from .errors import ConfigError, NumericalFailure
from .fit import ContinuumParams, StepEnsemble
from .gains import InjectionGains
from .model import HarmonicODE

log = logging.getLogger(__name__)

RK4_MARGIN = 2.5          # |dt * spectral radius| kept inside the RK4 stability region
DIVERGENCE_FACTOR = 1e8


@dataclass
class GalerkinOperator:
    """``M c' = K c + B CX`` (+ output injection) for one 2x2 continuum or channel."""

    N_x: int
    N_y: int
    mass: np.ndarray                  # (nb,) diagonal of M
    K: np.ndarray                     # (2 nb, 2 nb) [[Kuu, Kvu], [Kuv, Kvv]]
    B: np.ndarray                     # (nb,) input of the v equation
    Cv: np.ndarray | None = None      # (nb,) output row acting on c_v
    P: np.ndarray | None = None       # (2 nb,) injection [P1; P2]

    @property
    def nb(self) -> int:
        return (self.N_x + 1) * (self.N_y + 1)

    @property
    def size(self) -> int:
        return 2 * self.nb

    def block(self, name: str) -> np.ndarray:
        nb = self.nb
        sl = {"uu": (slice(0, nb), slice(0, nb)), "vu": (slice(0, nb), slice(nb, None)),
              "uv": (slice(nb, None), slice(0, nb)), "vv": (slice(nb, None), slice(nb, None))}
        return self.K[sl[name]]

    @property
    def Kuu(self):
        return self.block("uu")

    @property
    def Kvu(self):
        return self.block("vu")

    @property
    def Kuv(self):
        return self.block("uv")

    @property
    def Kvv(self):
        return self.block("vv")

    @property
    def minv(self) -> np.ndarray:
        return 1.0 / np.concatenate([self.mass, self.mass])

    @property
    def input_vector(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.nb), self.B])

    def injected_K(self) -> np.ndarray:
        """``K`` with ``P1 C^v`` and ``P2 C^v`` added to the v columns."""
        if self.P is None or self.Cv is None:
            return self.K.copy()
        out = self.K.copy()
        out[:, self.nb:] += np.outer(self.P, self.Cv)
        return out

    def output(self, c) -> float:
        return float(self.Cv @ c[self.nb:])

    def system_matrix(self) -> np.ndarray:
        return self.minv[:, None] * self.K

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.system_matrix()))))


def _mass(N_x: int, N_y: int) -> np.ndarray:
    i = np.arange(N_x + 1)
    j = np.arange(N_y + 1)
    return (1.0 / np.outer(2 * j + 1, 2 * i + 1)).ravel()


def _assemble(N_x, N_y, rx, ry, Ly, lam, lam_x, mu, mu_x, W, th,
              lam0, lam1, mu0, mu1, Q, R, F) -> GalerkinOperator:
    """Core assembly; field arrays are ``(nx, ny)`` on the tensor rule, boundary arrays ``(ny,)``."""
    Lx = shifted_legendre(N_x, rx.nodes)                      # (N_x+1, nx)
    dLx = shifted_legendre_deriv(N_x, rx.nodes)
    ii, jj = np.meshgrid(np.arange(N_x + 1), np.arange(N_y + 1))
    ii, jj = ii.ravel(), jj.ravel()
    Phi = Lx[ii][:, :, None] * Ly[jj][:, None, :]              # (nb, nx, ny)
    dPhi = dLx[ii][:, :, None] * Ly[jj][:, None, :]
    w2 = np.outer(rx.weights, ry.weights)

    def gram(test, f, trial):
        return np.einsum("kxy,xy,lxy->kl", test, w2 * f, trial)

    sign0 = (-1.0) ** ii                                         # L_i(0)
    B0 = sign0[:, None] * Ly[jj]                                 # phi_k(0, y), (nb, ny)
    B1 = Ly[jj]                                                  # phi_k(1, y)

    def edge(Bv, f):
        return (Bv * (ry.weights * f)) @ Bv.T

    Kuu = gram(Phi, lam_x, Phi) + gram(dPhi, lam, Phi) - edge(B1, lam1)
    Kvu = gram(Phi, W, Phi) + edge(B0, Q * lam0)
    Kuv = gram(Phi, th, Phi) + edge(B1, R * mu1)
    Kvv = -gram(Phi, mu_x, Phi) - gram(dPhi, mu, Phi) - edge(B0, mu0)
    Bvec = B1 @ (ry.weights * F * mu1)
    K = np.block([[Kuu, Kvu], [Kuv, Kvv]])
    return GalerkinOperator(N_x, N_y, _mass(N_x, N_y), K, Bvec)


def _rule_sizes(N_x, N_y, M=0, M_y=0):
    return 2 * N_x + M + 24, N_y + M_y + 8


def assemble_continuum(params: ContinuumParams, N_x: int, N_y: int) -> GalerkinOperator:
    """Galerkin operator of the continuum PDE with polynomial parameters."""
    if N_x < 0 or N_y < 0:
        raise ValueError("N_x, N_y must be nonnegative")
    M = max(params.lam.total_order, params.mu.total_order, params.W.total_order,
            params.theta.total_order)
    nx, ny = _rule_sizes(N_x, N_y, M, M)
    rx, ry = gauss_nodes(nx), gauss_nodes(ny)
    X, Yg = rx.nodes, ry.nodes
    lam_x, mu_x = params.lam.diff_x(), params.mu.diff_x()
    zeros, ones = np.zeros(ny), np.ones(ny)
    return _assemble(
        N_x, N_y, rx, ry, shifted_legendre(N_y, Yg),
        params.lam.grid(X, Yg), lam_x.grid(X, Yg), params.mu.grid(X, Yg), mu_x.grid(X, Yg),
        params.W.grid(X, Yg), params.theta.grid(X, Yg),
        params.lam(zeros, Yg), params.lam(ones, Yg), params.mu(zeros, Yg), params.mu(ones, Yg),
        params.Q(Yg), params.R(Yg), params.F(Yg))


def assemble_channel(lam: Callable, lam_x: Callable, mu: Callable, mu_x: Callable,
                     W: Callable, theta: Callable, q: float, r: float, f: float,
                     N_x: int) -> GalerkinOperator:
    """Galerkin operator of one large-scale channel (functions of x only, N_y = 0)."""
    nx, _ = _rule_sizes(N_x, 0)
    rx = gauss_nodes(nx)
    ry = gauss_nodes(1)
    X = rx.nodes

    def col(fn, x):
        return np.broadcast_to(np.asarray(fn(x), dtype=float), np.shape(x))[:, None]

    def pt(fn, v):
        return np.atleast_1d(np.asarray(fn(np.array([v])), dtype=float))
    return _assemble(
        N_x, 0, rx, ry, np.ones((1, 1)),
        col(lam, X), col(lam_x, X), col(mu, X), col(mu_x, X), col(W, X), col(theta, X),
        pt(lam, 0.0), pt(lam, 1.0), pt(mu, 0.0), pt(mu, 1.0),
        np.array([q]), np.array([r]), np.array([f]))


def assemble_plant_channels(ens: StepEnsemble, N_x: int) -> list[GalerkinOperator]:
    """One N_y = 0 operator per channel of the large-scale system."""
    ops = []
    for i in range(ens.m):
        def pick(data, k=i):
            return lambda x: data.values(x)[k]

        def dpick(data, k=i):
            return lambda x: data.derivative_values(x)[k]
        ops.append(assemble_channel(pick(ens.lam), dpick(ens.lam), pick(ens.mu), dpick(ens.mu),
                                    pick(ens.w), pick(ens.theta), ens.q[i], ens.r[i], ens.f[i], N_x))
    return ops


def output_row(N_x: int, N_y: int, g, y1: float, y2: float, n_y: int = 32) -> np.ndarray:
    """``C^v_k = int_{y1}^{y2} g(y) phi_k(0, y) dy``."""
    nb = (N_x + 1) * (N_y + 1)
    if y2 <= y1:
        return np.zeros(nb)
    rule = gauss_nodes(n_y, y1, y2)
    gy = np.asarray(g(rule.nodes), dtype=float)
    Gj = shifted_legendre(N_y, rule.nodes) @ (rule.weights * gy)      # (N_y+1,)
    sign0 = (-1.0) ** np.arange(N_x + 1)
    return np.outer(Gj, sign0).ravel()


def assemble_observer(op: GalerkinOperator, gains: InjectionGains | None, g, y1: float,
                      y2: float) -> GalerkinOperator:
    """Attach the measurement row and the injection ``[P1; P2]`` to a continuum operator."""
    Cv = output_row(op.N_x, op.N_y, g, y1, y2)
    if gains is None:
        P = np.zeros(op.size)
    else:
        if (gains.N_x, gains.N_y) != (op.N_x, op.N_y):
            raise ValueError("gains and operator orders differ")
        P = np.concatenate([gains.inner1, gains.inner2])
    return GalerkinOperator(op.N_x, op.N_y, op.mass, op.K, op.B, Cv, P)


def project_profile(fn: Callable, N_x: int, n: int | None = None):
    """Legendre coefficients of ``fn`` on [0, 1] and the relative L2 projection residual."""
    rule = gauss_nodes(n or 2 * N_x + 24)
    vals = np.asarray(fn(rule.nodes), dtype=float)
    Lx = shifted_legendre(N_x, rule.nodes)
    c = (Lx @ (rule.weights * vals)) * (2 * np.arange(N_x + 1) + 1)
    resid = np.sqrt(rule.integrate((vals - c @ Lx) ** 2))
    norm = np.sqrt(rule.integrate(vals ** 2))
    return c, float(resid / norm) if norm > 0 else float(resid)


# ------------------------------------------------------------------ cascade

@dataclass
class PlantChannels:
    """Large-scale plant: m uncoupled channels and the averaged boundary measurement."""

    ops: list
    m1: int
    m2: int
    g: np.ndarray

    def __post_init__(self):
        self.N_x = self.ops[0].N_x
        n1 = self.N_x + 1
        self.K = block_diag(*[op.K for op in self.ops])
        self.minv = np.concatenate([op.minv for op in self.ops])
        self.B = np.concatenate([op.input_vector for op in self.ops])
        row = np.zeros(self.K.shape[0])
        sign0 = (-1.0) ** np.arange(n1)
        m = len(self.ops)
        for gi, i in zip(self.g, range(self.m1 - 1, self.m2)):
            start = i * 2 * n1 + n1
            row[start:start + n1] = gi * sign0 / m
        self.C_meas = row

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def rhs(self, c, cx):
        return self.minv * (self.K @ c + self.B * cx)

    def measure(self, c) -> float:
        return float(self.C_meas @ c)

    def spectral_radius(self) -> float:
        return max(op.spectral_radius() for op in self.ops)


@dataclass
class PlantContinuum:
    """Continuum plant (the model the observer is designed for).

    When ``op`` has no output row one is built from ``g`` on ``[y1, y2]``.
    """

    op: GalerkinOperator
    g: Callable | None = None
    y1: float = 0.0
    y2: float = 1.0

    def __post_init__(self):
        if self.op.Cv is None:
            g = self.g if self.g is not None else (lambda y: np.ones_like(y))
            self.op = replace(self.op, Cv=output_row(self.op.N_x, self.op.N_y, g, self.y1, self.y2))
        self.minv = self.op.minv
        self.B = self.op.input_vector
        self.K = self.op.K
        self.C_meas = np.concatenate([np.zeros(self.op.nb), self.op.Cv])

    @property
    def size(self) -> int:
        return self.op.size

    def rhs(self, c, cx):
        return self.minv * (self.K @ c + self.B * cx)

    def measure(self, c) -> float:
        return float(self.C_meas @ c)

    def spectral_radius(self) -> float:
        return self.op.spectral_radius()


def measure(state: "SimState", plant) -> float:
    """Plant measurement ``Y`` for the current state."""
    return plant.measure(state.c)


@dataclass
class SimState:
    t: float
    X: np.ndarray
    c: np.ndarray           # plant coefficients
    Xh: np.ndarray
    ch: np.ndarray          # observer coefficients

    def pack(self) -> np.ndarray:
        return np.concatenate([self.X, self.c, self.Xh, self.ch])

    def norm(self) -> float:
        return float(np.linalg.norm(self.pack()))


class Cascade:
    """Right-hand side of ODE + plant + observer; observer and plant use the same arithmetic."""

    def __init__(self, ode: HarmonicODE, plant, observer: GalerkinOperator, L):
        self.A = ode.A
        self.C = ode.C[0]
        self.plant = plant
        self.obs = observer
        self.L = np.asarray(L, dtype=float)
        self.P = observer.P if observer.P is not None else np.zeros(observer.size)
        self.obs_minv = observer.minv
        self.obs_B = observer.input_vector
        self.obs_C = np.concatenate([np.zeros(observer.nb), observer.Cv])

    def derivative(self, s: SimState) -> SimState:
        Y = self.plant.measure(s.c)
        Yh = float(self.obs_C @ s.ch)
        innov = Yh - Y
        dX = self.A @ s.X
        dc = self.plant.rhs(s.c, float(self.C @ s.X))
        dXh = self.A @ s.Xh + self.L * innov
        dch = self.obs_minv * (self.obs.K @ s.ch + self.obs_B * float(self.C @ s.Xh)
                               + self.P * innov)
        return SimState(s.t, dX, dc, dXh, dch)

    def outputs(self, s: SimState):
        return (float(self.C @ s.X), float(self.C @ s.Xh), self.plant.measure(s.c),
                float(self.obs_C @ s.ch))

    def spectral_radius(self) -> float:
        r_obs = float(np.max(np.abs(np.linalg.eigvals(
            self.obs_minv[:, None] * (self.obs.K + np.outer(self.P, self.obs_C))))))
        r_ode = float(np.max(np.abs(np.linalg.eigvals(self.A)), initial=0.0))
        return max(self.plant.spectral_radius(), r_obs, r_ode)


def _axpy(s: SimState, k: SimState, a: float) -> SimState:
    return SimState(s.t + a, s.X + a * k.X, s.c + a * k.c, s.Xh + a * k.Xh, s.ch + a * k.ch)


def step(state: SimState, system: Cascade, dt: float) -> SimState:
    """One classical fourth-order Runge-Kutta step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = system.derivative(state)
    k2 = system.derivative(_axpy(state, k1, dt / 2))
    k3 = system.derivative(_axpy(state, k2, dt / 2))
    k4 = system.derivative(_axpy(state, k3, dt))

    def comb(a, b, c, d, e):
        return a + dt / 6 * (b + 2 * c + 2 * d + e)
    return SimState(state.t + dt, comb(state.X, k1.X, k2.X, k3.X, k4.X),
                    comb(state.c, k1.c, k2.c, k3.c, k4.c),
                    comb(state.Xh, k1.Xh, k2.Xh, k3.Xh, k4.Xh),
                    comb(state.ch, k1.ch, k2.ch, k3.ch, k4.ch))


@dataclass
class TimeSeries:
    t: np.ndarray
    CX: np.ndarray
    CXhat: np.ndarray
    Y: np.ndarray
    Yhat: np.ndarray
    state_error: np.ndarray            # |X - Xhat|
    dt: float = 0.0
    snapshots: dict = field(default_factory=dict)

    @property
    def err(self) -> np.ndarray:
        return self.CX - self.CXhat

    def window_max(self, t0: float, t1: float, series: str = "err") -> float:
        v = np.abs(getattr(self, series))
        sel = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return float(np.max(v[sel]))

    def columns(self) -> dict:
        return {"t": self.t, "CX": self.CX, "CXhat": self.CXhat, "err": self.err,
                "Y": self.Y, "Yhat": self.Yhat}


def default_dt(N_x: int, speed_max: float) -> float:
    return 0.2 / ((2 * N_x + 1) * speed_max)


def run_cascade(ode: HarmonicODE, plant, observer: GalerkinOperator, L, T: float,
                plant_init: np.ndarray, observer_init: np.ndarray | None = None,
                Xhat0=None, dt: float | None = None, speed_max: float = 1.0,
                sample_dt: float | None = None, divergence_factor: float = DIVERGENCE_FACTOR,
                snapshot_times: Sequence[float] = ()) -> TimeSeries:
    """Integrate the cascade over ``[0, T]`` and record outputs on a uniform grid."""
    if not T > 0:
        raise ConfigError("horizon must be positive")
    system = Cascade(ode, plant, observer, L)
    if dt is None:
        dt = default_dt(observer.N_x, speed_max)
        rho = system.spectral_radius()
        if dt * rho > RK4_MARGIN:
            dt = RK4_MARGIN / rho
    if sample_dt is None:
        n_steps = int(np.ceil(T / dt - 1e-9))
        dt, every = T / n_steps, 1
    else:
        # substeps divide the sampling interval so every run shares the same time grid
        every = int(np.ceil(sample_dt / dt - 1e-9))
        dt = sample_dt / every
        n_steps = int(round(T / dt))
        if abs(n_steps * dt - T) > 1e-9 * T:
            raise ConfigError("horizon must be a multiple of the sampling interval")
    s = SimState(0.0, np.array(ode.X0, dtype=float), np.asarray(plant_init, dtype=float).copy(),
                 np.ones(ode.n) if Xhat0 is None else np.asarray(Xhat0, dtype=float).copy(),
                 np.zeros(observer.size) if observer_init is None else
                 np.asarray(observer_init, dtype=float).copy())
    if s.c.size != plant.size:
        raise ConfigError(f"plant initial state has {s.c.size} entries, expected {plant.size}")
    limit = divergence_factor * max(1.0, s.norm())
    rec = {k: [] for k in ("t", "CX", "CXhat", "Y", "Yhat", "se")}
    snaps = {}
    snap_steps = {int(round(ts / dt)): ts for ts in snapshot_times}

    def record(st):
        cx, cxh, y, yh = system.outputs(st)
        for k, v in zip(("t", "CX", "CXhat", "Y", "Yhat", "se"),
                        (st.t, cx, cxh, y, yh, float(np.linalg.norm(st.X - st.Xh)))):
            rec[k].append(v)

    record(s)
    for k in range(1, n_steps + 1):
        s = step(s, system, dt)
        s.t = k * dt
        nrm = s.norm()
        if not np.isfinite(nrm) or nrm > limit:
            raise NumericalFailure(f"integration diverged; last stable time {(k - 1) * dt:.6g}")
        if k % every == 0 or k == n_steps:
            record(s)
        if k in snap_steps:
            snaps[snap_steps[k]] = s.pack()
    return TimeSeries(np.array(rec["t"]), np.array(rec["CX"]), np.array(rec["CXhat"]),
                      np.array(rec["Y"]), np.array(rec["Yhat"]), np.array(rec["se"]), dt, snaps)
