"""Signal-generator ODE, linearised artery channels and the parallel network."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .fit import ChannelData, StepEnsemble

RHO_BLOOD = 1060.0          # kg/m^3
MU_BLOOD = 0.0035           # Pa s
K_R = 8 * np.pi * MU_BLOOD / RHO_BLOOD
WALL_H = 0.5e-3             # m
YOUNG_E = 4e5               # N/m^2
B_POISSON = 4.0 / 3.0
R_TERMINAL = 1.33e8         # N s/m^5
RADII = np.round(np.arange(5.05, 5.5001, 0.05), 2) * 1e-3


@dataclass(frozen=True)
class HarmonicODE:
    """``X' = A X`` with ``A = blkdiag(0, [[0, w_j], [-w_j, 0]])`` and ``CX = a0 + sum a_j cos + b_j sin``."""

    a0: float
    omegas: tuple = ()
    a: tuple = ()
    b: tuple = ()
    X0: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        om = tuple(float(w) for w in self.omegas)
        if not (len(om) == len(self.a) == len(self.b)):
            raise ValueError("omegas, a and b must have equal length")
        if any(w == 0 for w in om):
            raise ValueError("harmonic frequencies must be nonzero")
        if len(set(abs(w) for w in om)) != len(om):
            raise ValueError("harmonic frequencies must be distinct")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if self.X0 is None:
            object.__setattr__(self, "X0", np.array([1.0] + [0.0, 1.0] * len(om)))

    @property
    def p(self) -> int:
        return len(self.omegas)

    @property
    def n(self) -> int:
        return 2 * self.p + 1

    @property
    def A(self) -> np.ndarray:
        blocks = [np.zeros((1, 1))] + [np.array([[0.0, w], [-w, 0.0]]) for w in self.omegas]
        return block_diag(*blocks)

    @property
    def C(self) -> np.ndarray:
        c = [self.a0]
        for aj, bj in zip(self.a, self.b):
            c += [bj, aj]
        return np.array([c])

    def state(self, t) -> np.ndarray:
        """Exact ``X(t)`` from the canonical rotation solution; shape ``(n, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        X = np.empty((self.n, t.size))
        X[0] = self.X0[0]
        for j, w in enumerate(self.omegas):
            x1, x2 = self.X0[1 + 2 * j], self.X0[2 + 2 * j]
            c, s = np.cos(w * t), np.sin(w * t)
            X[1 + 2 * j] = c * x1 + s * x2
            X[2 + 2 * j] = -s * x1 + c * x2
        return X

    def output(self, t) -> np.ndarray:
        return (self.C @ self.state(t))[0]


def build_harmonic_ode(a0: float, harmonics: Sequence[tuple[float, float, float]] = ()) -> HarmonicODE:
    """Assemble the generator from ``[(omega_j, a_j, b_j), ...]``."""
    harmonics = list(harmonics)
    return HarmonicODE(a0, tuple(h[0] for h in harmonics), tuple(h[1] for h in harmonics),
                       tuple(h[2] for h in harmonics))


# Synthetic waveforms (not the published tables): mean plus four harmonics of a 1 s beat
# with decaying harmonic amplitudes. Flow in m^3/s (positive throughout), pressure in Pa.
SYNTHETIC_FLOW = (9.0e-5, [(1.2e-5, 1.1e-4), (-6.0e-5, 3.0e-5), (-2.0e-5, -2.5e-5), (8.0e-6, -1.2e-5)])
SYNTHETIC_PRESSURE = (2.0e3, [(-9.0e2, 1.6e3), (-5.0e2, -2.0e2), (1.5e2, -2.5e2), (6.0e1, 8.0e1)])


def synthetic_waveform(kind: str = "flow", scale: float = 1.0) -> HarmonicODE:
    """Representative beat waveform with ``omega_j = 2 j pi``, j = 1..4 (synthetic values)."""
    a0, h = {"flow": SYNTHETIC_FLOW, "pressure": SYNTHETIC_PRESSURE}[kind]
    return build_harmonic_ode(scale * a0, [(2 * (j + 1) * np.pi, scale * a, scale * b)
                                           for j, (a, b) in enumerate(h)])


@dataclass(frozen=True)
class ArteryPhysical:
    A0: float
    rho: float = RHO_BLOOD
    K_r: float = K_R
    h: float = WALL_H
    E: float = YOUNG_E
    b: float = B_POISSON
    R_T: float = R_TERMINAL
    p_frac: float = 0.1

    def __post_init__(self):
        for name in ("A0", "rho", "K_r", "h", "E", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.R_T < 0:
            raise ValueError("R_T must be nonnegative")
        if not 0 <= self.p_frac <= 1:
            raise ValueError("p_frac must lie in [0, 1]")

    @classmethod
    def from_radius(cls, r0: float, **kw) -> "ArteryPhysical":
        return cls(A0=np.pi * r0 ** 2, **kw)

    @property
    def beta(self) -> float:
        return self.h * self.E * np.sqrt(np.pi) * self.b


@dataclass(frozen=True)
class ChannelParams:
    lam: float
    mu: float
    w_t: float
    theta_t: float
    sigma: float
    psi: float
    kappa: float
    q: float
    r: float
    f: float
    u_star: float
    v_star: float

    @property
    def rate(self) -> float:
        """Exponent of the coupling profiles, ``sigma/lam + psi/mu``."""
        return self.sigma / self.lam + self.psi / self.mu

    def w(self, x):
        return self.w_t * np.exp(self.rate * np.asarray(x, dtype=float))

    def theta(self, x):
        return self.theta_t * np.exp(-self.rate * np.asarray(x, dtype=float))

    def w_x(self, x):
        return self.rate * self.w(x)

    def theta_x(self, x):
        return -self.rate * self.theta(x)


def rest_state(art: ArteryPhysical) -> tuple[float, float]:
    """Riemann invariants at ``(V, A) = (0, A0)``."""
    u = 2.0 * np.sqrt(2.0 * art.beta / art.rho) * art.A0 ** -0.25
    return u, -u


def _interior(art: ArteryPhysical) -> dict:
    u, v = rest_state(art)
    if not u - v > 0:
        raise ValueError("degenerate rest state u* = v*")
    lam = (5 * u + 3 * v) / 8
    mu = -(3 * u + 5 * v) / 8
    kappa = 2 ** 9 * art.K_r * art.beta ** 2 / (art.rho ** 2 * art.A0 ** 2)
    sigma = -kappa * (3 * u + 5 * v) / (u - v) ** 5
    psi = kappa * (5 * u + 3 * v) / (u - v) ** 5
    return dict(lam=lam, mu=mu, w_t=psi, theta_t=sigma, sigma=sigma, psi=psi, kappa=kappa,
                u_star=u, v_star=v)


def pressure_partials(art: ArteryPhysical, u: float, v: float) -> tuple[float, float]:
    """``(P_u, P_v)`` for ``P(u, v) = rho/32 (u - v)^2 - beta/sqrt(A0)``."""
    d = art.rho * (u - v) / 16.0
    return d, -d


def terminal_reflection(art: ArteryPhysical) -> float:
    """Reflection coefficient ``q`` of ``u(0) = q v(0)`` from ``P = R_T A V`` at rest.

    Linearising gives ``P_u du + P_v dv = R_T A0 (du + dv) / 2`` with
    ``P_u = -P_v = rho u*/8``. The wave leaving the terminal is taken as the
    reflected one, so ``q = (rho u* - 4 R_T A0) / (rho u* + 4 R_T A0)``, the
    classical ``(Z_c - R_T) / (Z_c + R_T)`` with ``Z_c = rho c / A0``;
    ``|q| <= 1`` for any ``R_T >= 0``.
    """
    u, _ = rest_state(art)
    z = art.rho * u
    return (z - 4 * art.R_T * art.A0) / (z + 4 * art.R_T * art.A0)


def linearize_artery_flow(art: ArteryPhysical) -> ChannelParams:
    """Channel parameters with the inflow condition ``A V = p_frac * Q_a`` at x = 1."""
    p = _interior(art)
    rate = p["sigma"] / p["lam"] + p["psi"] / p["mu"]
    # A0 (du + dv)/2 = p Q_a, then the exponential change of variables
    r = -np.exp(rate)
    f = 2.0 * art.p_frac / art.A0 * np.exp(p["psi"] / p["mu"])
    return ChannelParams(q=terminal_reflection(art), r=r, f=f, **p)


def linearize_artery_pressure(art: ArteryPhysical) -> ChannelParams:
    """Channel parameters with the pressure condition ``P(A(1)) = P_a`` at x = 1."""
    p = _interior(art)
    Pu, Pv = pressure_partials(art, p["u_star"], p["v_star"])
    if Pv == 0:
        raise ValueError("P_v vanishes at the rest state")
    r = -Pu / Pv * np.exp(p["sigma"] / p["lam"] + p["psi"] / p["mu"])
    f = np.exp(p["psi"] / p["mu"]) / Pv
    return ChannelParams(q=terminal_reflection(art), r=r, f=f, **p)


def _const(c):
    return lambda x: np.full(np.shape(x), float(c))


def channels_to_ensemble(chans: Sequence[ChannelParams], m1: int, m2: int, g) -> StepEnsemble:
    return StepEnsemble(
        lam=ChannelData([_const(c.lam) for c in chans], [_const(0.0) for _ in chans]),
        mu=ChannelData([_const(c.mu) for c in chans], [_const(0.0) for _ in chans]),
        w=ChannelData([c.w for c in chans], [c.w_x for c in chans]),
        theta=ChannelData([c.theta for c in chans], [c.theta_x for c in chans]),
        q=[c.q for c in chans], r=[c.r for c in chans], f=[c.f for c in chans],
        g=g, m1=m1, m2=m2)


def assemble_network(arteries: Sequence[ArteryPhysical], ode: HarmonicODE, mode: str = "flow",
                     m1: int = 1, m2: int | None = None, g=None):
    """Linearise each artery and pack the channels for fitting and simulation.

    Returns ``(ensemble, ode, channels)``.
    """
    if not arteries:
        raise ValueError("need at least one artery")
    m = len(arteries)
    m2 = m if m2 is None else m2
    g = np.ones(m2 - m1 + 1) if g is None else np.asarray(g, dtype=float)
    if mode == "flow":
        total = sum(a.p_frac for a in arteries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"flow fractions must sum to 1 (got {total:.12g})")
        chans = [linearize_artery_flow(a) for a in arteries]
    elif mode == "pressure":
        chans = [linearize_artery_pressure(a) for a in arteries]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for i, c in enumerate(chans):
        if abs(c.q * c.r) >= 1:
            warnings.warn(f"channel {i + 1}: |q r| = {abs(c.q * c.r):.3f} >= 1", stacklevel=2)
    return channels_to_ensemble(chans, m1, m2, g), ode, chans


def default_arteries(mode: str = "flow") -> list[ArteryPhysical]:
    return [ArteryPhysical.from_radius(r, p_frac=1.0 / len(RADII)) for r in RADII]
