"""Signal generator, artery linearisation and network assembly."""
from __future__ import annotations

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from contobs.model import (RADII, ArteryPhysical, assemble_network, build_harmonic_ode,
                           default_arteries, linearize_artery_flow, linearize_artery_pressure,
                           rest_state, synthetic_waveform, terminal_reflection)


def test_single_harmonic_output():
    ode = build_harmonic_ode(0.5, [(2 * np.pi, 1.0, 0.0)])
    for t, ref in ((0.0, 1.5), (0.25, 0.5), (0.5, -0.5)):
        X = expm(ode.A * t) @ ode.X0
        assert (ode.C @ X)[0] == pytest.approx(ref, abs=1e-12)


@given(t=st.floats(0, 20))
def test_closed_form_state_matches_matrix_exponential(t):
    ode = synthetic_waveform("pressure")
    nptest.assert_allclose(ode.state(t)[:, 0], expm(ode.A * t) @ ode.X0, atol=1e-9)


@given(t=st.floats(0, 5))
def test_output_is_the_fourier_sum(t):
    ode = synthetic_waveform("flow", 1e3)
    ref = ode.a0 + sum(a * np.cos(w * t) + b * np.sin(w * t)
                       for w, a, b in zip(ode.omegas, ode.a, ode.b))
    assert ode.output(t)[0] == pytest.approx(ref, abs=1e-12)


def test_spectrum_is_zero_and_pure_imaginary_pairs():
    ode = synthetic_waveform("flow")
    ev = np.linalg.eigvals(ode.A)
    expected = np.concatenate([[0], 1j * np.array(ode.omegas), -1j * np.array(ode.omegas)])
    nptest.assert_allclose(np.sort_complex(ev), np.sort_complex(expected), atol=1e-12)
    assert ode.n == 9 and ode.A.shape == (9, 9) and ode.C.shape == (1, 9)


@pytest.mark.parametrize("harm", [[(1.0, 1, 0), (1.0, 0, 1)], [(0.0, 1, 1)], [(2.0, 1, 0), (-2.0, 0, 1)]])
def test_bad_frequencies_rejected(harm):
    with pytest.raises(ValueError):
        build_harmonic_ode(0.0, harm)


def test_wave_speed_equals_pulse_wave_velocity():
    art = ArteryPhysical.from_radius(5.05e-3)
    ch = linearize_artery_flow(art)
    beta = art.h * art.E * np.sqrt(np.pi) * art.b
    # Moens-Korteweg type speed of the tube law P = beta/A0 (sqrt A - sqrt A0)
    c = np.sqrt(beta / (2 * art.rho * np.sqrt(art.A0)))
    assert ch.lam == pytest.approx(c, rel=1e-12) and ch.mu == pytest.approx(c, rel=1e-12)
    assert ch.lam == pytest.approx(4.99, rel=0.01)


def test_radius_sweep():
    nptest.assert_allclose(RADII * 1e3, np.arange(5.05, 5.51, 0.05), atol=1e-12)
    lams = [linearize_artery_flow(a).lam for a in default_arteries()]
    assert np.all(np.diff(lams) < 0)           # wider arteries propagate slower


def test_rest_state_is_symmetric():
    u, v = rest_state(ArteryPhysical.from_radius(5.2e-3))
    assert u > 0 and v == -u


@pytest.mark.parametrize("R_T", [0.0, 1e6, 1.33e8, 1e12])
def test_terminal_reflection_is_bounded(R_T):
    q = terminal_reflection(ArteryPhysical.from_radius(5.05e-3, R_T=R_T))
    assert -1 <= q <= 1


def test_terminal_reflection_limits():
    assert terminal_reflection(ArteryPhysical.from_radius(5e-3, R_T=0.0)) == pytest.approx(1.0)
    assert terminal_reflection(ArteryPhysical.from_radius(5e-3, R_T=1e20)) == pytest.approx(-1.0)


def test_flow_and_pressure_boundary_coefficients():
    art = ArteryPhysical.from_radius(5.05e-3)
    fl, pr = linearize_artery_flow(art), linearize_artery_pressure(art)
    rate = fl.sigma / fl.lam + fl.psi / fl.mu
    assert fl.r == pytest.approx(-np.exp(rate))
    # P_u = -P_v, so the pressure reflection is +exp(rate)
    assert pr.r == pytest.approx(np.exp(rate))
    assert abs(fl.q * fl.r) < 1 and abs(pr.q * pr.r) < 1
    Pv = -art.rho * (fl.u_star - fl.v_star) / 16
    assert pr.f == pytest.approx(np.exp(fl.psi / fl.mu) / Pv)


def test_coupling_profiles_are_exponentials():
    ch = linearize_artery_flow(ArteryPhysical.from_radius(5.3e-3))
    x = np.linspace(0, 1, 5)
    nptest.assert_allclose(ch.w(x) * ch.theta(x), ch.w_t * ch.theta_t)
    h = 1e-6
    nptest.assert_allclose(ch.w_x(0.5), (ch.w(0.5 + h) - ch.w(0.5 - h)) / (2 * h), rtol=1e-6)


def test_network_assembly():
    ens, ode, chans = assemble_network(default_arteries(), synthetic_waveform("flow"), "flow",
                                       4, 7, [1, 2, 4, 3])
    assert ens.m == 10 and len(chans) == 10
    assert (ens.y1, ens.y2) == pytest.approx((0.3, 0.7))
    nptest.assert_allclose(ens.lam.values(np.array([0.3]))[:, 0], [c.lam for c in chans])


def test_flow_fractions_must_sum_to_one():
    arts = [ArteryPhysical.from_radius(5e-3, p_frac=0.2)] * 3
    with pytest.raises(ValueError):
        assemble_network(arts, synthetic_waveform("flow"), "flow")


@pytest.mark.parametrize("field,value", [("A0", -1.0), ("E", 0.0), ("R_T", -1.0), ("p_frac", 2.0)])
def test_invalid_artery_rejected(field, value):
    kw = {"A0": 1e-4, field: value}
    with pytest.raises(ValueError):
        ArteryPhysical(**kw)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        assemble_network(default_arteries(), synthetic_waveform("flow"), "volume")
