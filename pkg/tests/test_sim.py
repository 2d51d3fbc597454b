"""Galerkin assembly, measurement and the coupled Runge-Kutta cascade."""
from __future__ import annotations

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contobs.basis import LegendreSeries1D
from contobs.errors import NumericalFailure
from contobs.fit import ChannelData, ContinuumParams, StepEnsemble
from contobs.model import build_harmonic_ode
from contobs.sim import (Cascade, PlantChannels, PlantContinuum, SimState, assemble_channel,
                         assemble_continuum, assemble_observer, assemble_plant_channels,
                         output_row, project_profile, run_cascade, step)


def _const(v):
    return lambda x: np.full(np.shape(x), float(v))


def _ensemble(m=3, q=0.5, r=0.6, f=1.0, g=None, m1=1, m2=None):
    one = ChannelData([_const(1.0)] * m, [_const(0.0)] * m)
    zero = ChannelData([_const(0.0)] * m, [_const(0.0)] * m)
    m2 = m if m2 is None else m2
    return StepEnsemble(one, one, zero, zero, np.full(m, q), np.full(m, r), np.full(m, f),
                        np.ones(m2 - m1 + 1) if g is None else g, m1, m2)


@pytest.mark.parametrize("N_x,N_y", [(0, 0), (3, 1), (14, 1), (6, 3)])
def test_mass_matrix_values(N_x, N_y):
    op = assemble_continuum(ContinuumParams.build(), N_x, N_y)
    i = np.tile(np.arange(N_x + 1), N_y + 1)
    j = np.repeat(np.arange(N_y + 1), N_x + 1)
    nptest.assert_allclose(op.mass, 1.0 / ((2 * i + 1) * (2 * j + 1)), rtol=1e-12)
    assert op.K.shape == (2 * op.nb, 2 * op.nb) and op.nb == (N_x + 1) * (N_y + 1)


def test_lowest_order_transport_block():
    op = assemble_continuum(ContinuumParams.build(), 0, 0)
    assert op.mass[0] == 1.0 and op.Kuu[0, 0] == pytest.approx(-1.0)


def test_no_coupling_blocks_without_coupling():
    op = assemble_continuum(ContinuumParams.build(Q=0.0, R=0.0), 5, 1)
    assert np.all(op.Kvu == 0) and np.all(op.Kuv == 0)


@pytest.mark.parametrize("N_x", [0, 4, 14])
def test_input_vector_is_one_at_the_right_end(N_x):
    op = assemble_continuum(ContinuumParams.build(F=1.0), N_x, 0)
    nptest.assert_allclose(op.B, np.ones(N_x + 1), atol=1e-13)


def test_output_row_alternates_at_the_left_end():
    nptest.assert_allclose(output_row(6, 0, lambda y: np.ones_like(y), 0.0, 1.0),
                           (-1.0) ** np.arange(7), atol=1e-14)


def test_observer_without_gain_is_a_copy_of_the_model():
    op = assemble_continuum(ContinuumParams.build(W=0.3, theta=0.2, Q=0.4, R=0.5), 4, 1)
    obs = assemble_observer(op, None, LegendreSeries1D([1.0]), 0.0, 1.0)
    nptest.assert_array_equal(obs.injected_K(), op.K)


def test_injected_blocks_have_rank_one(academic_params):
    from contobs.gains import InjectionGains
    op = assemble_continuum(academic_params, 5, 1)
    rng = np.random.default_rng(1)
    gains = InjectionGains(5, 1, rng.normal(size=12), rng.normal(size=12))
    obs = assemble_observer(op, gains, academic_params.g, 0.0, 1.0)
    added = obs.injected_K() - op.K
    assert np.linalg.matrix_rank(added[:12, 12:]) <= 1
    assert np.linalg.matrix_rank(added[12:, 12:]) <= 1


def test_single_channel_equals_constant_continuum():
    p = ContinuumParams.build(lam=1.3, mu=0.8, W=0.2, theta=-0.1, Q=0.4, R=0.5, F=2.0)
    cont = assemble_continuum(p, 6, 0)
    ch = assemble_channel(_const(1.3), _const(0.0), _const(0.8), _const(0.0), _const(0.2),
                          _const(-0.1), 0.4, 0.5, 2.0, 6)
    nptest.assert_allclose(ch.K, cont.K, atol=1e-12)
    nptest.assert_allclose(ch.B, cont.B, atol=1e-12)


def test_transport_decay_rate():
    # lam = mu = 1, no coupling: eigenvalues (ln(qr) + 2 pi i k) / 2
    q, r = 0.5, 0.6
    op = assemble_continuum(ContinuumParams.build(Q=q, R=r), 20, 0)
    ev = np.linalg.eigvals(op.system_matrix())
    slow = ev[np.argmax(ev.real)]
    assert slow.real == pytest.approx(np.log(q * r) / 2, abs=1e-6)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_profile_projection_reproduces_polynomials(c):
    poly = np.polynomial.Polynomial(c)
    coeffs, resid = project_profile(poly, 8)
    assert resid < 1e-10
    x = np.linspace(0, 1, 9)
    nptest.assert_allclose(np.polynomial.legendre.legval(2 * x - 1, coeffs), poly(x), atol=1e-10)


def test_measurement_single_channel():
    ens = _ensemble(m=1)
    plant = PlantChannels(assemble_plant_channels(ens, 4), 1, 1, ens.g)
    c = np.zeros(10)
    c[5:] = [0.3, 0.1, -0.2, 0.05, 0.0]
    v0 = np.polynomial.legendre.legval(-1.0, c[5:])
    assert plant.measure(c) == pytest.approx(v0)


def test_measurement_averages_equal_channels():
    ens = _ensemble(m=4)
    plant = PlantChannels(assemble_plant_channels(ens, 3), 1, 4, ens.g)
    c = np.zeros(plant.size)
    for i in range(4):
        c[i * 8 + 4] = 0.7          # constant v in every channel
    assert plant.measure(c) == pytest.approx(0.7)


def test_measurement_window_weights():
    ens = _ensemble(m=10, g=[1.0, 2.0, 4.0, 3.0], m1=4, m2=7)
    plant = PlantChannels(assemble_plant_channels(ens, 2), 4, 7, ens.g)
    c = np.zeros(plant.size)
    for i in range(10):
        c[i * 6 + 3] = i + 1.0
    assert plant.measure(c) == pytest.approx((4 * 1 + 5 * 2 + 6 * 4 + 7 * 3) / 10)


def test_plant_channels_are_uncoupled():
    ens = _ensemble(m=3)
    plant = PlantChannels(assemble_plant_channels(ens, 4), 1, 3, ens.g)
    K = plant.K
    assert np.all(K[:10, 10:] == 0) and np.all(K[10:20, :10] == 0) and np.all(K[10:20, 20:] == 0)


def _tiny_cascade(F=0.0, L=None):
    ode = build_harmonic_ode(0.0, [(2 * np.pi, 1.0, 0.0)])
    p = ContinuumParams.build(Q=0.5, R=0.5, F=F)
    plant = PlantContinuum(assemble_continuum(p, 4, 0))
    obs = assemble_observer(assemble_continuum(p, 4, 0), None, p.g, 0.0, 1.0)
    return ode, plant, obs, np.zeros(3) if L is None else L


def test_zero_data_stays_zero():
    ode, plant, obs, L = _tiny_cascade(F=1.0)
    sys = Cascade(ode, plant, obs, L)
    s = SimState(0.0, np.zeros(3), np.zeros(10), np.zeros(3), np.zeros(10))
    for _ in range(20):
        s = step(s, sys, 0.01)
    assert s.norm() == 0.0


def _rotation_error(n_steps):
    ode, plant, obs, L = _tiny_cascade()
    sys = Cascade(ode, plant, obs, L)
    s = SimState(0.0, np.array([0.0, 0.0, 1.0]), np.zeros(10), np.zeros(3), np.zeros(10))
    for _ in range(n_steps):
        s = step(s, sys, 1.0 / n_steps)
    return np.linalg.norm(s.X - np.array([0.0, 0.0, 1.0])), abs(s.X @ s.X - 1.0)


def test_rotation_energy_and_fourth_order():
    e1, energy = _rotation_error(50)
    e2, _ = _rotation_error(100)
    # RK4 amplification of a pure rotation: |1 + z + z^2/2 + z^3/6 + z^4/24| at z = i h w
    z = 2j * np.pi / 50
    amp = abs(1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24) ** (2 * 50)
    assert energy == pytest.approx(abs(amp - 1.0), rel=1e-6)
    assert 12 < e1 / e2 < 20


def test_copy_system_is_bitwise_exact():
    ode = build_harmonic_ode(1.0, [(2 * np.pi, 0.5, 0.2)])
    p = ContinuumParams.build(W=0.3, theta=0.2, Q=0.4, R=0.5, F=1.0)
    op = assemble_continuum(p, 6, 1)
    plant = PlantContinuum(op)
    obs = assemble_observer(op, None, p.g, 0.0, 1.0)
    init = np.linspace(-1, 1, op.size)
    ts = run_cascade(ode, plant, obs, np.zeros(3), 1.0, init, observer_init=init,
                     Xhat0=ode.X0, sample_dt=0.05, snapshot_times=[1.0])
    assert np.all(ts.err == 0) and np.all(ts.Y == ts.Yhat)
    snap = ts.snapshots[1.0]
    n, m = 3, op.size
    nptest.assert_array_equal(snap[n:n + m], snap[2 * n + m:])


def test_cascade_is_affine_in_initial_data():
    ode, plant, obs, _ = _tiny_cascade(F=1.0)
    L = np.array([-1.0, 0.5, -0.3])
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=10), rng.normal(size=10)
    run = lambda c: run_cascade(ode, plant, obs, L, 1.0, c, sample_dt=0.1, dt=0.01)  # noqa: E731
    ra, rb, rab, r0 = run(a), run(b), run(a + b), run(np.zeros(10))
    nptest.assert_allclose(ra.CXhat + rb.CXhat - r0.CXhat, rab.CXhat, atol=1e-12)
    nptest.assert_allclose(ra.Y + rb.Y - r0.Y, rab.Y, atol=1e-12)


def test_sampling_grid_is_uniform():
    ode, plant, obs, L = _tiny_cascade(F=1.0)
    ts = run_cascade(ode, plant, obs, L, 2.0, np.zeros(10), sample_dt=0.1)
    nptest.assert_allclose(np.diff(ts.t), 0.1, atol=1e-12)
    assert len({len(v) for v in ts.columns().values()}) == 1
    assert ts.t[-1] == pytest.approx(2.0)


def test_divergence_is_detected():
    ode = build_harmonic_ode(1.0, [(2 * np.pi, 1.0, 0.0)])
    p = ContinuumParams.build(Q=2.0, R=2.0, F=1.0)       # |QR| = 4: growing channel
    op = assemble_continuum(p, 4, 0)
    with pytest.raises(NumericalFailure, match="last stable time"):
        run_cascade(ode, PlantContinuum(op), assemble_observer(op, None, p.g, 0, 1), np.zeros(3),
                    20.0, np.ones(10), sample_dt=0.1, divergence_factor=1e3)
