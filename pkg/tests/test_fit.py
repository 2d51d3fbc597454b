"""Continuum approximation of channel data: projections, residual tables, Algorithm 1."""
from __future__ import annotations

import warnings

import numpy as np
import numpy.testing as nptest
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contobs.basis import LegendreSeries2D, gauss_nodes, shifted_legendre
from contobs.fit import (ChannelData, ContinuumParams, FitError, FitWarning, StepFunction,
                        build_fit_2d, fit_1d, fit_2d, positivity_refit, run_algorithm1)
from contobs.scenarios import CTHETA_DATA, CW_DATA, Q_DATA, R_DATA, academic_ensemble

finite = st.floats(-10, 10, allow_nan=False)


def test_step_cells_are_half_open():
    s = StepFunction([1.0, 2.0, 3.0, 4.0])
    nptest.assert_array_equal(s([0.0, 0.25, 0.2500001, 0.5, 1.0]), [1, 1, 2, 2, 4])


def test_step_with_subdomain():
    s = StepFunction([1.0, 2.0], (0.3, 0.7))
    nptest.assert_allclose(s.edges(), [0.3, 0.5, 0.7])
    assert s(0.6) == 2.0


@pytest.mark.parametrize("M_y", [0, 1, 3])
def test_constant_data_fits_exactly(M_y):
    r = fit_1d(StepFunction(np.full(7, 2.5)), M_y)
    assert r.series.coeffs[0] == pytest.approx(2.5)
    nptest.assert_allclose(r.series.coeffs[1:], 0, atol=1e-14)
    assert r.l2_error < 1e-14


@pytest.mark.parametrize("M_y,expected", [(1, 0.0113), (2, 0.0110), (3, 0.0097),
                                          (4, 0.0094), (5, 0.0094)])
def test_residual_table_for_q_data(M_y, expected):
    assert fit_1d(StepFunction(Q_DATA), M_y).residual == pytest.approx(expected, abs=5e-4)


@given(st.lists(finite, min_size=2, max_size=12), st.integers(0, 5))
def test_projection_residual_is_orthogonal(values, M_y):
    step = StepFunction(values)
    r = fit_1d(step, M_y)
    e = step.edges()
    total = np.zeros(M_y + 1)
    for i in range(step.m):
        rule = gauss_nodes(M_y + 2, e[i], e[i + 1])
        resid = step.values[i] - r.series(rule.nodes)
        total += shifted_legendre(M_y, rule.nodes) @ (rule.weights * resid)
    assert np.max(np.abs(total)) < 1e-10 * (1 + np.max(np.abs(values)))


@given(st.lists(finite, min_size=2, max_size=12))
def test_residual_decreases_with_order(values):
    res = [fit_1d(StepFunction(values), k).l2_error for k in range(5)]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))


def test_separable_polynomial_data_is_reproduced():
    cs = np.linspace(-1, 2, 10)
    data = ChannelData([lambda x, c=c: c * x * (x + 1) for c in cs],
                       [lambda x, c=c: c * (2 * x + 1) for c in cs])
    fit = fit_2d(data, 3, 1)
    # x(x+1) lies in the x-space for j <= 1, so the fit factors into x(x+1) times
    # the one-dimensional projection of the coefficients
    x, y = np.linspace(0, 1, 5), np.linspace(0, 1, 7)
    vals = fit.series.grid(x, y)
    ref = np.outer(x * (x + 1), fit_1d(StepFunction(cs), 1).series(y))
    nptest.assert_allclose(vals, ref, atol=1e-12)


def test_derivative_penalty_changes_only_when_requested():
    data = ChannelData([lambda x, k=k: np.sin(3 * x + k) for k in range(4)])
    p0 = build_fit_2d(data, 3, 1, penalty=False)
    p1 = build_fit_2d(data, 3, 1, penalty=True)
    nptest.assert_array_equal(p0.E, p1.E)
    assert not np.allclose(p0.solve(), p1.solve())
    # normal equations hold at the solution
    assert p1.normal_residual(p1.solve()) < 1e-20


def test_positivity_refit_enforces_positive_speed():
    # a channel profile that dips below zero near x = 1 when fitted at low order
    data = ChannelData([lambda x, a=a: a + 0.0 * x for a in (0.05, 0.05, 3.0, 3.0)])
    prob = build_fit_2d(data, 1, 1, penalty=True)
    series = LegendreSeries2D(1, 1, prob.solve())
    xs = np.linspace(0, 1, 41)
    assert np.min(series.grid(xs, xs)) < 0
    fixed = positivity_refit(series, prob)
    assert np.min(fixed.grid(xs, xs)) > 0


def test_positive_fit_is_left_alone():
    data = ChannelData([lambda x: 1.0 + x] * 3)
    prob = build_fit_2d(data, 2, 0, penalty=True)
    s = LegendreSeries2D(2, 0, prob.solve())
    assert positivity_refit(s, prob) is s


def test_academic_coefficients(academic):
    params, report = run_algorithm1(academic, 3, 1, adaptive=False)
    nptest.assert_allclose(params.Q.to_power(), [0.109, 0.882], atol=1e-3)
    nptest.assert_allclose(params.R.to_power(), [0.883, -1.026], atol=1e-3)
    y = np.array([0.0, 1.0])
    nptest.assert_allclose(params.theta.grid([1.0], y)[0], [0.537, 0.537 + 0.486], atol=1e-3)
    nptest.assert_allclose(params.W.grid([1.0], y)[0] / 2, [-0.2115, -0.2115 + 0.453], atol=1e-3)
    assert report.residuals["W"] == pytest.approx(0.0080, abs=5e-4)


def test_measurement_weight_fit_on_window():
    ens = academic_ensemble(m1=4, m2=7, g=[1, 2, 4, 3])
    params, _ = run_algorithm1(ens, 3, 3, adaptive=False)
    assert (params.y1, params.y2) == pytest.approx((0.3, 0.7))
    nptest.assert_allclose(params.g.to_power()[::-1], [-273.4, 375.0, -155.9, 21.33], rtol=2e-3)


def test_adaptive_mode_raises_order_until_thresholds_met(academic):
    params, report = run_algorithm1(academic, 3, 1, thresholds=1.0, adaptive=True)
    assert report.satisfied and report.M_y == 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        _, rep = run_algorithm1(academic, 3, 1, thresholds=1e-6, adaptive=True)
    assert not rep.satisfied and rep.M_y == 3 and rep.warning
    assert [h["M_y"] for h in rep.history] == [1, 2, 3]


def test_unmet_thresholds_warn(academic):
    with pytest.warns(FitWarning):
        run_algorithm1(academic, 3, 1, thresholds=1e-6, adaptive=True)


def test_order_validation(academic):
    with pytest.raises(FitError):
        run_algorithm1(academic, 2, 3)


def test_params_dict_round_trip(academic_params):
    back = ContinuumParams.from_dict(academic_params.to_dict())
    x = np.linspace(0, 1, 7)
    for name in ("lam", "mu", "W", "theta"):
        nptest.assert_array_equal(getattr(back, name).grid(x, x), getattr(academic_params, name).grid(x, x))
    for name in ("Q", "R", "F", "g"):
        nptest.assert_array_equal(getattr(back, name)(x), getattr(academic_params, name)(x))


def test_channel_count_mismatch_rejected():
    with pytest.raises(FitError):
        academic_ensemble(q=Q_DATA[:9], r=R_DATA, c_w=CW_DATA, c_theta=CTHETA_DATA)
