import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbattery.filters import (FitError, LocalFilter, attenuation_db, band_grid,
                              design_local_filter, fit_auto, fit_rational, flatness_report, hold_response,
                              inverse_filter, rolloff)
from vbattery.lti import TransferFunction, cyc_per_hr, tf_eval
from vbattery.scenarios import class_band

AC_BAND = (cyc_per_hr(1.0), cyc_per_hr(5.0))


def grid(band, margin=0.5, n=240):
    return np.logspace(np.log10(band[0]) - margin, np.log10(band[1]) + margin, n)


def test_self_fit_first_order():
    tf = TransferFunction([1.0], [1.0, 1.0])
    w = np.logspace(-2, 2, 100)
    fit = fit_rational(w, tf_eval(tf, 1j * w), (0, 1))
    assert fit.max_fit_error_db < 0.01
    np.testing.assert_allclose(fit.tf.den / fit.tf.den[-1], [1.0, 1.0], rtol=1e-8)
    np.testing.assert_allclose(fit.tf.num / fit.tf.den[-1], [1.0], rtol=1e-8)


def test_resonant_minimum_phase_no_reflection():
    tf = TransferFunction([0.5, 1.0], [1.0, 0.2, 1.0])
    w = np.logspace(-1.5, 1.5, 200)
    fit = fit_rational(w, tf_eval(tf, 1j * w), (1, 2))
    assert fit.reflected == 0
    assert fit.max_fit_error_db < 1e-6


def test_nonminimum_phase_is_reflected():
    tf = TransferFunction([-1.0, 1.0], [1.0, 2.0, 1.0])  # zero at s = +1
    w = np.logspace(-2, 2, 200)
    fit = fit_rational(w, tf_eval(tf, 1j * w), (1, 2))
    assert fit.reflected == 1
    assert np.all(fit.tf.zeros().real < 0)
    # magnitude is preserved by reflection
    assert fit.max_fit_error_db < 1e-6


def test_ac_low_order_fit(ac_model):
    w = grid(AC_BAND)
    fit = fit_rational(w, ac_model.linearization.freqresp(w), (1, 2), band=AC_BAND)
    assert fit.max_fit_error_db < 1.0
    assert fit.tf.is_stable() and np.all(fit.tf.zeros().real < 0)


def test_fit_error_bound_raises():
    w = np.logspace(-2, 2, 120)
    H = tf_eval(TransferFunction([1.0], [1.0, 0.02, 1.0]) * TransferFunction([1.0], [1.0, 0.02, 100.0]), 1j * w)
    with pytest.raises(FitError, match="higher order"):
        fit_rational(w, H, (0, 1), max_error_db=3.0)


def test_fit_input_checks():
    w = np.logspace(-1, 1, 10)
    with pytest.raises(ValueError, match="50"):
        fit_rational(w, np.ones(10), (0, 0))
    w = np.logspace(-1, 1, 60)
    with pytest.raises(ValueError, match="at most 4"):
        fit_rational(w, np.ones(60), (5, 5))


def test_inverse_of_unity_is_rolloff():
    band = (1.0, 2.0)
    inv = inverse_filter(TransferFunction.gain(1.0), band)
    np.testing.assert_array_equal(inv.num, [1.0])
    k = 4.0
    inv_k = inverse_filter(TransferFunction.gain(k), band)
    wb = band_grid(band)
    np.testing.assert_allclose(tf_eval(inv_k, 1j * wb), 1 / k)


def test_inverse_adds_rolloff_until_proper():
    fit = TransferFunction([1.0], [1.0, 3.0, 2.0])
    inv = inverse_filter(fit, (0.1, 1.0))
    assert inv.is_proper and inv.is_stable()
    assert np.allclose(inv.poles(), -10.0)
    with pytest.raises(ValueError, match="minimum phase"):
        inverse_filter(TransferFunction([-1.0, 1.0], [1.0, 1.0]), (0.1, 1.0))


def test_ac_inverse_flatness_without_hold(ac_model):
    lin = ac_model.linearization
    d = design_local_filter(lin.freqresp, AC_BAND, hold=None)
    assert d.report["inverse_mag_dev_db"] < 0.5
    assert d.report["inverse_phase_dev_deg"] < 5.0


def test_ac_inverse_flatness_with_hold(ac_model):
    """The default design inverts ``G`` together with the 20 s hold it is delivered on."""
    lin = ac_model.linearization
    d = design_local_filter(lin.freqresp, AC_BAND)
    wb = band_grid(AC_BAND)
    E = tf_eval(d.local.m_inv, 1j * wb) * lin.freqresp(wb) * hold_response(wb, 20.0)
    assert np.max(np.abs(20 * np.log10(np.abs(E)))) < 0.5
    assert np.max(np.abs(np.degrees(np.angle(E)))) < 5.0


def test_compose_examples(ac_model):
    lin = ac_model.linearization
    d = design_local_filter(lin.freqresp, AC_BAND)
    m = d.local.m_total
    assert m.is_proper and m.is_stable()
    w0 = np.sqrt(AC_BAND[0] * AC_BAND[1])
    center = abs(tf_eval(m, 1j * w0) * lin.freqresp([w0])[0])
    assert abs(20 * np.log10(center)) < 1.0
    w10 = 10 * AC_BAND[1]
    assert attenuation_db(m, w10, lin.freqresp([w10])[0]) > 20.0
    assert d.report["attenuation_decade_above_db"] > 20.0


def test_pool_band_accepted(pool_model):
    band = class_band("pool")
    assert band == pytest.approx((2 * np.pi / 24 / 3600, 2 * np.pi / 3 / 3600))
    d = design_local_filter(pool_model.linearization.freqresp, band)
    assert d.local.m_total.is_stable()


def test_flatness_report_definitions():
    G = TransferFunction([1.0], [1.0, 0.1, 1.0])
    band = (0.5, 2.0)
    w = band_grid(band)
    Gw = tf_eval(G, 1j * w)
    exact = flatness_report(G.inverse() * TransferFunction.gain(1.0), w, Gw, band)
    assert exact["max_mag_dev_db"] < 1e-12 and exact["max_phase_dev_deg"] < 1e-10
    ones = flatness_report(TransferFunction.gain(1.0), w, Gw, band)
    assert ones["max_mag_dev_db"] == pytest.approx(np.max(20 * np.log10(np.abs(Gw))))


def test_local_filter_roundtrip(ac_model):
    d = design_local_filter(ac_model.linearization.freqresp, AC_BAND)
    back = LocalFilter.from_dict(d.local.to_dict())
    w = band_grid(AC_BAND)
    np.testing.assert_array_equal(tf_eval(back.m_total, 1j * w), tf_eval(d.local.m_total, 1j * w))


def test_band_outside_response_fails(ac_model):
    with pytest.raises(FitError):
        design_local_filter(ac_model.linearization.freqresp, (cyc_per_hr(200.0), cyc_per_hr(1000.0)))


def test_unity_model_near_zero_deviation():
    band = AC_BAND
    d = design_local_filter(lambda w: np.ones(np.size(w), complex), band, hold=None)
    assert d.report["inverse_mag_dev_db"] < 1e-6
    assert d.report["total_vs_bandpass_mag_dev_db"] < 1e-6


@st.composite
def min_phase_tfs(draw):
    order = draw(st.integers(1, 2))
    if order == 1:
        p = draw(st.floats(0.05, 20.0))
        return TransferFunction([draw(st.floats(0.1, 10.0)) * p], [1.0, p])
    wn = draw(st.floats(0.1, 10.0))
    zeta = draw(st.floats(0.1, 1.5))
    z = draw(st.floats(0.05, 20.0))
    return TransferFunction([1.0, z], [1.0, 2 * zeta * wn, wn * wn])


@settings(max_examples=30, deadline=None)
@given(min_phase_tfs(), st.floats(-1.0, 1.0))
def test_self_fit_inversion_tracks_bandpass(G, log_center):
    c = 10 ** log_center
    band = (c / 3, c * 3)
    resp = lambda w: tf_eval(G, 1j * np.asarray(w))
    # plain route: M_inv = P_roll / fit
    d = design_local_filter(resp, band, precompensate=False, orders=((G.num_degree, G.den_degree),))
    assert d.local.m_total.is_proper and d.local.m_total.is_stable()
    assert d.report["total_vs_bandpass_mag_dev_db"] < 0.1
    # precompensated route: the fit absorbs the roll-off pole, one extra pole
    d = design_local_filter(resp, band, hold=None, orders=((G.num_degree, G.den_degree + 1),))
    assert d.local.m_total.is_proper and d.local.m_total.is_stable()
    assert d.report["total_vs_bandpass_mag_dev_db"] < 0.1


def test_fit_auto_prefers_low_order():
    tf = TransferFunction([1.0], [1.0, 1.0])
    w = np.logspace(-2, 2, 100)
    assert fit_auto(w, tf_eval(tf, 1j * w), orders=((0, 1), (1, 2))).fit_order == (0, 1)


def test_rolloff_unity_dc():
    assert rolloff(2, 5.0).dcgain() == pytest.approx(1.0)
    assert abs(tf_eval(rolloff(1, 5.0), 5j)) == pytest.approx(1 / np.sqrt(2))


def test_hold_response():
    assert hold_response(0.0, 20.0) == 1.0
    assert abs(hold_response(2 * np.pi / 20, 20.0)) < 1e-15
