import numpy as np
import pytest

from vbattery.grid import (GRID_PLANT, GridConfig, ResourceClass, alpha_blend, apply_gain_schedule,
                           build_total_response, daily_gain, duck_curve, in_band_reference, mileage_cost,
                           pi_compensator, run_closed_loop, run_open_loop, run_open_loop_plant, sensitivity,
                           split_components, synthetic_disturbance)
from vbattery.lti import TransferFunction, butterworth_highpass, simulate_lti, tf_eval, to_state_space
from vbattery.markov import DivergenceError, integrate_mean_field
from vbattery.scenarios import class_band
from vbattery.timeseries import TimeSeries


def ac_class(mix, n=2000.0):
    d = next(d for d in mix.designs if d.name == "ac")
    return ResourceClass("ac", d.model, d.design.local, n, 1.0)


# -- compensator ------------------------------------------------------------------

def test_pi_default_form():
    gc = pi_compensator(516, 258)
    np.testing.assert_array_equal(gc.num, [516.0, 258.0])
    ref = TransferFunction([516.0, 258.0], [1.0, 0.0])  # 516 (s + 0.5) / s
    s = np.array([0.3j, 2j, 1 + 1j])
    np.testing.assert_allclose(tf_eval(gc, s), tf_eval(ref, s))
    assert pi_compensator(3.0, 0.0).den_degree == 0
    with pytest.raises(ValueError):
        pi_compensator(-1.0, 1.0)


def test_pi_step_ramps_with_ki():
    gc = pi_compensator(2.0, 0.5)
    u = simulate_lti(to_state_space(gc), TimeSeries(0.0, 0.1, np.ones(101))).values
    np.testing.assert_allclose(np.diff(u), 0.5 * 0.1, rtol=1e-9)
    assert u[0] == pytest.approx(2.0)


# -- linear composition ------------------------------------------------------------

def test_total_response_examples(nominal_mix):
    w = np.logspace(-5, -1, 50)
    np.testing.assert_array_equal(build_total_response([], w), 0)
    hp = butterworth_highpass(class_band("ac")[1], 1)
    only = [ResourceClass("hp", None, hp, share=1.0)]
    np.testing.assert_allclose(build_total_response(only, w), tf_eval(hp, 1j * w))
    classes = nominal_mix.classes()
    hi = np.logspace(np.log10(10 * class_band("ac")[1]), -1, 20)
    ideal = build_total_response([c for c in classes if c.name == "hp"], hi)
    loads = build_total_response([c for c in classes if not c.is_ideal], hi)
    assert np.all(np.abs(ideal) > 10 * np.abs(loads))


def test_alpha_blend_structure(nominal_mix):
    classes = nominal_mix.classes()
    same = alpha_blend(classes, 1.0)
    assert [c.name for c in same] == [c.name for c in classes]
    assert [c.share for c in same] == [c.share for c in classes]
    zero = alpha_blend(classes, 0.0)
    ac = next(c for c in zero if c.name == "ac")
    assert ac.share == 0.0
    ideal = next(c for c in zero if c.name == "ideal_ac")
    assert ideal.mileage and ideal.share == 1.0
    with pytest.raises(ValueError):
        alpha_blend(classes, 1.5)


def test_alpha_blend_response_invariance(nominal_mix):
    classes = nominal_mix.classes()
    lo, hi = class_band("ac")
    w = np.logspace(np.log10(lo), np.log10(hi), 40)
    ac = next(c for c in classes if c.name == "ac")
    # swapping AC for its ideal bandpass changes H only by the AC flatness error
    err = ac.response(w) - ac.share * tf_eval(ac.local_filter.m_bp, 1j * w)
    H1 = build_total_response(alpha_blend(classes, 1.0), w)
    for a in (0.0, 0.5):
        Ha = build_total_response(alpha_blend(classes, a), w)
        np.testing.assert_allclose(Ha - H1, -(1 - a) * err, atol=1e-12)
    assert np.max(np.abs(err)) < 0.1


def test_gain_schedule_identity(nominal_mix):
    cls = ac_class(nominal_mix)
    assert apply_gain_schedule(cls, lambda t: np.ones_like(t)).gain_schedule is not None
    assert daily_gain(0.0) == 1.0
    assert daily_gain(np.pi / 2 / 727e-7) == pytest.approx(0.5)
    assert 2 * np.pi / 727e-7 / 3600 == pytest.approx(24.0, rel=0.01)


def _short_cfg(h=3 * 3600.0):
    return GridConfig(horizon=h)


def test_gain_schedule_scales_output(nominal_mix):
    cls = ac_class(nominal_mix, n=1e6)
    cfg = _short_cfg(2 * 3600.0)
    D = synthetic_disturbance(cfg.horizon, amplitude_mw=200.0, seed=1)
    base = run_closed_loop(cfg, [cls], D)
    ones = run_closed_loop(cfg, [apply_gain_schedule(cls, lambda t: np.ones_like(t))], D)
    assert np.array_equal(base.freq_dev.values, ones.freq_dev.values)
    half = run_closed_loop(cfg, [apply_gain_schedule(cls, lambda t: np.full_like(t, 0.5))], D, record_zeta=True)
    z = half.zeta["ac"]
    _, y = integrate_mean_field(cls.model, z)
    expected = 0.5 * cls.n_loads * (y.values - cls.model.mean_power) / 1000.0
    got = half.per_class_power_dev["ac"].values
    assert np.max(np.abs(got - expected)) < 1e-6 * np.max(np.abs(expected))


# -- mileage -------------------------------------------------------------------------

def test_mileage_examples():
    assert mileage_cost(TimeSeries.zeros(100, 1.0)) == 0.0
    assert mileage_cost(TimeSeries(0.0, 2.0, np.full(51, 3.0))) == pytest.approx(9.0)
    assert mileage_cost(TimeSeries(0.0, 1.0, np.full(11, 2.0)), T=5.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        mileage_cost(TimeSeries(0.0, 1.0, np.ones(5)), T=10.0)


# -- open loop -------------------------------------------------------------------------

def test_open_loop_zero_reference(nominal_mix):
    r = run_open_loop(ac_class(nominal_mix), TimeSeries.zeros(2000, 20.0))
    assert np.all(r.y_dev.values == 0.0) and r.rms_error == 0.0


def test_open_loop_in_band_sinusoid(nominal_mix):
    cls = ac_class(nominal_mix)
    w0 = np.sqrt(np.prod(class_band("ac")))
    t = 20.0 * np.arange(4320)
    ref = TimeSeries(0.0, 20.0, 0.5 * cls.capacity_mw * np.sin(w0 * t), "MW")
    r = run_open_loop(cls, ref)
    assert r.rms_error < 0.10 and not r.capacity_exceeded


def test_open_loop_out_of_band_attenuated(nominal_mix):
    cls = ac_class(nominal_mix)
    w = 10 * class_band("ac")[1]
    t = 1.0 * np.arange(40000)
    amp = 0.5 * cls.capacity_mw
    ref = TimeSeries(0.0, 1.0, amp * np.sin(w * t), "MW")
    r = run_open_loop(cls, ref, zoh=20.0)
    out = np.max(np.abs(r.y_dev.values[20000:]))
    assert 20 * np.log10(out / amp) < -20.0


def test_open_loop_capacity_warning(nominal_mix, caplog):
    cls = ac_class(nominal_mix)
    ref = in_band_reference(class_band("ac"), 3600.0, 20.0, 2 * cls.capacity_mw, seed=0)
    assert run_open_loop(cls, ref).capacity_exceeded


# -- closed loop -------------------------------------------------------------------------

def test_rest_at_sixty_hz(nominal_mix):
    cfg = _short_cfg()
    res = run_closed_loop(cfg, nominal_mix.classes(), TimeSeries.zeros(cfg.n_steps, 1.0))
    assert np.all(res.freq_dev.values == 0.0) and np.all(res.frequency.values == 60.0)
    assert np.all(res.u.values == 0.0) and np.all(res.actuation.values == 0.0)


def test_step_rejected_by_ideal_actuators():
    cfg = _short_cfg(4000.0)
    ideal = [ResourceClass("g", None, TransferFunction.gain(1.0), share=1.0)]
    D = TimeSeries(0.0, 1.0, np.full(cfg.n_steps, 100.0))
    res = run_closed_loop(cfg, ideal, D)
    assert abs(res.freq_dev.values[-1]) < 1e-6 * np.max(np.abs(res.freq_dev.values))
    assert res.u.values[-1] == pytest.approx(-100.0, rel=1e-4)


def test_internal_consistency_and_reproducible(nominal_mix):
    cfg = _short_cfg()
    D = synthetic_disturbance(cfg.horizon, amplitude_mw=500.0, seed=2)
    a = run_closed_loop(cfg, nominal_mix.classes(), D)
    b = run_closed_loop(cfg, nominal_mix.classes(), D)
    assert np.array_equal(a.freq_dev.values, b.freq_dev.values)
    total = sum(ts.values for ts in a.per_class_power_dev.values())
    np.testing.assert_allclose(a.actuation.values, total, rtol=0, atol=1e-9)
    plant_in = D.with_values(D.values[: cfg.n_steps] + a.actuation.values)
    f = simulate_lti(to_state_space(GRID_PLANT), plant_in).values
    np.testing.assert_allclose(f, a.freq_dev.values, atol=1e-12)


def test_divergence_detected(nominal_mix):
    cfg = GridConfig(horizon=3600.0, divergence_hz=1e-3)
    D = TimeSeries(0.0, 1.0, np.full(cfg.n_steps, 100.0))
    with pytest.raises(DivergenceError, match="exceeds"):
        run_closed_loop(cfg, nominal_mix.classes(), D)


def test_sinusoid_rejection_matches_linear_theory(nominal_mix):
    classes = nominal_mix.classes()
    cfg = GridConfig(horizon=8 * 3600.0)
    w = np.sqrt(np.prod(class_band("fwh")))
    t = np.arange(cfg.n_steps, dtype=float)
    amp = 20.0
    D = TimeSeries(0.0, 1.0, amp * np.sin(w * t), "MW")
    res = run_closed_loop(cfg, classes, D)
    tail = t > 4 * 3600
    X = np.column_stack([np.sin(w * t[tail]), np.cos(w * t[tail]), np.ones(tail.sum())])
    coef, *_ = np.linalg.lstsq(X, res.freq_dev.values[tail], rcond=None)
    measured = np.hypot(coef[0], coef[1])
    theory = abs(tf_eval(GRID_PLANT, 1j * w) * sensitivity(cfg, classes, [w])[0]) * amp
    assert measured == pytest.approx(theory, rel=0.10)


def test_bandpass_classes_energy_neutral(nominal_mix):
    cfg = GridConfig(horizon=86400.0)
    D = synthetic_disturbance(cfg.horizon, seed=4)
    res = run_closed_loop(cfg, nominal_mix.classes(), D)
    for name in ("ac", "fwh"):
        v = res.per_class_power_dev[name].values
        assert abs(v.mean()) < 0.05 * np.sqrt(np.mean(v ** 2))


def test_open_loop_plant_deviation():
    cfg = _short_cfg(1000.0)
    D = TimeSeries(0.0, 1.0, np.full(cfg.n_steps, 1000.0))
    f = run_open_loop_plant(cfg, D)
    assert f.values[-1] > 0 and len(f) == cfg.n_steps


# -- signals ----------------------------------------------------------------------------------

def test_synthetic_disturbance_properties():
    D = synthetic_disturbance(86400.0, amplitude_mw=1000.0, seed=3)
    assert np.max(np.abs(D.values)) == pytest.approx(1000.0)
    assert D.values[0] == 0.0
    assert np.array_equal(D.values, synthetic_disturbance(86400.0, amplitude_mw=1000.0, seed=3).values)
    assert not np.array_equal(D.values, synthetic_disturbance(86400.0, amplitude_mw=1000.0, seed=4).values)


def test_in_band_reference_peak():
    r = in_band_reference(class_band("ac"), 86400.0, 20.0, 5.0, seed=0)
    assert np.max(np.abs(r.values)) == pytest.approx(5.0)


def test_duck_curve_and_split():
    net = duck_curve()
    h = net.t / 3600
    rise = net.values[np.argmin(np.abs(h - 18))] - net.values[np.argmin(np.abs(h - 15))]
    assert 10e3 < rise < 20e3
    assert np.max(net.values) == pytest.approx(27e3, rel=1e-3)
    parts = split_components(net, 2 * np.pi / 8 / 3600, class_band("swh"))
    np.testing.assert_allclose(parts["low"].values + parts["mid"].values + parts["high"].values, net.values,
                               atol=1e-6)
    np.testing.assert_allclose(parts["residual"].values, net.values - parts["low"].values, atol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        GridConfig(dt=0.0)
    with pytest.raises(ValueError):
        GridConfig(zoh=2.5)
    with pytest.raises(ValueError):
        ResourceClass("x", object(), TransferFunction.gain(1.0), n_loads=0.0)
