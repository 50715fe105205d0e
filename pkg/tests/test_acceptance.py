"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict (printed in the terminal
summary) before asserting. Informational lines carry supporting numbers that
are not part of the verdict.
"""

import time

import numpy as np
import pytest

from vbattery import kernels
from vbattery.agents import init_fleet, run_fleet
from vbattery.grid import (GRID_PLANT, GridConfig, ResourceClass, alpha_blend, apply_gain_schedule,
                           class_command_zeta, daily_gain, in_band_reference, run_closed_loop, run_open_loop,
                           run_open_loop_plant, synthetic_disturbance)
from vbattery.lti import simulate_lti, tf_eval, to_state_space
from vbattery.markov import check_stochastic, integrate_mean_field, myopic_tilt, tilt_derivative
from vbattery.scenarios import LOAD_CLASSES, TCL_CLASSES, build_mix, class_band
from vbattery.timeseries import TimeSeries

DAY = 86400.0

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def models(ac_model, wh_models, pool_model):
    return {"ac": ac_model, **wh_models, "pool": pool_model}


@pytest.fixture(scope="module")
def designs():
    mix = build_mix(seed=0, subgroups=1, classes=LOAD_CLASSES, include_hp=False, include_lp=False)
    return {d.name: d for d in mix.designs}


@pytest.fixture(scope="module")
def closed_loop_setup():
    """Default mix, +-1 GW synthetic disturbance, five days at dt = 1 s."""
    cfg = GridConfig(horizon=5 * DAY)
    classes = build_mix(seed=0, subgroups=3).classes()
    D = synthetic_disturbance(cfg.horizon, amplitude_mw=1000.0, seed=0)
    ol = float(np.max(np.abs(run_open_loop_plant(cfg, D).values)))
    return cfg, classes, D, ol


def test_c01_stochastic_matrices(models, acceptance):
    t0 = time.perf_counter()
    worst_sum, support_ok = 0.0, True
    for m in models.values():
        support = m.S0 > 0
        for zr in np.linspace(-5, 5, 41):
            S = myopic_tilt(m.S0, m.util, zr / m.rho)
            worst_sum = max(worst_sum, np.max(np.abs(S.sum(axis=1) - 1)))
            support_ok &= bool(np.array_equal(S > 0, support))
        check_stochastic(m.S0, atol=1e-12)
        worst_sum = max(worst_sum, np.max(np.abs(m.S0.sum(axis=1) - 1)))
    dt = time.perf_counter() - t0
    ok = worst_sum <= 1e-12 and support_ok and dt < 1.0
    acceptance("1", ok, f"max |row sum - 1| = {worst_sum:.1e}, support preserved = {support_ok}, {dt:.2f} s")
    assert ok


@pytest.mark.parametrize("name", LOAD_CLASSES)
def test_c02_mean_field_conservation(models, name, acceptance):
    m = models[name]
    n = int(5 * DAY)
    # band-limited tilt at a quarter of the clip limit
    t = np.arange(n, dtype=float)
    z = 0.25 * m.clip_zeta(1e9) * np.sin(2 * np.pi * t / 7200.0) * np.cos(2 * np.pi * t / 50000.0)
    t0 = time.perf_counter()
    _, _, mn, mass_err, _ = kernels.mf_integrate(m.S0, m.util, m.rates, z, m.pi0, 1.0, 3600)
    dt = time.perf_counter() - t0
    ok = mass_err <= 1e-9 and mn >= 0 and dt < 30.0
    acceptance("2", ok, f"{name}: max |sum mu - 1| = {mass_err:.1e} over 5 days, {dt:.1f} s")
    assert ok


def test_c03_linearization_oracle(ac_model, acceptance):
    m = ac_model
    eps = 1e-3
    n = int(1.0 / (m.rates[0] * sum(m.pi0[x] * m.S0[x, 20:].sum() for x in range(20))))
    z = TimeSeries(0.0, 1.0, np.full(n, eps))
    _, y = integrate_mean_field(m, z)
    y_nl = (y.values - m.mean_power) / eps
    y_lin = simulate_lti(m.linearization.reduced, z.with_values(np.ones(n))).values
    step_err = np.max(np.abs(y_nl - y_lin)) / np.max(np.abs(y_lin))
    h = 1e-6
    fd = (myopic_tilt(m.S0, m.util, h) - myopic_tilt(m.S0, m.util, -h)) / (2 * h)
    fd_err = np.max(np.abs(fd - tilt_derivative(m.S0, m.util)))
    ok = step_err < 0.01 and fd_err < 1e-8
    acceptance("3", ok, f"step response rel. error {step_err:.2e} (< 1e-2), tilt derivative FD error {fd_err:.1e}")
    assert ok


def test_c04_ac_resonance(ac_model, acceptance):
    w = np.logspace(-5, -1, 2000)
    G = np.abs(ac_model.linearization.freqresp(w))
    wr = w[np.argmax(G)]
    ok = 1e-3 <= wr <= 1e-2
    acceptance("4", ok, f"AC |G| peaks at {wr:.2e} rad/s, peak/DC = {G.max() / G[0]:.2f}")
    assert ok


@pytest.mark.parametrize("name", TCL_CLASSES)
def test_c05_flatness(designs, name, acceptance):
    d = designs[name]
    lo, hi = class_band(name)
    w = np.logspace(np.log10(lo), np.log10(hi), 400)
    G = d.model.linearization.freqresp(w)  # raw linearization data, not the fit
    H = tf_eval(d.design.local.m_inv, 1j * w) * G
    mag = np.max(np.abs(20 * np.log10(np.abs(H))))
    ph = np.max(np.abs(np.degrees(np.angle(H))))
    wa = 10 * hi
    att = -20 * np.log10(abs(tf_eval(d.design.local.m_total, 1j * wa) * d.model.linearization.freqresp([wa])[0]))
    ok = mag <= 3.0 and ph <= 30.0 and att >= 20.0
    acceptance("5", ok, f"{name}: M*G in band {mag:.2f} dB / {ph:.1f} deg, {att:.1f} dB down a decade above band")
    T = tf_eval(d.design.local.m_total, 1j * w) * G
    acceptance("5", True, f"{name}: bandpass-limited prefilter M_total*G in band "
                          f"{np.max(np.abs(20 * np.log10(np.abs(T)))):.2f} dB / "
                          f"{np.max(np.abs(np.degrees(np.angle(T)))):.1f} deg", info=True)
    assert ok


def test_c06_agents_vs_mean_field(designs, acceptance):
    d = designs["ac"]
    n = 2000
    cls = ResourceClass("ac", d.model, d.design.local, float(n), 1.0)
    t0 = time.perf_counter()
    ref = in_band_reference(class_band("ac"), DAY, 20.0, 0.5 * cls.capacity_mw, seed=0)
    zeta = class_command_zeta(cls, ref, 20.0)
    _, y = integrate_mean_field(d.model, TimeSeries(0.0, 1.0, np.repeat(zeta.values, 20)))
    h = run_fleet(init_fleet(n, d.model, seed=0), zeta)
    dt = time.perf_counter() - t0
    err = h.power.values / n - y.values[::20]
    nrms = np.sqrt(np.mean(err ** 2)) / d.model.mean_power
    ok = nrms < 0.05 and dt < 120.0
    acceptance("6", ok, f"AC, N={n}, 24 h at 50% capacity: RMS(Y/N - y)/y0 = {nrms:.2%}, {dt:.1f} s")
    assert ok


@pytest.mark.parametrize("name", LOAD_CLASSES)
def test_c07_open_loop_tracking(designs, name, acceptance):
    d = designs[name]
    cls = ResourceClass(name, d.model, d.design.local, 2000.0, 1.0)
    horizon = 3 * DAY if name in ("swh", "pool") else DAY
    ref = in_band_reference(class_band(name), horizon, 20.0, 0.5 * cls.capacity_mw, seed=0)
    r = run_open_loop(cls, ref)
    ok = r.rms_error < 0.10
    if name not in TCL_CLASSES:
        # the open-loop tracking experiment covers the three TCL classes only
        acceptance("7", True, f"{name}: mean-field tracking at 50% capacity, normalized RMS = {r.rms_error:.1%}",
                   info=True)
        return
    acceptance("7", ok, f"{name}: mean-field tracking at 50% capacity, normalized RMS = {r.rms_error:.1%}")
    assert ok


def test_c07_ac_cycling(designs, acceptance):
    d = designs["ac"]
    cls = ResourceClass("ac", d.model, d.design.local, 2000.0, 1.0)
    ref = in_band_reference(class_band("ac"), DAY, 20.0, 0.2 * cls.capacity_mw, seed=0)
    r = run_open_loop(cls, ref, mode="agents", seed=0)
    ok = r.cycling_ratio < 1.15
    acceptance("7", ok, f"ac: 2000 agents at 20% capacity, cycling ratio = {r.cycling_ratio:.3f}, "
                        f"tracking RMS = {r.rms_error:.1%}")
    assert ok


def test_c08_closed_loop(closed_loop_setup, acceptance):
    cfg, classes, D, ol = closed_loop_setup
    t0 = time.perf_counter()
    res = run_closed_loop(cfg, classes, D)
    dt = time.perf_counter() - t0
    s = res.summary()
    ratio = ol / s["max_abs_freq_dev_hz"]
    rest = run_closed_loop(GridConfig(horizon=DAY), classes, TimeSeries.zeros(int(DAY) + 1, 1.0))
    rest_ok = bool(np.all(rest.frequency.values == 60.0))
    oka = acceptance("8a", s["corr_actuation_minus_d"] > 0.99, f"corr(actuation, -D) = {s['corr_actuation_minus_d']:.5f}")
    okb = acceptance("8b", ratio >= 20.0 and dt < 300.0,
                     f"max |df| {s['max_abs_freq_dev_hz']:.4f} Hz vs open loop {ol:.3f} Hz, ratio {ratio:.1f}, "
                     f"{dt:.0f} s for 5 days")
    okc = acceptance("8c", rest_ok, f"D = 0: max |f - 60| = {np.max(np.abs(rest.frequency.values - 60.0)):.1e} Hz")
    assert oka and okb and okc


def test_c09_alpha_sweep(acceptance):
    cfg = GridConfig(horizon=DAY)
    classes = build_mix(seed=0, subgroups=3).classes()
    D = synthetic_disturbance(cfg.horizon, amplitude_mw=1000.0, seed=0)
    alphas = (0.0, 0.25, 0.5, 0.75, 1.0)
    j2 = np.array([run_closed_loop(cfg, alpha_blend(classes, a), D).summary()["mileage_j2"] for a in alphas])
    reduction = j2[-1] < 0.5 * j2[0]
    monotone = bool(np.all(j2[1:] <= 1.05 * j2[:-1]))
    ok = reduction and monotone
    acceptance("9", ok, "J2 = " + ", ".join(f"{v:.0f}" for v in j2) + f" MW^2; J2(1)/J2(0) = {j2[-1] / j2[0]:.2f}")
    assert ok


def test_c10_time_varying_gain(closed_loop_setup, acceptance):
    cfg, classes, D, ol = closed_loop_setup
    tv = [apply_gain_schedule(c, daily_gain) if c.name.startswith("ac") else c for c in classes]
    res = run_closed_loop(cfg, tv, D)
    peak = float(np.max(np.abs(res.freq_dev.values)))
    ratio = ol / peak
    ok = ratio >= 20.0
    acceptance("10", ok, f"AC gain g(t) in [0.5, 1]: max |df| {peak:.4f} Hz, rejection ratio {ratio:.1f}")
    assert ok


def test_c11_plant(acceptance):
    dc = float(np.real(tf_eval(GRID_PLANT, 0.0)))
    rel = abs(dc - 1.9206e-4) / 1.9206e-4
    exact = 1e-5 * 2.057 / 0.1071
    poles = np.roots(GRID_PLANT.den)
    ss = to_state_space(GRID_PLANT)
    x = ss.B[:, 0].copy()
    decay = np.linalg.norm(np.linalg.matrix_power(np.eye(len(x)) + 0.1 * ss.A, 2000) @ x) < 1e-6 * np.linalg.norm(x)
    ok = abs(dc - exact) / exact < 1e-8 and np.all(poles.real < 0) and decay
    acceptance("11", ok, f"DC gain {dc:.10e} (1.9206e-4 to 4 digits: rel {rel:.1e}), "
                         f"poles {', '.join(f'{p:.4f}' for p in poles)}")
    assert ok
