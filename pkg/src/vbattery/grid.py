"""Grid-level loop: PI compensator, resource classes, grid plant.

Sign convention: the plant input is ``D + sum(actuation)`` (MW) and its
output is the frequency deviation ``df`` (Hz). The compensator acts on
``w = -df`` so that, with enough loop gain, the aggregate actuation
approaches ``-D``.

Load classes receive a per-load command ``share * U * 1000 / n_loads`` (kW)
through their prefilter; the filter output is the tilting parameter
``zeta``, delivered on a zero-order hold (20 s by default). Ideal actuators
pass ``share * F(s) U`` straight to the plant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid


from .agents import init_fleet, run_fleet
from .filters import LocalFilter
from .lti import (TransferFunction, discretize_zoh, simulate_lti,
                  tf_eval, to_state_space)
from .markov import ControlledModel, DivergenceError, integrate_mean_field, rk4_propagator
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

#: Reduced grid model, MW in, Hz out.
GRID_PLANT = TransferFunction([1e-5 * 2.488, 1e-5 * 2.057], [1.0, 0.3827, 0.1071])
KP_DEFAULT = 516.0
KI_DEFAULT = 258.0
#: Angular frequency of the daily gain fluctuation, rad/s.
GAIN_FREQ = 727e-7


def pi_compensator(kp: float = KP_DEFAULT, ki: float = KI_DEFAULT) -> TransferFunction:
    """``G_c(s) = K_P + K_I / s``."""
    if kp < 0 or ki < 0:
        raise ValueError("PI gains must be nonnegative")
    if ki == 0:
        return TransferFunction.gain(kp)
    return TransferFunction([kp, ki], [1.0, 0.0])


def daily_gain(t):
    """``g(t) = 1 - 0.5 sin(GAIN_FREQ t)``."""
    return 1.0 - 0.5 * np.sin(GAIN_FREQ * np.asarray(t, dtype=float))


@dataclass
class ResourceClass:
    """One participant in the loop.

    Parameters
    ----------
    model : ControlledModel or None
        ``None`` marks an ideal actuator whose output is ``share * filter(U)``.
    local_filter : LocalFilter or TransferFunction
        Prefilter (load classes) or actuator response (ideal classes).
    share : float
        Scaling of ``U`` fed to this class.
    gain_schedule : callable, optional
        ``g(t)`` multiplying the class power output.
    mileage : bool
        Whether the output counts towards the mileage cost.
    """

    name: str
    model: ControlledModel | None
    local_filter: LocalFilter | TransferFunction
    n_loads: float = 0.0
    share: float = 1.0
    gain_schedule: Callable | None = None
    mileage: bool = False

    def __post_init__(self):
        if self.n_loads < 0:
            raise ValueError("n_loads must be nonnegative")
        if self.model is not None and self.n_loads == 0:
            raise ValueError(f"load class {self.name!r} needs n_loads > 0")

    @property
    def is_ideal(self) -> bool:
        return self.model is None

    @property
    def filter_tf(self) -> TransferFunction:
        f = self.local_filter
        return f.m_total if isinstance(f, LocalFilter) else f

    @property
    def capacity_mw(self) -> float:
        return math.inf if self.is_ideal else self.n_loads * self.model.capacity / 1000.0

    def response(self, w) -> np.ndarray:
        """Linearized contribution to the total response at ``w``."""
        w = np.asarray(w, dtype=float)
        H = self.share * tf_eval(self.filter_tf, 1j * w)
        if self.is_ideal:
            return H
        return H * self.model.linearization.freqresp(w)


@dataclass
class GridConfig:
    plant: TransferFunction = GRID_PLANT
    kp: float = KP_DEFAULT
    ki: float = KI_DEFAULT
    omega_nominal: float = 60.0
    dt: float = 1.0
    horizon: float = 24 * 3600.0
    zoh: float = 20.0
    divergence_hz: float = 1.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be nonnegative")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        ratio = self.zoh / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("zoh must be a positive multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def zoh_steps(self) -> int:
        return int(round(self.zoh / self.dt))


@dataclass
class SimResult:
    freq_dev: TimeSeries
    u: TimeSeries
    per_class_power_dev: dict[str, TimeSeries]
    u_ideal: TimeSeries
    disturbance: TimeSeries
    actuation: TimeSeries
    zeta: dict[str, TimeSeries] = field(default_factory=dict)

    @property
    def frequency(self) -> TimeSeries:
        return self.freq_dev.with_values(60.0 + self.freq_dev.values, "Hz")

    def summary(self) -> dict:
        d = self.disturbance.values
        a = self.actuation.values
        corr = float(np.corrcoef(a, -d)[0, 1]) if np.std(d) > 0 and np.std(a) > 0 else float("nan")
        return {
            "max_abs_freq_dev_hz": float(np.max(np.abs(self.freq_dev.values))),
            "rms_freq_dev_hz": float(np.sqrt(np.mean(self.freq_dev.values ** 2))),
            "corr_actuation_minus_d": corr,
            "mileage_j2": mileage_cost(self.u_ideal),
            "max_abs_u_mw": float(np.max(np.abs(self.u.values))),
        }


def build_total_response(classes, w) -> np.ndarray:
    """Pointwise sum of every class contribution ``share * M(jw) G(jw)``."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    H = np.zeros(w.size, dtype=complex)
    for c in classes:
        H += c.response(w)
    return H


def sensitivity(cfg: GridConfig, classes, w) -> np.ndarray:
    """``S = 1 / (1 + G_p G_c H_total)`` at ``w``."""
    s = 1j * np.asarray(w, dtype=float)
    L = tf_eval(cfg.plant, s) * tf_eval(pi_compensator(cfg.kp, cfg.ki), s) * build_total_response(classes, w)
    return 1.0 / (1.0 + L)


def alpha_blend(classes, alpha: float, ac_name: str = "ac"):
    """Move a fraction ``1 - alpha`` of the AC band to an ideal actuator.

    Every class whose name starts with ``ac_name`` has its share scaled by
    ``alpha``; an ideal class ``(1 - alpha) * share * M_BP`` is added per AC
    class (counted in the mileage).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = []
    for c in classes:
        if not c.is_ideal and c.name.startswith(ac_name):
            out.append(replace(c, share=alpha * c.share))
            if alpha < 1.0:
                bp = c.local_filter.m_bp if isinstance(c.local_filter, LocalFilter) else c.filter_tf
                out.append(ResourceClass(f"ideal_{c.name}", None, bp, share=(1 - alpha) * c.share,
                                         mileage=True))
        else:
            out.append(c)
    return out


def apply_gain_schedule(cls: ResourceClass, g: Callable) -> ResourceClass:
    """Copy of ``cls`` whose power output is multiplied by ``g(t)``."""
    return replace(cls, gain_schedule=g)


def mileage_cost(u_ideal: TimeSeries, T: float | None = None) -> float:
    """``J^2 = (1/T) int_0^T |U^a|^2 dt`` by the trapezoid rule."""
    v = np.asarray(u_ideal.values, dtype=float)
    if T is None:
        T = (v.size - 1) * u_ideal.dt
    n = int(round(T / u_ideal.dt))
    if n + 1 > v.size:
        raise ValueError("T exceeds the series length")
    if n == 0:
        return 0.0
    return float(trapezoid(v[: n + 1] ** 2, dx=u_ideal.dt) / T)


# -- simulation --------------------------------------------------------------

class _MeanFieldActuator:
    """Window-wise exact RK4 propagation of one class's mean-field state.

    The state is kept as a deviation ``dmu = mu - pi0``, with the nominal
    chain treated as exactly stationary, so that ``zeta == 0`` throughout
    leaves the output at ``y0`` without round-off drift.
    """

    def __init__(self, model: ControlledModel, dt: float, n_steps: int):
        self.model = model
        self.dmu = np.zeros(model.d)
        self.dt = dt
        self.n = n_steps
        self.buf = np.empty((n_steps, model.d))
        self._last_zeta = None
        self._P = None
        self._drift = None

    def window(self, zeta: float, n: int) -> np.ndarray:
        pi0 = self.model.pi0
        if zeta != self._last_zeta:
            self._P = rk4_propagator(self.model.tilted_generator(zeta), self.dt)
            self._drift = np.zeros_like(pi0) if zeta == 0.0 else pi0 @ self._P - pi0
            self._last_zeta = zeta
        dmu = self.dmu
        buf = self.buf[:n]
        for j in range(n):
            buf[j] = dmu
            dmu = dmu @ self._P + self._drift
        mu = pi0 + dmu
        if mu.min() < -1e-9 or abs(mu.sum() - 1.0) > 1e-9:
            raise DivergenceError(f"mean-field state of {self.model.name!r} left the simplex")
        self.dmu = dmu
        return self.model.mean_power + buf @ self.model.util


class _AgentActuator:
    """Stochastic fleet stepped at ``dt`` with ``zeta`` held per window."""

    def __init__(self, model: ControlledModel, dt: float, n_agents: int, seed):
        self.model = model
        self.fleet = init_fleet(n_agents, model, seed)
        self.dt = dt

    def window(self, zeta: float, n: int) -> np.ndarray:
        z_ts = TimeSeries(self.fleet.time, self.dt, np.full(n, zeta))
        hist = run_fleet(self.fleet, z_ts, window=self.dt)
        return hist.power.values / self.fleet.n


def _stack_filters(tfs, dt):
    """Block-diagonal ZOH realization of SISO filters sharing one input."""
    blocks = [to_state_space(tf) for tf in tfs]
    Ads, Bds = zip(*(discretize_zoh(ss, dt) for ss in blocks)) if blocks else ((), ())
    n = sum(b.n_states for b in blocks)
    Ad = sla.block_diag(*Ads) if blocks else np.zeros((0, 0))
    Bd = np.concatenate([b.ravel() for b in Bds]) if blocks else np.zeros(0)
    C = np.zeros((len(blocks), n))
    D = np.zeros(len(blocks))
    k = 0
    for i, ss in enumerate(blocks):
        C[i, k:k + ss.n_states] = ss.C.ravel()
        D[i] = ss.D.ravel()[0]
        k += ss.n_states
    return Ad, Bd, C, D


def run_closed_loop(cfg: GridConfig, classes, disturbance: TimeSeries, mode: str = "mean_field",
                    seed=None, n_agents: int = 2000, record_zeta: bool = False) -> SimResult:
    """Simulate the full loop at ``cfg.dt`` for ``cfg.horizon`` seconds.

    ``disturbance`` must be sampled at ``cfg.dt`` and cover the horizon.

    Raises
    ------
    DivergenceError
        If ``|df|`` exceeds ``cfg.divergence_hz``.
    """
    if mode not in ("mean_field", "agents"):
        raise ValueError("mode must be 'mean_field' or 'agents'")
    dt = cfg.dt
    n = cfg.n_steps
    if abs(disturbance.dt - dt) > 1e-12 or len(disturbance) < n:
        raise ValueError("disturbance must be sampled at cfg.dt and cover the horizon")
    dvals = np.asarray(disturbance.values[:n], dtype=float)
    t = disturbance.t0 + dt * np.arange(n)

    plant = to_state_space(cfg.plant)
    if abs(plant.D.ravel()[0]) > 0:
        raise ValueError("grid plant must be strictly proper")
    Apd, Bpd = discretize_zoh(plant, dt)
    Apd = np.asarray(Apd)
    Bpd = np.asarray(Bpd).ravel()
    Cp = plant.C.ravel()

    Af, Bf, Cf, Df = _stack_filters([c.filter_tf for c in classes], dt)
    xf = np.zeros(Af.shape[0])
    xp = np.zeros(Apd.shape[0])
    integ = 0.0
    kp, ki = cfg.kp, cfg.ki

    load_idx = [i for i, c in enumerate(classes) if not c.is_ideal]
    ideal_idx = [i for i, c in enumerate(classes) if c.is_ideal]
    mileage_idx = [i for i in ideal_idx if classes[i].mileage]
    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(max(len(load_idx), 1))
    zs = cfg.zoh_steps
    acts = {}
    for j, i in enumerate(load_idx):
        c = classes[i]
        acts[i] = (_MeanFieldActuator(c.model, dt, zs) if mode == "mean_field"
                   else _AgentActuator(c.model, dt, n_agents, seeds[j]))
    scale = {i: classes[i].share * 1000.0 / classes[i].n_loads for i in load_idx}
    mw_per_kw = {i: classes[i].n_loads / 1000.0 for i in load_idx}
    y0 = {i: classes[i].model.mean_power for i in load_idx}
    gains = {}
    for i in load_idx:
        g = classes[i].gain_schedule
        gains[i] = np.ones(n) if g is None else np.broadcast_to(np.asarray(g(t), dtype=float), (n,))

    df = np.empty(n)
    u = np.empty(n)
    per_class = np.zeros((len(classes), n))
    zeta_rec = {i: np.zeros(n) for i in load_idx} if record_zeta else {}
    window_out = {i: np.zeros(zs) for i in load_idx}
    ideal_share = np.array([classes[i].share for i in ideal_idx])
    lim = cfg.divergence_hz

    for k in range(n):
        f = Cp @ xp
        if not abs(f) <= lim:
            raise DivergenceError(f"|df| = {abs(f):.3g} Hz exceeds {lim} Hz at t = {t[k]:.0f} s")
        df[k] = f
        w = -f
        uk = kp * w + ki * integ
        integ += dt * w
        u[k] = uk
        yf = Cf @ xf + Df * uk
        xf = Af @ xf + Bf * uk
        j = k % zs
        if j == 0:
            m = min(zs, n - k)
            for i in load_idx:
                c = classes[i]
                zeta = float(c.model.clip_zeta(yf[i] * scale[i]))
                window_out[i][:m] = acts[i].window(zeta, m)
                if record_zeta:
                    zeta_rec[i][k:k + m] = zeta
        act = 0.0
        for i in load_idx:
            p = mw_per_kw[i] * (window_out[i][j] - y0[i]) * gains[i][k]
            per_class[i, k] = p
            act += p
        if ideal_idx:
            pi = ideal_share * yf[ideal_idx]
            per_class[ideal_idx, k] = pi
            act += pi.sum()
        xp = Apd @ xp + Bpd * (dvals[k] + act)

    mk = lambda v, units: TimeSeries(disturbance.t0, dt, v, units)
    u_ideal = per_class[mileage_idx].sum(axis=0) if mileage_idx else np.zeros(n)
    return SimResult(
        freq_dev=mk(df, "Hz"),
        u=mk(u, "MW"),
        per_class_power_dev={c.name: mk(per_class[i], "MW") for i, c in enumerate(classes)},
        u_ideal=mk(u_ideal, "MW"),
        disturbance=mk(dvals, "MW"),
        actuation=mk(per_class.sum(axis=0), "MW"),
        zeta={classes[i].name: mk(v, "1/kW") for i, v in zeta_rec.items()},
    )


def run_open_loop_plant(cfg: GridConfig, disturbance: TimeSeries) -> TimeSeries:
    """Frequency deviation with the compensator switched off."""
    return simulate_lti(to_state_space(cfg.plant), disturbance.with_values(disturbance.values[: cfg.n_steps]),
                        units="Hz")


@dataclass
class TrackingResult:
    y_dev: TimeSeries
    reference_filtered: TimeSeries
    zeta: TimeSeries
    rms_error: float
    capacity_exceeded: bool
    switches: np.ndarray | None = None
    baseline_switches: np.ndarray | None = None

    @property
    def cycling_ratio(self) -> float:
        if self.switches is None or self.baseline_switches is None:
            raise ValueError("cycling ratio requires an agent run")
        base = self.baseline_switches.sum()
        return float(self.switches.sum() / base) if base else float("nan")


def normalized_rms(err, ref) -> float:
    den = float(np.sqrt(np.mean(np.asarray(ref) ** 2)))
    num = float(np.sqrt(np.mean(np.asarray(err) ** 2)))
    return num / den if den > 0 else (0.0 if num == 0 else math.inf)


def class_command_zeta(cls: ResourceClass, reference: TimeSeries, zoh: float = 20.0) -> TimeSeries:
    """``zeta`` produced by the class prefilter for a reference in MW, held on ``zoh``."""
    cmd = reference.scaled(cls.share * 1000.0 / cls.n_loads, "kW")
    z = simulate_lti(to_state_space(cls.filter_tf), cmd)
    held = z.hold(zoh)
    return held.with_values(cls.model.clip_zeta(held.values), "1/kW")


def run_open_loop(cls: ResourceClass, reference: TimeSeries, mode: str = "mean_field", seed=None,
                  zoh: float = 20.0, baseline: bool = True) -> TrackingResult:
    """Drive one load class with a reference (MW) and compare to its band-passed version.

    In ``agents`` mode ``cls.n_loads`` agents are simulated and, when
    ``baseline`` is set, a same-seed nominal run provides the cycling
    reference.
    """
    if cls.is_ideal:
        raise ValueError("open-loop tracking needs a load class")
    zeta = class_command_zeta(cls, reference, zoh)
    bp = cls.local_filter.m_bp if isinstance(cls.local_filter, LocalFilter) else TransferFunction.gain(1.0)
    ref_f = simulate_lti(to_state_space(bp), reference.scaled(cls.share), units="MW")
    y0 = cls.model.mean_power
    sw = base_sw = None
    if mode == "mean_field":
        _, y = integrate_mean_field(cls.model, zeta)
        y_dev = y.with_values(cls.n_loads * (y.values - y0) / 1000.0, "MW")
    elif mode == "agents":
        n_ag = int(round(cls.n_loads))
        fleet = init_fleet(n_ag, cls.model, seed)
        hist = run_fleet(fleet, zeta, window=zeta.dt)
        y_dev = hist.power.with_values((hist.power.values - n_ag * y0) / 1000.0, "MW")
        sw = hist.switches
        if baseline:
            f0 = init_fleet(n_ag, cls.model, seed)
            h0 = run_fleet(f0, zeta.with_values(np.zeros(len(zeta))), window=zeta.dt)
            base_sw = h0.switches
    else:
        raise ValueError("mode must be 'mean_field' or 'agents'")
    exceeded = bool(np.max(np.abs(reference.values)) * cls.share > cls.capacity_mw)
    if exceeded:
        logger.warning("reference exceeds the capacity of class %s (%.1f MW)", cls.name, cls.capacity_mw)
    return TrackingResult(y_dev, ref_f, zeta, normalized_rms(y_dev.values - ref_f.values, ref_f.values),
                          exceeded, sw, base_sw)


# -- signals -----------------------------------------------------------------

def synthetic_disturbance(horizon: float, dt: float = 1.0, amplitude_mw: float = 1000.0, seed=None,
                          f_min: float = 1.0 / 86400.0, f_max: float = 1.0 / 900.0, n_tones: int = 48,
                          noise_fraction: float = 0.1, slope: float = 0.5, fade_in: float = 3600.0) -> TimeSeries:
    """Stand-in for a balancing-reserves signal.

    Random-phase sinusoids at log-spaced frequencies between ``f_min`` and
    ``f_max`` (Hz) with amplitude proportional to ``f**-slope``, plus
    low-pass filtered noise carrying ``noise_fraction`` of the RMS. The sum
    is shifted to zero mean, faded in with a raised cosine over ``fade_in``
    seconds (so a loop starting at rest sees no step) and scaled to a peak of
    ``amplitude_mw``.
    """
    from scipy import signal

    rng = np.random.default_rng(seed)
    n = int(round(horizon / dt)) + 1
    t = dt * np.arange(n)
    f = np.geomspace(f_min, f_max, n_tones) * np.exp(rng.uniform(-0.1, 0.1, n_tones))
    amp = (f / f_min) ** -slope
    ph = rng.uniform(0, 2 * np.pi, n_tones)
    x = np.zeros(n)
    for fi, ai, pi in zip(f, amp, ph):
        x += ai * np.sin(2 * np.pi * fi * t + pi)
    if noise_fraction > 0:
        sos = signal.butter(2, f_max, btype="low", fs=1.0 / dt, output="sos")
        e = signal.sosfiltfilt(sos, rng.standard_normal(n))
        x += noise_fraction * np.std(x) / np.std(e) * e
    x -= x.mean()
    if fade_in > 0:
        ramp = t < fade_in
        x[ramp] *= 0.5 * (1 - np.cos(np.pi * t[ramp] / fade_in))
    x *= amplitude_mw / np.max(np.abs(x))
    return TimeSeries(0.0, dt, x, "MW")


def in_band_reference(band, horizon: float, dt: float, amplitude_mw: float, seed=None,
                      n_tones: int = 6) -> TimeSeries:
    """Sum of random-phase tones log-spaced inside ``band`` (rad/s), peak ``amplitude_mw``."""
    rng = np.random.default_rng(seed)
    n = int(round(horizon / dt)) + 1
    t = dt * np.arange(n)
    lo, hi = band
    w = np.geomspace(lo * 1.15, hi / 1.15, n_tones)
    x = np.zeros(n)
    for wi, ph in zip(w, rng.uniform(0, 2 * np.pi, n_tones)):
        x += np.sin(wi * t + ph)
    x *= amplitude_mw / np.max(np.abs(x))
    return TimeSeries(0.0, dt, x, "MW")


def duck_curve(horizon: float = 86400.0, dt: float = 60.0, peak_gw: float = 27.0) -> TimeSeries:
    """Stylized net-load with a midday solar dip and an evening ramp (MW).

    A periodic cubic spline through hourly knots; the 3 pm - 6 pm rise is
    about 15 GW.
    """
    from scipy.interpolate import CubicSpline

    hours = np.arange(25.0)
    gw = np.array([19.0, 18.2, 17.6, 17.3, 17.4, 18.0, 19.0, 19.5, 17.0, 14.0, 11.8, 10.6, 10.2,
                   10.3, 10.9, 12.0, 14.5, 19.5, 25.5, 27.0, 26.2, 24.5, 22.5, 20.5, 19.0])
    gw[-1] = gw[0]
    gw *= peak_gw / gw.max()
    cs = CubicSpline(hours * 3600.0, gw * 1000.0, bc_type="periodic")
    n = int(round(horizon / dt)) + 1
    t = dt * np.arange(n)
    return TimeSeries(0.0, dt, cs(np.mod(t, 86400.0)), "MW")


def split_components(signal_ts: TimeSeries, lp_cutoff: float, band) -> dict[str, TimeSeries]:
    """Split a signal into low-pass, band-pass and high-pass parts.

    The low-pass part uses a zero-phase (forward-backward) second-order
    Butterworth filter; the band-pass part is the band ``band`` (rad/s) of
    the remainder and the high-pass part is what is left.
    """
    from scipy import signal

    fs = 1.0 / signal_ts.dt
    to_hz = 1.0 / (2 * np.pi)
    x = np.asarray(signal_ts.values, dtype=float)
    sos_lp = signal.butter(2, lp_cutoff * to_hz, btype="low", fs=fs, output="sos")
    low = signal.sosfiltfilt(sos_lp, x)
    rest = x - low
    sos_bp = signal.butter(2, [band[0] * to_hz, band[1] * to_hz], btype="band", fs=fs, output="sos")
    mid = signal.sosfiltfilt(sos_bp, rest)
    return {"low": signal_ts.with_values(low), "mid": signal_ts.with_values(mid),
            "high": signal_ts.with_values(rest - mid), "residual": signal_ts.with_values(rest)}
