"""Physical load models and identification of their nominal Markov chains.

Thermostatically controlled loads (TCLs) follow a first-order temperature
ODE with a hysteretic thermostat. Their nominal chain lives on
``X = {off, on} x {temperature bins}`` with state index ``mode*d_half + bin``
(mode 0 is off). ``Q0`` (bin transitions) is identified by Monte-Carlo from
simulated trajectories sampled on a Poisson clock; ``R0`` (mode transitions)
comes from logistic switching curves.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

#: Uniform ranges (lo, hi) or fixed values per load class.
#: ``r_th`` (thermal resistance, degC/kW) is not part of the published
#: parameter table; its value sets the on-mode temperature gain.
CLASS_TABLE = {
    "ac": dict(theta_set=(18.0, 22.0), delta=(0.8, 1.0), theta_a=(30.0, 34.0), rc=(3.5, 4.5),
               rho_tr=14.0, cop=2.5, r_th=2.0),
    "fwh": dict(theta_set=(48.0, 52.0), delta=(2.95, 3.0), theta_a=(19.0, 21.0), rc=(30.0, 36.0),
                rho_tr=-5.0, cop=1.0, r_th=85.0),
    "swh": dict(theta_set=(48.0, 52.0), delta=(3.95, 4.0), theta_a=(19.0, 21.0), rc=(67.0, 73.0),
                rho_tr=-5.0, cop=1.0, r_th=140.0),
}

#: Poisson sampling rates (1/s) as (rate when off, rate when on).
CLASS_RATES = {
    "ac": (1.0 / 60.0, 1.0 / 60.0),
    "fwh": (1.0 / 500.0, 1.0 / 40.0),
    "swh": (1.0 / 1000.0, 1.0 / 40.0),
    "pool": (1.0 / 60.0, 1.0 / 60.0),
}

#: Euler step (s) used for identification runs.
CLASS_DT = {"ac": 2.0, "fwh": 5.0, "swh": 5.0}


class IdentificationError(RuntimeError):
    """Monte-Carlo identification did not visit every state often enough."""


@dataclass(frozen=True)
class TclParams:
    """Physical parameters of one TCL.

    ``rho_tr`` is the energy transfer rate in kW, positive for cooling.
    ``rc`` is the thermal time constant in hours and ``r_th`` the thermal
    resistance in degC/kW.
    """

    theta_set: float
    delta: float
    theta_a: float
    rc: float
    rho_tr: float
    cop: float
    r_th: float = 2.0
    load_class: str = "custom"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("deadband delta must be positive")
        if not self.rc > 0:
            raise ValueError("rc must be positive")
        if not self.cop > 0:
            raise ValueError("cop must be positive")
        if self.rho_tr == 0:
            raise ValueError("rho_tr must be nonzero")
        if not self.r_th > 0:
            raise ValueError("r_th must be positive")

    @property
    def rho(self) -> float:
        """Electrical power when on (kW)."""
        return abs(self.rho_tr) / self.cop

    @property
    def cooling(self) -> bool:
        return self.rho_tr > 0

    @property
    def theta_g(self) -> float:
        return self.r_th * self.rho_tr

    @property
    def theta_min(self) -> float:
        return self.theta_set - self.delta / 2

    @property
    def theta_max(self) -> float:
        return self.theta_set + self.delta / 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TclParams":
        return cls(**json.loads(text))


def sample_tcl_params(load_class: str, rng_seed=None) -> TclParams:
    """Draw TCL parameters uniformly from the class ranges."""
    key = load_class.lower().replace("-", "")
    if key not in CLASS_TABLE:
        raise ValueError(f"unknown load class {load_class!r}; expected one of {sorted(CLASS_TABLE)}")
    rng = np.random.default_rng(rng_seed)
    vals = {}
    for name, spec in CLASS_TABLE[key].items():
        vals[name] = float(rng.uniform(*spec)) if isinstance(spec, tuple) else float(spec)
    return TclParams(load_class=key, **vals)


def nominal_tcl_params(load_class: str) -> TclParams:
    """Parameters at the midpoint of every class range."""
    key = load_class.lower().replace("-", "")
    if key not in CLASS_TABLE:
        raise ValueError(f"unknown load class {load_class!r}")
    vals = {k: (0.5 * (v[0] + v[1]) if isinstance(v, tuple) else float(v)) for k, v in CLASS_TABLE[key].items()}
    return TclParams(load_class=key, **vals)


def analytic_dwell_times(p: TclParams) -> tuple[float, float]:
    """Noise-free (on, off) durations in hours between the deadband edges."""
    eq_off = p.theta_a
    eq_on = p.theta_a - p.theta_g

    def travel(a, b, e):
        if not (a - e) / (b - e) > 1:
            raise ValueError("thermostat band is not reachable with these parameters")
        return p.rc * math.log((a - e) / (b - e))

    if p.cooling:
        return travel(p.theta_max, p.theta_min, eq_on), travel(p.theta_min, p.theta_max, eq_off)
    return travel(p.theta_min, p.theta_max, eq_on), travel(p.theta_max, p.theta_min, eq_off)


@dataclass(frozen=True)
class TemperatureGrid:
    """Uniform quantization of the deadband into ``d_half`` bins."""

    theta_min: float
    theta_max: float
    d_half: int = 20

    def __post_init__(self):
        if self.d_half < 2 or not self.theta_max > self.theta_min:
            raise ValueError("need d_half >= 2 and theta_max > theta_min")

    @classmethod
    def for_params(cls, p: TclParams, d_half: int = 20) -> "TemperatureGrid":
        return cls(p.theta_min, p.theta_max, d_half)

    @property
    def theta_delta(self) -> float:
        return (self.theta_max - self.theta_min) / (self.d_half - 1)

    @property
    def values(self) -> np.ndarray:
        return self.theta_min + self.theta_delta * np.arange(self.d_half)

    def quantize(self, theta) -> np.ndarray:
        """Index of the nearest bin, clipped to the grid."""
        idx = np.rint((np.asarray(theta, dtype=float) - self.theta_min) / self.theta_delta)
        return np.clip(idx, 0, self.d_half - 1).astype(np.int64)


@dataclass(frozen=True)
class NominalTrajectory:
    temperature: TimeSeries
    mode: TimeSeries
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


def simulate_tcl(p: TclParams, horizon: float, dt: float = 1.0, sigma_w: float = 0.1, seed=None,
                 theta0: float | None = None, mode0: int = 0) -> NominalTrajectory:
    """Euler simulation of the TCL under its hysteretic thermostat.

    Parameters
    ----------
    horizon, dt : float
        Length and step in seconds. ``dt`` may not exceed 1% of ``rc``.
    sigma_w : float
        Standard deviation of the disturbance, degC per sqrt(hour).
    theta0, mode0
        Initial temperature (default: set-point) and mode (0 off, 1 on).
    """
    if dt > p.rc * 3600.0 / 100.0:
        raise ValueError(f"dt={dt} s too large for rc={p.rc} h (limit {p.rc * 36:.0f} s)")
    n = int(round(horizon / dt))
    dt_h = dt / 3600.0
    rng = np.random.default_rng(seed)
    noise = sigma_w * math.sqrt(dt_h) * rng.standard_normal(n) if sigma_w > 0 else np.zeros(n)
    th0 = p.theta_set if theta0 is None else float(theta0)
    theta, mode = kernels.tcl_euler(th0, int(mode0), noise, p.rc, p.theta_a, p.theta_g,
                                    p.theta_min, p.theta_max, p.cooling, dt_h)
    return NominalTrajectory(TimeSeries(0.0, dt, theta, "degC"), TimeSeries(0.0, dt, mode.astype(float), "on"))


def duty_cycle(traj: NominalTrajectory, skip: float = 0.0) -> float:
    k0 = int(round(skip / traj.mode.dt))
    return float(np.mean(traj.mode.values[k0:]))


def switching_period(traj: NominalTrajectory, skip: float = 0.0) -> float:
    """Mean time (s) between successive off->on switches."""
    k0 = int(round(skip / traj.mode.dt))
    m = traj.mode.values[k0:]
    ons = np.flatnonzero((m[1:] > 0.5) & (m[:-1] < 0.5))
    if ons.size < 2:
        raise ValueError("fewer than two switch-on events in trajectory")
    return float(np.mean(np.diff(ons)) * traj.mode.dt)


def poisson_sample_times(traj: NominalTrajectory, rate_off: float, rate_on: float, seed=None,
                         start: float = 0.0) -> np.ndarray:
    """Jump times of a Poisson clock whose rate follows the mode at each jump."""
    rng = np.random.default_rng(seed)
    dt = traj.mode.dt
    mode = traj.mode.values
    t_end = traj.mode.duration
    times = []
    t = start
    while True:
        rate = rate_on if mode[int(t / dt)] > 0.5 else rate_off
        t += rng.standard_exponential() / rate
        if t > t_end:
            break
        times.append(t)
    return np.asarray(times)


def pair_counts(traj: NominalTrajectory, grid: TemperatureGrid, rate_off: float, rate_on: float,
                n_samples: int, seed=None, start: float = 0.0) -> np.ndarray:
    """Counts of (state at T_k, bin at T_{k+1}) over Poisson sample times."""
    rng = np.random.default_rng(seed)
    bins = grid.quantize(traj.temperature.values)
    mode = traj.mode.values.astype(np.int8)
    expo = rng.standard_exponential(int(n_samples))
    k0 = int(round(start / traj.mode.dt))
    counts, _ = kernels.sample_pair_counts(bins, mode, k0, traj.mode.dt, rate_off, rate_on, expo, grid.d_half)
    return counts


def normalize_counts(counts: np.ndarray, grid: TemperatureGrid, floor: int = 20) -> np.ndarray:
    """Bayes-rule normalization of pair counts into ``Q0``.

    Rows never visited (possible only with ``floor == 0``) are set to stay
    in their own bin.

    Raises
    ------
    IdentificationError
        If some state was visited fewer than ``floor`` times.
    """
    visits = counts.sum(axis=1)
    low = np.flatnonzero(visits < floor)
    if low.size:
        labels = ", ".join(state_label(i, grid.d_half) for i in low[:12])
        more = "" if low.size <= 12 else f" (+{low.size - 12} more)"
        raise IdentificationError(
            f"{low.size} state(s) visited fewer than {floor} times: {labels}{more}; "
            "lengthen the simulation or increase the disturbance intensity"
        )
    Q0 = counts / np.maximum(visits, 1)[:, None]
    # with floor == 0 unvisited rows keep the temperature bin
    for i in np.flatnonzero(visits == 0):
        Q0[i, i % grid.d_half] = 1.0
    return Q0


def identify_q0(traj: NominalTrajectory, grid: TemperatureGrid, r, n_samples: int, seed=None,
                floor: int = 20, warmup: float = 0.0) -> np.ndarray:
    """Monte-Carlo estimate of the bin transition matrix ``Q0``.

    Parameters
    ----------
    r : float or (float, float)
        Poisson sampling rate (1/s), or ``(rate_off, rate_on)``.
    n_samples : int
        Maximum number of Poisson samples drawn along the trajectory.
    warmup : float
        Initial stretch (s) of the trajectory that is ignored.

    Returns
    -------
    ndarray, shape (2*d_half, d_half)
        Row ``mode*d_half + bin`` is the distribution of the bin at the next
        sample time.
    """
    rate_off, rate_on = (r, r) if np.isscalar(r) else r
    counts = pair_counts(traj, grid, rate_off, rate_on, n_samples, seed, warmup)
    return normalize_counts(counts, grid, floor)


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class SwitchingCurves:
    """Per-bin probabilities of switching on (``p_on``) and off (``p_off``)."""

    p_on: np.ndarray
    p_off: np.ndarray

    def __post_init__(self):
        p_on = np.clip(np.asarray(self.p_on, dtype=float), 0.0, 1.0)
        p_off = np.clip(np.asarray(self.p_off, dtype=float), 0.0, 1.0)
        if p_on.shape != p_off.shape:
            raise ValueError("p_on and p_off must have the same length")
        object.__setattr__(self, "p_on", p_on)
        object.__setattr__(self, "p_off", p_off)


#: Defaults for the logistic switching curves (normalized bin coordinate).
DEFAULT_CENTER_OFFSET = 0.2
DEFAULT_STEEPNESS = 16.0


def build_switching_curves(grid: TemperatureGrid, cooling: bool = True,
                           center_offset: float = DEFAULT_CENTER_OFFSET,
                           steepness: float = DEFAULT_STEEPNESS) -> SwitchingCurves:
    """Logistic switching curves with reflection symmetry.

    In the normalized coordinate ``z`` (0 at ``theta_min``, 1 at
    ``theta_max``) a cooling load switches on with probability
    ``logistic(steepness * (z - 1 + center_offset))``; ``p_off`` is the
    mirror image ``p_on(theta_max + theta_min - x)``. Heating loads use the
    mirrored pair.
    """
    if not steepness > 0:
        raise ValueError("steepness must be positive")
    z = np.arange(grid.d_half) / (grid.d_half - 1)
    rising = logistic(steepness * (z - 1.0 + center_offset))
    falling = rising[::-1]
    if cooling:
        return SwitchingCurves(rising, falling)
    return SwitchingCurves(falling, rising)


def build_r0(curves: SwitchingCurves) -> np.ndarray:
    """Mode transition matrix, rows indexed by ``mode*d_half + bin``.

    Column 0 is the probability of being off after the jump, column 1 of
    being on.
    """
    d_half = curves.p_on.size
    R0 = np.empty((2 * d_half, 2))
    R0[:d_half, 1] = curves.p_on
    R0[:d_half, 0] = 1.0 - curves.p_on
    R0[d_half:, 0] = curves.p_off
    R0[d_half:, 1] = 1.0 - curves.p_off
    return R0


def state_label(index: int, d_half: int) -> str:
    mode, b = divmod(int(index), d_half)
    return f"({'on' if mode else 'off'},{b})"


def state_labels(d_half: int) -> list[str]:
    return [state_label(i, d_half) for i in range(2 * d_half)]


def excursion_mask(d_half: int, cooling: bool) -> np.ndarray:
    """States sitting at a deadband edge in the mode that pushes outward."""
    mask = np.zeros(2 * d_half, dtype=np.int8)
    top, bottom = d_half - 1, 0
    if cooling:
        mask[0 * d_half + top] = 1
        mask[1 * d_half + bottom] = 1
    else:
        mask[1 * d_half + top] = 1
        mask[0 * d_half + bottom] = 1
    return mask


@dataclass
class TclChainFactors:
    """Result of the identification pipeline for one TCL."""

    params: TclParams
    grid: TemperatureGrid
    Q0: np.ndarray
    R0: np.ndarray
    rates: tuple[float, float]
    counts: np.ndarray
    duty_physical: float
    period_physical: float


def identify_tcl_chain(p: TclParams, d_half: int = 20, rates=None, n_samples: int = 60_000,
                       seed=None, sigma_w: float = 0.1, dt: float | None = None, floor: int = 20,
                       warmup_cycles: int = 10, center_offset: float = DEFAULT_CENTER_OFFSET,
                       steepness: float = DEFAULT_STEEPNESS, max_extensions: int = 3) -> TclChainFactors:
    """Simulate, sample and identify ``Q0``; build ``R0`` from switching curves."""
    key = p.load_class if p.load_class in CLASS_RATES else ("ac" if p.cooling else "fwh")
    rate_off, rate_on = CLASS_RATES[key] if rates is None else ((rates, rates) if np.isscalar(rates) else rates)
    if dt is None:
        dt = CLASS_DT.get(key, 1.0)
    grid = TemperatureGrid.for_params(p, d_half)
    t_on, t_off = analytic_dwell_times(p)
    period_s = (t_on + t_off) * 3600.0
    samples_per_cycle = t_on * 3600.0 * rate_on + t_off * 3600.0 * rate_off
    warmup = warmup_cycles * period_s
    horizon = warmup + 1.05 * n_samples / samples_per_cycle * period_s
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sim_seed, samp_seed = ss.spawn(2)
    for attempt in range(max_extensions + 1):
        traj = simulate_tcl(p, horizon, dt, sigma_w, seed=sim_seed)
        counts = pair_counts(traj, grid, rate_off, rate_on, int(2 * n_samples), samp_seed, warmup)
        if counts.sum(axis=1).min() >= floor or attempt == max_extensions:
            break
        logger.info("identification floor not met, doubling horizon (attempt %d)", attempt + 1)
        horizon = warmup + 2 * (horizon - warmup)
    Q0 = normalize_counts(counts, grid, floor)
    R0 = build_r0(build_switching_curves(grid, p.cooling, center_offset, steepness))
    return TclChainFactors(
        params=p, grid=grid, Q0=Q0, R0=R0, rates=(rate_off, rate_on), counts=counts,
        duty_physical=duty_cycle(traj, warmup), period_physical=period_s,
    )


def pool_nominal_model(cycle_hours: float = 12.0, r: float = 1.0 / 60.0, n_phases: int = 16,
                       rho: float = 1.0, tail: int = 4):
    """Nominal chain for a pool pump with ``cycle_hours`` on and off per day.

    States are ``(mode, phase)`` with index ``mode*n_phases + phase``. At
    every Poisson jump (rate ``r``) the phase advances with probability
    ``q``; in the last ``tail`` phases the advance may instead switch the
    mode (uniform hazard), and the final phase always switches. ``q`` is set
    so the mean time spent in each mode is ``cycle_hours``.

    Returns
    -------
    S0 : ndarray (2n, 2n)
    util : ndarray (2n,)
        ``rho`` kW when on, 0 when off.
    """
    n = int(n_phases)
    if not (1 <= tail <= n):
        raise ValueError("tail must be between 1 and n_phases")
    hazard = np.zeros(n)
    hazard[n - tail:] = 1.0 / np.arange(tail, 0, -1)
    # ticks until switch are uniform on {n-tail+1, ..., n}
    mean_ticks = n - tail + 1 + (tail - 1) / 2.0
    q = mean_ticks / (cycle_hours * 3600.0 * r)
    if q > 1:
        raise ValueError("sampling rate too low for the requested number of phases")
    d = 2 * n
    S0 = np.zeros((d, d))
    for m in (0, 1):
        for i in range(n):
            x = m * n + i
            S0[x, x] += 1.0 - q
            if i + 1 < n:
                S0[x, m * n + i + 1] += q * (1.0 - hazard[i])
            S0[x, (1 - m) * n] += q * hazard[i]
    util = np.concatenate([np.zeros(n), np.full(n, rho)])
    return S0, util


def tcl_controlled_model(factors: TclChainFactors, name: str | None = None):
    """Wrap identified factors as a :class:`~vbattery.markov.ControlledModel`."""
    from .markov import ControlledModel, state_rates

    d_half = factors.grid.d_half
    util = np.concatenate([np.zeros(d_half), np.full(d_half, factors.params.rho)])
    return ControlledModel.from_factors(
        factors.R0, factors.Q0, util, state_rates(d_half, *factors.rates),
        name=name or factors.params.load_class, labels=state_labels(d_half),
        excursion=excursion_mask(d_half, factors.params.cooling),
        mode_of=np.repeat(np.array([0, 1], dtype=np.int8), d_half),
    )


def pool_controlled_model(cycle_hours: float = 12.0, r: float = 1.0 / 60.0, n_phases: int = 16,
                          rho: float = 1.0, name: str = "pool"):
    from .markov import ControlledModel

    S0, util = pool_nominal_model(cycle_hours, r, n_phases, rho)
    labels = [f"({'on' if m else 'off'},{i})" for m in (0, 1) for i in range(n_phases)]
    return ControlledModel(S0, util, r, name=name, labels=labels,
                           mode_of=np.repeat(np.array([0, 1], dtype=np.int8), n_phases))


def build_class_model(load_class: str, params: TclParams | None = None, seed=None, **kw):
    """Identify the controlled model of a load class at nominal parameters."""
    key = load_class.lower().replace("-", "")
    if key == "pool":
        return pool_controlled_model(**kw)
    p = nominal_tcl_params(key) if params is None else params
    return tcl_controlled_model(identify_tcl_chain(p, seed=seed, **kw), name=key)
