"""Stochastic simulation of individual loads under randomized local control.

Each agent carries an exponential clock with the rate of its current state.
When the clock fires the agent draws its next state from the tilted row
``S_zeta(state, .)``, where ``zeta`` is the value held at the start of the
current delivery window. Random numbers come from a counter-based generator
keyed by ``(seed, agent)``, so a fleet is reproducible regardless of how it is
stepped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .markov import ControlledModel
from .timeseries import TimeSeries

#: Windows per kernel call when turning a zeta signal into tilted rows.
CHUNK = 512


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, np.uint64)[0])
    if seed is None:
        return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    return int(seed) & 0xFFFFFFFFFFFFFFFF


@dataclass
class Fleet:
    n: int
    model: ControlledModel
    keys: np.ndarray
    state: np.ndarray
    next_jump: np.ndarray
    counter: np.ndarray
    switches: np.ndarray
    excursions: np.ndarray
    time: float = 0.0

    @property
    def power(self) -> float:
        return float(self.model.util[self.state].sum())


@dataclass
class FleetHistory:
    """Outcome of a run: total power at window starts and per-agent counters."""

    power: TimeSeries
    switches: np.ndarray
    temperature_excursions: np.ndarray

    @property
    def horizon(self) -> float:
        return len(self.power) * self.power.dt


def init_fleet(n: int, model: ControlledModel, seed=None, t0: float = 0.0) -> Fleet:
    """``n`` agents drawn independently from the invariant pmf."""
    if n < 1:
        raise ValueError("fleet needs at least one agent")
    keys = kernels.agent_keys(_seed_int(seed), n)
    zeros = np.zeros(n, dtype=np.uint64)
    u0 = kernels.counter_uniform(keys, zeros)
    u1 = kernels.counter_uniform(keys, zeros + 1)
    cdf = np.cumsum(model.pi0)
    state = np.minimum(np.searchsorted(cdf, u0, side="right"), model.d - 1).astype(np.int64)
    next_jump = t0 - np.log1p(-u1) / model.rates[state]
    return Fleet(n, model, keys, state, next_jump, np.full(n, 2, dtype=np.uint64),
                 np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), float(t0))


def cumulative_rows(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise CDFs and the index of the last positive entry in each row."""
    cum = np.cumsum(S, axis=-1)
    d = S.shape[-1]
    last = d - 1 - np.argmax((S > 0)[..., ::-1], axis=-1)
    return cum, last.astype(np.int64)


def _run_windows(fleet: Fleet, zetas: np.ndarray, window: float) -> np.ndarray:
    model = fleet.model
    zetas = model.clip_zeta(np.asarray(zetas, dtype=float))
    out = np.empty(zetas.size)
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for a in range(0, zetas.size, CHUNK):
        zs = zetas[a:a + CHUNK]
        cum = np.empty((zs.size, model.d, model.d))
        last = np.empty((zs.size, model.d), dtype=np.int64)
        for i, z in enumerate(zs):
            key = float(z)
            if key not in cache:
                if len(cache) > 4 * CHUNK:
                    cache.clear()
                cache[key] = cumulative_rows(model.tilted(key))
            cum[i], last[i] = cache[key]
        out[a:a + zs.size] = kernels.agents_run(
            cum, last, fleet.time, window, model.rates, model.util, model.mode_of, model.excursion,
            fleet.keys, fleet.state, fleet.next_jump, fleet.counter, fleet.switches, fleet.excursions,
        )
        fleet.time += zs.size * window
    return out


def step_fleet(fleet: Fleet, zeta: float, until: float) -> Fleet:
    """Advance ``fleet`` in place to time ``until`` with ``zeta`` held constant."""
    if until < fleet.time:
        raise ValueError("cannot step a fleet backwards in time")
    if until > fleet.time:
        _run_windows(fleet, np.array([zeta]), until - fleet.time)
    return fleet


def run_fleet(fleet: Fleet, zeta: TimeSeries, window: float | None = None) -> FleetHistory:
    """Drive ``fleet`` with a piecewise constant ``zeta``.

    Sample ``k`` of ``zeta`` is held over ``[t_k, t_k + dt)``; ``window``
    must equal ``zeta.dt`` (it is accepted for readability at call sites).
    The recorded power is the fleet total (kW) at every window start.
    """
    if window is not None and abs(window - zeta.dt) > 1e-12:
        raise ValueError("window must equal the sampling interval of zeta")
    sw0 = fleet.switches.copy()
    ex0 = fleet.excursions.copy()
    t0 = fleet.time
    power = _run_windows(fleet, zeta.values, zeta.dt)
    return FleetHistory(TimeSeries(t0, zeta.dt, power, "kW"), fleet.switches - sw0, fleet.excursions - ex0)


def empirical_distribution(fleet: Fleet) -> np.ndarray:
    """Fraction of agents in each state."""
    return np.bincount(fleet.state, minlength=fleet.model.d) / fleet.n


def qos_metrics(history: FleetHistory, horizon: float | None = None) -> dict:
    """Mean on/off transitions per agent per day and total excursion count."""
    T = history.horizon if horizon is None else float(horizon)
    sw = history.switches
    return {
        "switches_per_day_mean": float(sw.mean() * 86400.0 / T) if T > 0 else 0.0,
        "excursion_count": int(history.temperature_excursions.sum()),
    }


def cycling_ratio(history: FleetHistory, baseline: FleetHistory) -> float:
    """Ratio of total switch counts between a controlled and a nominal run."""
    base = baseline.switches.sum()
    return float(history.switches.sum() / base) if base else float("nan")
