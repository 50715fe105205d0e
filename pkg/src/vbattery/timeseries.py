"""Uniformly sampled signals and their CSV representation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    """A signal sampled on the grid ``t0 + k*dt``.

    Parameters
    ----------
    t0 : float
        Time of the first sample (s).
    dt : float
        Sample spacing (s), strictly positive.
    values : ndarray
        Sample values, one per grid point.
    units : str
        Free-form unit label (``"MW"``, ``"Hz"``, ``"1/kW"`` ...).
    """

    t0: float
    dt: float
    values: np.ndarray = field(repr=False)
    units: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("TimeSeries needs a 1-d array with at least one sample")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    @property
    def duration(self) -> float:
        return self.dt * (self.values.size - 1)

    def with_values(self, values, units: str | None = None) -> "TimeSeries":
        return TimeSeries(self.t0, self.dt, values, self.units if units is None else units)

    def scaled(self, factor: float, units: str | None = None) -> "TimeSeries":
        return self.with_values(self.values * factor, units)

    def hold(self, period: float) -> "TimeSeries":
        """Zero-order hold the signal on a coarser grid of spacing ``period``.

        Sample ``k`` takes the value at the most recent multiple of
        ``period`` (measured from ``t0``).
        """
        stride = int(round(period / self.dt))
        if stride < 1 or abs(stride * self.dt - period) > 1e-9 * period:
            raise ValueError("hold period must be an integer multiple of dt")
        idx = (np.arange(self.values.size) // stride) * stride
        return self.with_values(self.values[idx])

    @classmethod
    def zeros(cls, n: int, dt: float, t0: float = 0.0, units: str = "") -> "TimeSeries":
        return cls(t0, dt, np.zeros(n), units)

    @classmethod
    def from_function(cls, func, horizon: float, dt: float, t0: float = 0.0, units: str = ""):
        n = int(round(horizon / dt)) + 1
        t = t0 + dt * np.arange(n)
        return cls(t0, dt, np.asarray(func(t), dtype=float) * np.ones(n), units)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_csv(ts: TimeSeries, path) -> Path:
    """Write ``t,value`` rows plus a ``<name>.meta.json`` sidecar.

    Floats are written with ``repr`` so that reading back reproduces the
    same text exactly.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(ts.t, ts.values):
            w.writerow([repr(float(t)), repr(float(v))])
    meta = {"t0": ts.t0, "dt": ts.dt, "units": ts.units, "n": len(ts)}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path, dt: float | None = None, units: str | None = None) -> TimeSeries:
    """Read a ``t,value`` CSV.

    The sidecar, when present, supplies ``dt`` and ``units``. Without it the
    spacing is inferred from the time column, which must then be uniform.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["t", "value"]:
        raise ValueError(f"{path}: expected header 't,value', got {rows[0]}")
    t = np.array([float(r[0]) for r in rows[1:]])
    v = np.array([float(r[1]) for r in rows[1:]])
    meta = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    if dt is None:
        dt = meta.get("dt")
    if dt is None:
        steps = np.diff(t)
        if steps.size == 0:
            raise ValueError(f"{path}: cannot infer dt from a single sample")
        dt = float(np.median(steps))
        if np.max(np.abs(steps - dt)) > 1e-6 * dt:
            raise ValueError(f"{path}: time column is not uniformly spaced")
    t0 = float(meta.get("t0", t[0]))
    return TimeSeries(t0, float(dt), v, units if units is not None else meta.get("units", ""))
