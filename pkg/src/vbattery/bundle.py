"""On-disk model and filter bundles.

A model bundle is a directory holding ``model.json`` (metadata, utility,
rates, invariant pmf) and labeled CSV matrices: ``S0.csv``, ``A0.csv`` and,
for TCLs, ``Q0.csv`` and ``R0.csv``; the linearization is stored as
``lin_A.csv``, ``lin_B.csv``, ``lin_C.csv``. Floats are written with
``repr`` so a fixed seed gives byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .filters import LocalFilter
from .markov import ControlledModel

FORMAT_VERSION = 1


def write_matrix_csv(path, M, row_labels, col_labels, corner: str = "state") -> Path:
    path = Path(path)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_labels])
        for lab, row in zip(row_labels, M):
            w.writerow([lab, *(repr(float(v)) for v in row)])
    return path


def read_matrix_csv(path):
    """Return ``(matrix, row_labels, col_labels)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    M = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return M, labels, cols


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_model_bundle(out_dir, model: ControlledModel, factors=None, extra: dict | None = None) -> Path:
    """Write ``model`` (and optional identification factors) to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = model.labels or [str(i) for i in range(model.d)]
    write_matrix_csv(out / "S0.csv", model.S0, labels, labels)
    write_matrix_csv(out / "A0.csv", model.generator, labels, labels)
    lin = model.linearization
    write_matrix_csv(out / "lin_A.csv", lin.A, labels, labels)
    write_matrix_csv(out / "lin_B.csv", lin.B[:, None], labels, ["B"])
    write_matrix_csv(out / "lin_C.csv", lin.C[None, :], ["C"], labels, corner="output")
    meta = {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "d": model.d,
        "labels": labels,
        "util_kw": [float(v) for v in model.util],
        "rates_per_s": [float(v) for v in model.rates],
        "pi0": [float(v) for v in model.pi0],
        "mode_of": [int(v) for v in model.mode_of],
        "excursion": [int(v) for v in model.excursion],
        "mean_power_kw": model.mean_power,
        "capacity_kw": model.capacity,
        "dc_gain_kw": lin.dcgain(),
    }
    if factors is not None:
        d_half = factors.grid.d_half
        bins = [str(b) for b in range(d_half)]
        write_matrix_csv(out / "Q0.csv", factors.Q0, labels, bins)
        write_matrix_csv(out / "R0.csv", factors.R0, labels, ["off", "on"])
        meta["tcl_params"] = json.loads(factors.params.to_json())
        meta["grid"] = {"theta_min": factors.grid.theta_min, "theta_max": factors.grid.theta_max,
                        "d_half": d_half}
        meta["duty_physical"] = factors.duty_physical
        meta["period_physical_s"] = factors.period_physical
        meta["min_row_visits"] = int(factors.counts.sum(axis=1).min())
    if extra:
        meta.update(extra)
    _dump_json(out / "model.json", meta)
    return out


def load_model_bundle(path) -> ControlledModel:
    p = Path(path)
    meta = json.loads((p / "model.json").read_text())
    S0, labels, _ = read_matrix_csv(p / "S0.csv")
    return ControlledModel(S0, meta["util_kw"], meta["rates_per_s"], name=meta["name"], labels=labels,
                           excursion=np.array(meta["excursion"], dtype=np.int8),
                           mode_of=np.array(meta["mode_of"], dtype=np.int8))


def save_filter(path, local: LocalFilter, report: dict) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    _dump_json(p / "filter.json", local.to_dict())
    _dump_json(p / "flatness.json", report)
    return p


def load_filter(path) -> LocalFilter:
    return LocalFilter.from_dict(json.loads((Path(path) / "filter.json").read_text()))
