"""Command-line scenario runner.

Subcommands::

    vbattery build-model --class ac --seed 0 --out bundles/ac
    vbattery design-filters --bundle bundles/ac --band 1 5
    vbattery run --preset closed_loop --seed 0 --out runs/cl

Exit codes: 0 success, 2 configuration error, 3 identification failure,
4 filter design failure, 5 simulation divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import grid, scenarios
from .bundle import load_filter, load_model_bundle, save_filter, save_model_bundle
from .filters import FitError, design_local_filter
from .loads import (IdentificationError, TclParams, identify_tcl_chain, nominal_tcl_params,
                    pool_controlled_model, tcl_controlled_model)
from .lti import cyc_per_hr
from .markov import DivergenceError
from .timeseries import TimeSeries, read_csv, write_csv

logger = logging.getLogger("vbattery")

EXIT_OK, EXIT_CONFIG, EXIT_IDENT, EXIT_DESIGN, EXIT_DIVERGE = 0, 2, 3, 4, 5
PRESETS = ("open_loop", "closed_loop", "tv_gain", "alpha_sweep", "ramp")

DEFAULTS = {
    "seed": 0,
    "dt": 1.0,
    "zoh": 20.0,
    "horizon_s": 86400.0,
    "subgroups": 3,
    "populations": {},
    "shares": {},
    "n_agents": 2000,
    "output_every_s": 20.0,
    "divergence_hz": 1.0,
    "disturbance": {"amplitude_mw": 1000.0, "seed": None, "csv": None},
    "alphas": [0.0, 0.25, 0.5, 0.75, 1.0],
    "open_loop": {"classes": ["ac", "fwh", "swh", "pool"], "fraction": 0.5, "ac_fraction": 0.2,
                  "n_loads": 2000, "horizon_s": None},
    "ramp": {"csv": None, "lp_cutoff_cph": 1.0 / 8.0, "lp_share": 0.5,
             "populations": {"ac": 2e6, "fwh": 1e7, "swh": 1e7, "pool": 1.2e6}},
}


class ConfigError(ValueError):
    pass


def _class_key(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in scenarios.CLASS_BANDS_CPH:
        raise ConfigError(f"unknown load class {name!r}")
    return key


def _out_dir(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get("VBATTERY_OUT", "vbattery_out")) / default_name


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def load_config(path: str | None, preset: str | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        cfg = _merge(cfg, user)
    if preset:
        cfg["preset"] = preset
    if cfg.get("preset") not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.get('preset')!r}; choose from {', '.join(PRESETS)}")
    if not cfg["horizon_s"] > 0 or not cfg["dt"] > 0:
        raise ConfigError("horizon_s and dt must be positive")
    return cfg


def _jsonable(obj):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _decimate(ts: TimeSeries, every: float) -> TimeSeries:
    k = max(1, int(round(every / ts.dt)))
    return TimeSeries(ts.t0, ts.dt * k, ts.values[::k], ts.units)


# -- build-model / design-filters ---------------------------------------------

def cmd_build_model(args) -> int:
    key = _class_key(args.load_class)
    out = _out_dir(args.out, f"model_{key}")
    if key == "pool":
        model = pool_controlled_model()
        save_model_bundle(out, model, extra={"seed": args.seed})
    else:
        if args.params:
            try:
                p = TclParams.from_json(Path(args.params).read_text())
            except (OSError, TypeError, ValueError) as exc:
                raise ConfigError(f"cannot read TCL parameters from {args.params}: {exc}") from exc
        else:
            p = nominal_tcl_params(key)
        factors = identify_tcl_chain(p, d_half=args.d_half, seed=args.seed)
        model = tcl_controlled_model(factors, name=key)
        save_model_bundle(out, model, factors, extra={"seed": args.seed})
    print(json.dumps({"bundle": str(out), "d": model.d, "mean_power_kw": model.mean_power}, sort_keys=True))
    return EXIT_OK


def cmd_design_filters(args) -> int:
    bdir = Path(args.bundle)
    if not (bdir / "model.json").exists():
        raise ConfigError(f"no model bundle at {bdir}")
    model = load_model_bundle(bdir)
    if args.band:
        lo, hi = args.band
    else:
        lo, hi = scenarios.CLASS_BANDS_CPH[_class_key(model.name.split("_")[0])]
    band = (cyc_per_hr(lo), cyc_per_hr(hi))
    design = design_local_filter(model.linearization.freqresp, band)
    out = Path(args.out) if args.out else bdir
    report = dict(design.report, band_cyc_per_hr=[lo, hi], threshold_db=args.threshold_db)
    save_filter(out, design.local, report)
    print(json.dumps(_jsonable(report), sort_keys=True))
    if report["total_vs_bandpass_mag_dev_db"] > args.threshold_db:
        logger.error("flatness %.2f dB exceeds threshold %.2f dB",
                     report["total_vs_bandpass_mag_dev_db"], args.threshold_db)
        return EXIT_DESIGN
    return EXIT_OK


# -- run presets -----------------------------------------------------------------

def _mix(cfg: dict, populations=None) -> scenarios.ResourceMix:
    pops = dict(cfg["populations"])
    pops.update(populations or {})
    mix = scenarios.build_mix(seed=cfg["seed"], subgroups=int(cfg["subgroups"]), populations=pops,
                              shares=cfg["shares"])
    for name, bdir in (cfg.get("bundles") or {}).items():
        bpath = Path(bdir)
        if not (bpath / "model.json").exists():
            raise ConfigError(f"bundle {bpath} for class {name!r} does not exist")
        model = load_model_bundle(bpath)
        key = _class_key(name)
        mix.designs = [d for d in mix.designs if d.name.split("_")[0] != key]
        d = scenarios.design_class(key, model, pops.get(key, scenarios.DEFAULT_POPULATION[key]))
        if (bpath / "filter.json").exists():
            d.design = type(d.design)(d.design.fit, load_filter(bpath), d.design.report)
        mix.designs.append(d)
    return mix


def _disturbance(cfg: dict, horizon: float) -> TimeSeries:
    dcfg = cfg["disturbance"]
    if dcfg.get("csv"):
        path = Path(dcfg["csv"])
        if not path.exists():
            raise ConfigError(f"disturbance file {path} does not exist")
        ts = read_csv(path)
        return _resample(ts, cfg["dt"], horizon)
    seed = cfg["seed"] if dcfg.get("seed") is None else dcfg["seed"]
    return grid.synthetic_disturbance(horizon, cfg["dt"], dcfg["amplitude_mw"], seed=seed)


def _resample(ts: TimeSeries, dt: float, horizon: float) -> TimeSeries:
    n = int(round(horizon / dt)) + 1
    t = ts.t0 + dt * np.arange(n)
    if t[-1] > ts.t[-1] + 1e-9:
        raise ConfigError(f"input series covers {ts.duration:.0f} s, horizon needs {horizon:.0f} s")
    return TimeSeries(ts.t0, dt, np.interp(t, ts.t, ts.values), ts.units)


def _write_sim(out: Path, res: grid.SimResult, every: float) -> None:
    write_csv(_decimate(res.freq_dev, every), out / "freq_dev.csv")
    write_csv(_decimate(res.u, every), out / "u.csv")
    write_csv(_decimate(res.u_ideal, every), out / "u_ideal.csv")
    write_csv(_decimate(res.disturbance, every), out / "disturbance.csv")
    write_csv(_decimate(res.actuation, every), out / "actuation.csv")
    for name, ts in res.per_class_power_dev.items():
        write_csv(_decimate(ts, every), out / f"power_{name}.csv")
    # gnuplot-friendly block: one column per signal
    cols = [("t_s", _decimate(res.freq_dev, every).t), ("df_hz", _decimate(res.freq_dev, every).values),
            ("u_mw", _decimate(res.u, every).values), ("d_mw", _decimate(res.disturbance, every).values),
            ("actuation_mw", _decimate(res.actuation, every).values)]
    cols += [(f"{k}_mw", _decimate(v, every).values) for k, v in res.per_class_power_dev.items()]
    np.savetxt(out / "timeseries.dat", np.column_stack([c for _, c in cols]), header=" ".join(n for n, _ in cols),
               fmt="%.10g")


def _grid_config(cfg: dict) -> grid.GridConfig:
    try:
        return grid.GridConfig(dt=cfg["dt"], horizon=cfg["horizon_s"], zoh=cfg["zoh"],
                               divergence_hz=cfg["divergence_hz"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _closed_loop(cfg: dict, classes, D: TimeSeries, mode: str) -> grid.SimResult:
    gcfg = _grid_config(cfg)
    return grid.run_closed_loop(gcfg, classes, D, mode=mode, seed=cfg["seed"], n_agents=int(cfg["n_agents"]))


def _open_loop_plant_peak(cfg: dict, D: TimeSeries) -> float:
    gcfg = _grid_config(cfg)
    return float(np.max(np.abs(grid.run_open_loop_plant(gcfg, D).values)))


def preset_closed_loop(cfg, out: Path, mode: str, tv_gain: bool = False) -> dict:
    mix = _mix(cfg)
    classes = mix.classes()
    if tv_gain:
        classes = [grid.apply_gain_schedule(c, grid.daily_gain) if c.name.startswith("ac") else c
                   for c in classes]
    D = _disturbance(cfg, cfg["horizon_s"])
    res = _closed_loop(cfg, classes, D, mode)
    _write_sim(out, res, cfg["output_every_s"])
    summary = res.summary()
    ol = _open_loop_plant_peak(cfg, D)
    summary["open_loop_max_abs_freq_dev_hz"] = ol
    summary["rejection_ratio"] = ol / summary["max_abs_freq_dev_hz"] if summary["max_abs_freq_dev_hz"] > 0 else None
    summary["freq_range_hz"] = [float(60 + res.freq_dev.values.min()), float(60 + res.freq_dev.values.max())]
    return summary


def preset_alpha_sweep(cfg, out: Path, mode: str) -> dict:
    classes = _mix(cfg).classes()
    D = _disturbance(cfg, cfg["horizon_s"])
    rows = []
    for a in cfg["alphas"]:
        res = _closed_loop(cfg, grid.alpha_blend(classes, float(a)), D, mode)
        s = res.summary()
        rows.append({"alpha": float(a), "j2": s["mileage_j2"], "max_abs_freq_dev_hz": s["max_abs_freq_dev_hz"]})
        write_csv(_decimate(res.u_ideal, cfg["output_every_s"]), out / f"u_ideal_alpha_{a:g}.csv")
    np.savetxt(out / "alpha_sweep.dat", np.array([[r["alpha"], r["j2"]] for r in rows]), header="alpha j2", fmt="%.10g")
    return {"sweep": rows}


def preset_open_loop(cfg, out: Path, mode: str) -> dict:
    ocfg = cfg["open_loop"]
    mix = scenarios.build_mix(seed=cfg["seed"], subgroups=1,
                              classes=tuple(_class_key(c) for c in ocfg["classes"]))
    results = {}
    for d in mix.designs:
        n = float(ocfg["n_loads"])
        cls = grid.ResourceClass(d.name, d.model, d.design.local, n, 1.0)
        frac = ocfg["ac_fraction"] if d.name == "ac" and mode == "agents" else ocfg["fraction"]
        horizon = ocfg["horizon_s"] or (3 * 86400.0 if d.name in ("swh", "pool") else 86400.0)
        ref = grid.in_band_reference(d.design.local.band, horizon, cfg["zoh"], frac * cls.capacity_mw,
                                     seed=cfg["seed"])
        r = grid.run_open_loop(cls, ref, mode=mode, seed=cfg["seed"], zoh=cfg["zoh"])
        write_csv(r.y_dev, out / f"{d.name}_y_dev.csv")
        write_csv(r.reference_filtered, out / f"{d.name}_reference.csv")
        entry = {"fraction_of_capacity": frac, "normalized_rms": r.rms_error,
                 "capacity_mw": cls.capacity_mw, "capacity_exceeded": r.capacity_exceeded}
        if mode == "agents":
            entry["cycling_ratio"] = r.cycling_ratio
        results[d.name] = entry
    return {"classes": results}


def preset_ramp(cfg, out: Path, mode: str) -> dict:
    rcfg = cfg["ramp"]
    if rcfg.get("csv"):
        path = Path(rcfg["csv"])
        if not path.exists():
            raise ConfigError(f"net-load file {path} does not exist")
        net = read_csv(path)
    else:
        net = grid.duck_curve(horizon=max(cfg["horizon_s"], 86400.0))
    parts = grid.split_components(net, cyc_per_hr(rcfg["lp_cutoff_cph"]), scenarios.class_band("swh"))
    for k, ts in parts.items():
        write_csv(ts, out / f"netload_{k}.csv")
    D = _resample(parts["residual"], cfg["dt"], cfg["horizon_s"])
    cfg2 = dict(cfg, shares=dict(cfg["shares"], lp=rcfg["lp_share"]))
    classes = _mix(cfg2, rcfg["populations"]).classes()
    # the residual is a load to be served, so it enters the plant as -L
    res = _closed_loop(cfg2, classes, D.scaled(-1.0), mode)
    _write_sim(out, res, cfg["output_every_s"])
    s = res.summary()
    s["residual_peak_mw"] = float(np.max(np.abs(D.values)))
    s["tracking_normalized_rms"] = grid.normalized_rms(res.actuation.values - D.values[: len(res.actuation)],
                                                       D.values[: len(res.actuation)])
    return s


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg["seed"] = args.seed
    mode = args.mode or cfg.get("mode", "mean_field")
    if mode not in ("mean_field", "agents"):
        raise ConfigError("mode must be mean_field or agents")
    out = _out_dir(args.out, cfg["preset"])
    out.mkdir(parents=True, exist_ok=True)
    preset = cfg["preset"]
    if preset == "closed_loop":
        summary = preset_closed_loop(cfg, out, mode)
    elif preset == "tv_gain":
        summary = preset_closed_loop(cfg, out, mode, tv_gain=True)
    elif preset == "alpha_sweep":
        summary = preset_alpha_sweep(cfg, out, mode)
    elif preset == "open_loop":
        summary = preset_open_loop(cfg, out, mode)
    else:
        summary = preset_ramp(cfg, out, mode)
    summary = {"preset": preset, "mode": mode, "seed": cfg["seed"], **summary}
    _dump(out / "summary.json", summary)
    _dump(out / "config_resolved.json", cfg)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbattery", description="Virtual battery from flexible loads.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-model", help="identify a load-class Markov model and write a bundle")
    b.add_argument("--class", dest="load_class", required=True, help="ac, fwh, swh or pool")
    b.add_argument("--params", help="JSON file with TCL parameters")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--d-half", type=int, default=20, help="temperature bins")
    b.add_argument("--out")
    b.set_defaults(func=cmd_build_model)

    f = sub.add_parser("design-filters", help="design the prefilter for a model bundle")
    f.add_argument("--bundle", required=True)
    f.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), help="band in cycles per hour")
    f.add_argument("--threshold-db", type=float, default=3.0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_design_filters)

    r = sub.add_parser("run", help="run an experiment preset")
    r.add_argument("--preset", choices=PRESETS)
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--mode", choices=("mean_field", "agents"))
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as exc:
        print(f"identification failed: {exc}", file=sys.stderr)
        return EXIT_IDENT
    except FitError as exc:
        print(f"filter design failed: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except DivergenceError as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGE


if __name__ == "__main__":
    sys.exit(main())
