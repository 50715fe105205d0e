"""Compare the compiled and pure-numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""

import argparse
import time

import numpy as np

from vbattery import kernels
from vbattery.agents import cumulative_rows
from vbattery.loads import identify_tcl_chain, nominal_tcl_params, tcl_controlled_model


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(model, scale):
    rng = np.random.default_rng(0)
    d = model.d
    n_steps = int(20000 * scale)
    noise = 0.01 * rng.normal(size=n_steps * 10)
    bins = rng.integers(0, d // 2, size=n_steps * 10).astype(np.int64)
    mode = (np.arange(bins.size) // 300 % 2).astype(np.int8)
    expo = rng.standard_exponential(n_steps)
    zeta = np.repeat(rng.normal(scale=0.3, size=n_steps // 20), 20)
    n_ag, n_win = int(2000 * scale), 180
    cum = np.empty((n_win, d, d))
    last = np.empty((n_win, d), dtype=np.int64)
    for i, z in enumerate(rng.normal(scale=0.3, size=n_win)):
        cum[i], last[i] = cumulative_rows(model.tilted(z))
    Ad = 0.9 * np.eye(4)
    Bd, C, Dm = rng.normal(size=(4, 1)), rng.normal(size=(1, 4)), np.zeros((1, 1))
    u = rng.normal(size=(n_steps * 5, 1))

    def agents(mod):
        keys = mod.agent_keys(1, n_ag)
        state = np.zeros(n_ag, dtype=np.int64)
        mod.agents_run(cum, last, 0.0, 20.0, model.rates, model.util, model.mode_of, model.excursion, keys,
                       state, np.zeros(n_ag), np.full(n_ag, 2, dtype=np.uint64), np.zeros(n_ag, dtype=np.int64),
                       np.zeros(n_ag, dtype=np.int64))

    return {
        f"tcl_euler ({noise.size} steps)":
            lambda m: m.tcl_euler(20.0, 1, noise, 2.0, 32.0, 14.0, 19.75, 20.25, True, 2.0 / 3600),
        f"sample_pair_counts ({expo.size} draws)":
            lambda m: m.sample_pair_counts(bins, mode, 0, 2.0, 0.02, 0.03, expo, d // 2),
        f"mf_integrate ({zeta.size} RK4 steps, d={d})":
            lambda m: m.mf_integrate(model.S0, model.util, model.rates, zeta, model.pi0, 1.0, 60),
        f"lti_run ({u.shape[0]} steps)": lambda m: m.lti_run(Ad, Bd, C, Dm, u, np.zeros(4)),
        f"agents_run ({n_ag} agents x {n_win} windows)": agents,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    py = kernels.get_backend("python")
    model = tcl_controlled_model(identify_tcl_chain(nominal_tcl_params("ac"), seed=0), name="ac")
    print(f"{'kernel':48s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(model, 0.25 if args.quick else 1.0).items():
        t_py = best_of(lambda: fn(py), args.repeat)
        t_cy = best_of(lambda: fn(cy), args.repeat)
        print(f"{name:48s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
