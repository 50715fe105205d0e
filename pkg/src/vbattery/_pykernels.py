"""Pure numpy implementations of the hot loops.

These are the reference versions of the routines in ``_ckernels.pyx``; both
modules expose the same functions with the same array contracts, and the
compiled one is preferred at import time (see :mod:`vbattery.kernels`).
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def agent_keys(seed, n):
    """Per-agent stream keys for the counter-based generator."""
    with np.errstate(over="ignore"):
        base = _mix(np.array([seed], dtype=np.uint64) + GOLDEN)
        idx = np.arange(1, n + 1, dtype=np.uint64)
        return _mix(base + idx * GOLDEN)


def counter_uniform(keys, counters):
    """Uniform draw in [0, 1) for stream ``keys`` at position ``counters``."""
    with np.errstate(over="ignore"):
        c = np.asarray(counters, dtype=np.uint64) + np.uint64(1)
        h = _mix(np.asarray(keys, dtype=np.uint64) + c * GOLDEN)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def lti_run(Ad, Bd, C, D, u, x0):
    n_steps = u.shape[0]
    x = np.array(x0, dtype=float)
    y = np.empty((n_steps, C.shape[0]))
    for k in range(n_steps):
        uk = u[k]
        y[k] = C @ x + D @ uk
        x = Ad @ x + Bd @ uk
    return y


def tcl_euler(theta0, mode0, noise, rc_h, theta_a, theta_g, theta_min, theta_max, cooling, dt_h):
    """Euler steps of the TCL temperature ODE with a hysteretic thermostat.

    ``noise`` holds the already-scaled disturbance increments, one per step.
    Returns temperature and mode arrays of length ``len(noise) + 1``.
    """
    n = noise.shape[0]
    theta = np.empty(n + 1)
    mode = np.empty(n + 1, dtype=np.int8)
    th = float(theta0)
    m = int(mode0)
    theta[0] = th
    mode[0] = m
    k_rc = dt_h / rc_h
    for k in range(n):
        th = th - k_rc * (th - theta_a + theta_g * m) + noise[k]
        if cooling:
            if m == 0 and th >= theta_max:
                m = 1
            elif m == 1 and th <= theta_min:
                m = 0
        else:
            if m == 0 and th <= theta_min:
                m = 1
            elif m == 1 and th >= theta_max:
                m = 0
        theta[k + 1] = th
        mode[k + 1] = m
    return theta, mode


def sample_pair_counts(bins, mode, start, dt, rate_off, rate_on, expo, d_half):
    """Count (state at T_k, bin at T_{k+1}) pairs along one trajectory.

    Jump times follow a Poisson clock whose rate is set by the mode at the
    previous jump. ``expo`` supplies unit exponential variates; sampling
    stops when the trajectory or the variates run out.

    Returns ``(counts, n_used)`` with ``counts`` of shape ``(2*d_half, d_half)``
    indexed by ``mode*d_half + bin``.
    """
    counts = np.zeros((2 * d_half, d_half), dtype=np.int64)
    n_last = bins.shape[0] - 1
    t = start * dt
    k = start
    used = 0
    t_end = n_last * dt
    while used < expo.shape[0]:
        m = mode[k]
        rate = rate_on if m else rate_off
        t = t + expo[used] / rate
        used += 1
        k_next = int(t / dt)
        if k_next > n_last or t > t_end:
            break
        counts[m * d_half + bins[k], bins[k_next]] += 1
        k = k_next
    return counts, used


def mf_integrate(S0, util, rates, zeta, mu0, dt, record_every):
    """RK4 integration of the controlled mean-field ODE.

    ``zeta[k]`` is held over ``[t_k, t_k + dt)``. The tilted generator is
    ``diag(rates) (S_zeta - I)``. Returns
    ``(mu_rec, y, min_mu, max_mass_err, mu_final)`` where
    ``y[k] = mu(t_k) . util`` and ``mu_rec`` holds ``mu(t_k)`` for every ``k``
    divisible by ``record_every``.
    """
    n = zeta.shape[0]
    d = S0.shape[0]
    mu = np.array(mu0, dtype=float)
    y = np.empty(n)
    n_rec = (n + record_every - 1) // record_every
    mu_rec = np.empty((n_rec, d))
    min_mu = np.inf
    max_err = 0.0
    last_z = np.nan
    A = None
    eye = np.eye(d)
    umax = util.max()
    umin = util.min()
    half = 0.5 * dt
    for k in range(n):
        if k % record_every == 0:
            mu_rec[k // record_every] = mu
        y[k] = mu @ util
        z = zeta[k]
        if A is None or z != last_z:
            shift = z * umax if z >= 0 else z * umin
            w = np.exp(z * util - shift)
            Sz = S0 * w
            Sz /= Sz.sum(axis=1, keepdims=True)
            A = rates[:, None] * (Sz - eye)
            last_z = z
        k1 = mu @ A
        k2 = (mu + half * k1) @ A
        k3 = (mu + half * k2) @ A
        k4 = (mu + dt * k3) @ A
        mu = mu + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        mn = mu.min()
        if mn < min_mu:
            min_mu = mn
        err = abs(mu.sum() - 1.0)
        if err > max_err:
            max_err = err
    return mu_rec, y, float(min_mu), float(max_err), mu


def agents_run(cum, last_idx, t_start, window, rates, util, mode_of, excursion, keys,
               state, next_jump, counter, switches, excursions):
    """Advance a fleet through consecutive delivery windows.

    Window ``w`` covers ``[t_start + w*window, t_start + (w+1)*window)`` and
    uses the cumulative tilted transition rows ``cum[w]``. Agent arrays are
    updated in place. Returns total power (sum of ``util``) at the start of
    every window.
    """
    n_win = cum.shape[0]
    power = np.empty(n_win)
    for w in range(n_win):
        power[w] = util[state].sum()
        t_end = t_start + (w + 1) * window
        cw = cum[w]
        lw = last_idx[w]
        active = np.flatnonzero(next_jump < t_end)
        while active.size:
            u1 = counter_uniform(keys[active], counter[active])
            u2 = counter_uniform(keys[active], counter[active] + 1)
            counter[active] += 2
            old = state[active]
            rows = cw[old]
            new = (rows <= u1[:, None]).sum(axis=1)
            new = np.minimum(new, lw[old])
            state[active] = new
            switches[active] += mode_of[old] != mode_of[new]
            excursions[active] += excursion[new]
            next_jump[active] += -np.log1p(-u2) / rates[new]
            active = active[next_jump[active] < t_end]
    return power
