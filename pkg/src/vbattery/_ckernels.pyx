# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels``.

Same functions, same array contracts; see the pure-Python module for the
meaning of each argument.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs
from libc.stdint cimport uint64_t, int64_t, int8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t h = _mix(key + (counter + 1) * GOLDEN)
    return <double>(h >> 11) * INV53


def agent_keys(seed, Py_ssize_t n):
    cdef uint64_t base = _mix(<uint64_t>seed + GOLDEN)
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = _mix(base + <uint64_t>(i + 1) * GOLDEN)
    return out


def counter_uniform(keys, counters):
    k = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    c = np.ascontiguousarray(counters, dtype=np.uint64).ravel()
    k, c = np.broadcast_arrays(k, c)
    k = np.ascontiguousarray(k)
    c = np.ascontiguousarray(c)
    out = np.empty(k.shape[0])
    cdef uint64_t[::1] kv = k
    cdef uint64_t[::1] cv = c
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(kv.shape[0]):
        o[i] = _uniform(kv[i], cv[i])
    return out


def lti_run(Ad, Bd, C, D, u, x0):
    cdef const double[:, ::1] a = np.ascontiguousarray(Ad, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(Bd, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, ::1] dd = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n_steps = uu.shape[0], n = a.shape[0], m = uu.shape[1], p = c.shape[0]
    x_arr = np.array(x0, dtype=np.float64).reshape(n)
    xn_arr = np.empty(n)
    cdef double[::1] x = x_arr
    cdef double[::1] xn = xn_arr
    y_arr = np.empty((n_steps, p))
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t k, i, j
    cdef double acc
    for k in range(n_steps):
        for i in range(p):
            acc = 0.0
            for j in range(n):
                acc = acc + c[i, j] * x[j]
            for j in range(m):
                acc = acc + dd[i, j] * uu[k, j]
            y[k, i] = acc
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc = acc + a[i, j] * x[j]
            for j in range(m):
                acc = acc + b[i, j] * uu[k, j]
            xn[i] = acc
        for i in range(n):
            x[i] = xn[i]
    return y_arr


def tcl_euler(double theta0, int mode0, noise, double rc_h, double theta_a, double theta_g,
              double theta_min, double theta_max, bint cooling, double dt_h):
    cdef const double[::1] nz = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t n = nz.shape[0], k
    theta_arr = np.empty(n + 1)
    mode_arr = np.empty(n + 1, dtype=np.int8)
    cdef double[::1] theta = theta_arr
    cdef int8_t[::1] mode = mode_arr
    cdef double th = theta0
    cdef int m = mode0
    cdef double k_rc = dt_h / rc_h
    theta[0] = th
    mode[0] = m
    with nogil:
        for k in range(n):
            th = th - k_rc * (th - theta_a + theta_g * m) + nz[k]
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
    return theta_arr, mode_arr


def sample_pair_counts(bins, mode, Py_ssize_t start, double dt, double rate_off, double rate_on,
                       expo, Py_ssize_t d_half):
    cdef const int64_t[::1] bv = np.ascontiguousarray(bins, dtype=np.int64)
    cdef const int8_t[::1] mv = np.ascontiguousarray(mode, dtype=np.int8)
    cdef const double[::1] ev = np.ascontiguousarray(expo, dtype=np.float64)
    counts_arr = np.zeros((2 * d_half, d_half), dtype=np.int64)
    cdef int64_t[:, ::1] counts = counts_arr
    cdef Py_ssize_t n_last = bv.shape[0] - 1
    cdef Py_ssize_t k = start, k_next, used = 0, n_exp = ev.shape[0]
    cdef double t = start * dt, t_end = n_last * dt, rate
    cdef int m
    with nogil:
        while used < n_exp:
            m = mv[k]
            rate = rate_on if m else rate_off
            t = t + ev[used] / rate
            used += 1
            k_next = <Py_ssize_t>(t / dt)
            if k_next > n_last or t > t_end:
                break
            counts[m * d_half + bv[k], bv[k_next]] += 1
            k = k_next
    return counts_arr, used


cdef void _tilt_generator(const double[:, ::1] S0, const double[::1] util, const double[::1] rates, double z,
                          double umax, double umin, double[::1] w, double[:, ::1] A) noexcept nogil:
    cdef Py_ssize_t d = S0.shape[0], i, j
    cdef double shift = z * umax if z >= 0 else z * umin
    cdef double zsum
    for j in range(d):
        w[j] = exp(z * util[j] - shift)
    for i in range(d):
        zsum = 0.0
        for j in range(d):
            zsum = zsum + S0[i, j] * w[j]
        for j in range(d):
            A[i, j] = rates[i] * (S0[i, j] * w[j] / zsum)
        A[i, i] = A[i, i] - rates[i]


cdef inline void _vecmat(double[::1] v, double[:, ::1] A, double[::1] out) noexcept nogil:
    cdef Py_ssize_t d = A.shape[0], i, j
    cdef double vi
    for j in range(d):
        out[j] = 0.0
    for i in range(d):
        vi = v[i]
        if vi != 0.0:
            for j in range(d):
                out[j] = out[j] + vi * A[i, j]


def mf_integrate(S0, util, rates, zeta, mu0, double dt, Py_ssize_t record_every):
    cdef const double[:, ::1] s0 = np.ascontiguousarray(S0, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(util, dtype=np.float64)
    cdef const double[::1] rv = np.ascontiguousarray(rates, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(zeta, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], d = s0.shape[0], k, j
    cdef Py_ssize_t n_rec = (n + record_every - 1) // record_every
    mu_arr = np.array(mu0, dtype=np.float64).reshape(d)
    cdef double[::1] mu = mu_arr
    rec_arr = np.empty((n_rec, d))
    cdef double[:, ::1] rec = rec_arr
    y_arr = np.empty(n)
    cdef double[::1] y = y_arr
    A_arr = np.empty((d, d))
    cdef double[:, ::1] A = A_arr
    cdef double[::1] w = np.empty(d)
    cdef double[::1] k1 = np.empty(d)
    cdef double[::1] k2 = np.empty(d)
    cdef double[::1] k3 = np.empty(d)
    cdef double[::1] k4 = np.empty(d)
    cdef double[::1] tmp = np.empty(d)
    cdef double umax = np.max(util), umin = np.min(util)
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    cdef double z, last_z = 0.0, acc, mn = 1e300, err, max_err = 0.0, tot
    cdef bint have_A = False
    with nogil:
        for k in range(n):
            if k % record_every == 0:
                for j in range(d):
                    rec[k // record_every, j] = mu[j]
            acc = 0.0
            for j in range(d):
                acc = acc + mu[j] * uv[j]
            y[k] = acc
            z = zv[k]
            if not have_A or z != last_z:
                _tilt_generator(s0, uv, rv, z, umax, umin, w, A)
                last_z = z
                have_A = True
            _vecmat(mu, A, k1)
            for j in range(d):
                tmp[j] = mu[j] + half * k1[j]
            _vecmat(tmp, A, k2)
            for j in range(d):
                tmp[j] = mu[j] + half * k2[j]
            _vecmat(tmp, A, k3)
            for j in range(d):
                tmp[j] = mu[j] + dt * k3[j]
            _vecmat(tmp, A, k4)
            tot = 0.0
            for j in range(d):
                mu[j] = mu[j] + sixth * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                tot = tot + mu[j]
                if mu[j] < mn:
                    mn = mu[j]
            err = fabs(tot - 1.0)
            if err > max_err:
                max_err = err
    return rec_arr, y_arr, float(mn), float(max_err), mu_arr


def agents_run(cum, last_idx, double t_start, double window, rates, util, mode_of, excursion, keys,
               state, next_jump, counter, switches, excursions):
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cum, dtype=np.float64)
    cdef const int64_t[:, ::1] lv = np.ascontiguousarray(last_idx, dtype=np.int64)
    cdef const double[::1] rv = np.ascontiguousarray(rates, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(util, dtype=np.float64)
    cdef const int8_t[::1] mo = np.ascontiguousarray(mode_of, dtype=np.int8)
    cdef const int8_t[::1] ex = np.ascontiguousarray(excursion, dtype=np.int8)
    cdef const uint64_t[::1] kv = keys
    cdef int64_t[::1] st = state
    cdef double[::1] nj = next_jump
    cdef uint64_t[::1] ct = counter
    cdef int64_t[::1] sw = switches
    cdef int64_t[::1] xc = excursions
    cdef Py_ssize_t n_win = cv.shape[0], d = cv.shape[1], n_ag = st.shape[0]
    power_arr = np.empty(n_win)
    cdef double[::1] power = power_arr
    cdef Py_ssize_t w, i, j, old, new
    cdef double t_end, u1, u2, acc
    with nogil:
        for w in range(n_win):
            acc = 0.0
            for i in range(n_ag):
                acc = acc + uv[st[i]]
            power[w] = acc
            t_end = t_start + (w + 1) * window
            for i in range(n_ag):
                while nj[i] < t_end:
                    u1 = _uniform(kv[i], ct[i])
                    u2 = _uniform(kv[i], ct[i] + 1)
                    ct[i] = ct[i] + 2
                    old = st[i]
                    new = 0
                    for j in range(d):
                        if cv[w, old, j] <= u1:
                            new = new + 1
                    if new > lv[w, old]:
                        new = lv[w, old]
                    st[i] = new
                    if mo[old] != mo[new]:
                        sw[i] = sw[i] + 1
                    xc[i] = xc[i] + ex[new]
                    nj[i] = nj[i] + (-log1p(-u2) / rv[new])
    return power_arr
