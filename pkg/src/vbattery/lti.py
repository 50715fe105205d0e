"""Continuous-time SISO LTI toolkit.

Rational transfer functions in descending powers of ``s``, state-space
realizations, frequency response, exact zero-order-hold simulation and
analog Butterworth filter design. All frequencies are in rad/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .timeseries import TimeSeries

__all__ = [
    "PoleOnGridError",
    "TransferFunction",
    "StateSpace",
    "tf_eval",
    "tf_connect",
    "minreal",
    "to_state_space",
    "discretize_zoh",
    "simulate_lti",
    "simulate_lti_array",
    "freqresp",
    "butterworth_lowpass",
    "butterworth_highpass",
    "butterworth_bandpass",
    "CYC_PER_HR",
    "cyc_per_hr",
]

#: One cycle per hour expressed in rad/s.
CYC_PER_HR = 2.0 * np.pi / 3600.0


def cyc_per_hr(value):
    """Convert cycles/hour to rad/s."""
    return np.asarray(value, dtype=float) * CYC_PER_HR if np.ndim(value) else float(value) * CYC_PER_HR


class PoleOnGridError(ZeroDivisionError):
    """A transfer function was evaluated at one of its poles."""


def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[nz[0]:].copy()


@dataclass(frozen=True)
class TransferFunction:
    """Rational transfer function ``num(s)/den(s)``.

    Coefficients are real and given in descending powers of ``s``; leading
    zeros are stripped.
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num, den = _trim(self.num), _trim(self.den)
        if den[0] == 0.0:
            raise ValueError("denominator must not be identically zero")
        for a in (num, den):
            a.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    # -- construction -------------------------------------------------------
    @classmethod
    def gain(cls, k: float) -> "TransferFunction":
        return cls([k], [1.0])

    @classmethod
    def from_roots(cls, zeros, poles, k: float = 1.0) -> "TransferFunction":
        return cls(k * np.real_if_close(np.poly(zeros)).real, np.real_if_close(np.poly(poles)).real)

    # -- properties ---------------------------------------------------------
    @property
    def num_degree(self) -> int:
        return 0 if not np.any(self.num) else self.num.size - 1

    @property
    def den_degree(self) -> int:
        return self.den.size - 1

    @property
    def is_proper(self) -> bool:
        return self.num_degree <= self.den_degree

    def poles(self) -> np.ndarray:
        return np.roots(self.den) if self.den.size > 1 else np.zeros(0, complex)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num) if self.num.size > 1 else np.zeros(0, complex)

    def is_stable(self) -> bool:
        return bool(np.all(self.poles().real < 0))

    def dcgain(self) -> float:
        return float(tf_eval(self, 0.0).real)

    def __call__(self, s):
        return tf_eval(self, s)

    # -- algebra ------------------------------------------------------------
    def __mul__(self, other):
        if np.isscalar(other):
            return TransferFunction(self.num * other, self.den)
        return tf_connect("series", self, other)

    __rmul__ = __mul__

    def __add__(self, other):
        if np.isscalar(other):
            other = TransferFunction.gain(other)
        return tf_connect("parallel", self, other)

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den)

    def __sub__(self, other):
        return self + (-other if not np.isscalar(other) else -other)

    def inverse(self) -> "TransferFunction":
        return TransferFunction(self.den, self.num)

    def to_dict(self) -> dict:
        return {"num": [float(c) for c in self.num], "den": [float(c) for c in self.den]}

    @classmethod
    def from_dict(cls, d) -> "TransferFunction":
        return cls(d["num"], d["den"])


def tf_eval(tf: TransferFunction, s):
    """Evaluate ``tf`` at complex frequency ``s`` (scalar or array).

    Raises
    ------
    PoleOnGridError
        If ``den(s)`` vanishes at some requested point.
    """
    s = np.asarray(s, dtype=complex)
    den = np.polyval(tf.den, s)
    scale = np.polyval(np.abs(tf.den), np.abs(s))
    bad = np.abs(den) <= 1e-14 * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        where = np.atleast_1d(s)[np.atleast_1d(bad)][0]
        raise PoleOnGridError(f"transfer function has a pole at s = {where} (omega = {where.imag} rad/s)")
    out = np.polyval(tf.num, s) / den
    return complex(out) if out.ndim == 0 else out


def tf_connect(kind: str, a: TransferFunction, b: TransferFunction) -> TransferFunction:
    """Series, parallel or negative-feedback interconnection.

    ``feedback`` returns ``a/(1+a*b)``. No pole-zero cancellation is done;
    use :func:`minreal` afterwards if needed.
    """
    if kind == "series":
        return TransferFunction(np.polymul(a.num, b.num), np.polymul(a.den, b.den))
    if kind == "parallel":
        num = np.polyadd(np.polymul(a.num, b.den), np.polymul(b.num, a.den))
        return TransferFunction(num, np.polymul(a.den, b.den))
    if kind == "feedback":
        num = np.polymul(a.num, b.den)
        den = np.polyadd(np.polymul(a.den, b.den), np.polymul(a.num, b.num))
        return TransferFunction(num, den)
    raise ValueError(f"unknown connection kind {kind!r}")


def minreal(tf: TransferFunction, tol: float = 1e-8) -> TransferFunction:
    """Cancel pole/zero pairs closer than ``tol`` (relative)."""
    zeros = list(tf.zeros())
    poles = list(tf.poles())
    kept_z = []
    for z in zeros:
        if poles:
            d = [abs(z - p) for p in poles]
            i = int(np.argmin(d))
            if d[i] <= tol * max(1.0, abs(z)):
                poles.pop(i)
                continue
        kept_z.append(z)
    k = tf.num[0] / tf.den[0]
    return TransferFunction.from_roots(kept_z, poles, k)


@dataclass(frozen=True)
class StateSpace:
    """``dx/dt = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.size == 0:
            A = A.reshape(0, 0)
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if n else np.zeros((0, np.atleast_2d(self.D).shape[1]))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        C = np.asarray(self.C, dtype=float).reshape(D.shape[0], n)
        if A.shape != (n, n) or B.shape != (n, D.shape[1]):
            raise ValueError("inconsistent state-space dimensions")
        for m in (A, B, C, D):
            m.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def series(self, other: "StateSpace") -> "StateSpace":
        """Cascade: ``self`` feeds ``other``."""
        n1, n2 = self.n_states, other.n_states
        A = np.block([[self.A, np.zeros((n1, n2))], [other.B @ self.C, other.A]])
        B = np.vstack([self.B, other.B @ self.D])
        C = np.hstack([other.D @ self.C, other.C])
        return StateSpace(A, B, C, other.D @ self.D)

    def dcgain(self) -> np.ndarray:
        if self.n_states == 0:
            return self.D.copy()
        return self.C @ np.linalg.solve(-self.A, self.B) + self.D


def to_state_space(tf: TransferFunction, freq_scale: float | None = None) -> StateSpace:
    """Controllable canonical realization of a proper transfer function.

    The realization is built in the scaled variable ``s/freq_scale`` and
    mapped back by a diagonal similarity, which keeps the matrices well
    conditioned for slow systems. By default ``freq_scale`` is the geometric
    mean of the pole magnitudes.
    """
    if not tf.is_proper:
        raise ValueError(f"improper transfer function (deg num {tf.num_degree} > deg den {tf.den_degree})")
    den = tf.den / tf.den[0]
    num = tf.num / tf.den[0]
    n = den.size - 1
    num = np.concatenate([np.zeros(n + 1 - num.size), num])
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[num[0]]])
    if freq_scale is None:
        mags = np.abs(tf.poles())
        mags = mags[mags > 0]
        freq_scale = float(np.exp(np.mean(np.log(mags)))) if mags.size else 1.0
    w = float(freq_scale)
    powers = w ** np.arange(n + 1)  # w^i for coefficient index i
    a = den[1:] / powers[1:]  # coefficients of the monic polynomial in sigma
    b = num / powers
    d = b[0]
    c = b[1:] - d * a
    A_sig = np.zeros((n, n))
    A_sig[0, :] = -a
    if n > 1:
        A_sig[np.arange(1, n), np.arange(n - 1)] = 1.0
    # sigma-domain system is (A_sig, e1, c, d); time scaling gives s-domain A = w*A_sig, B = w*e1
    B = np.zeros((n, 1))
    B[0, 0] = w
    return StateSpace(w * A_sig, B, c.reshape(1, n), [[d]])


def freqresp(ss: StateSpace, w) -> np.ndarray:
    """Frequency response ``C (jwI - A)^-1 B + D`` for a SISO system."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    n = ss.n_states
    out = np.empty(w.size, dtype=complex)
    eye = np.eye(n)
    for i, wi in enumerate(w):
        if n:
            x = np.linalg.solve(1j * wi * eye - ss.A, ss.B[:, 0])
            out[i] = ss.C[0] @ x + ss.D[0, 0]
        else:
            out[i] = ss.D[0, 0]
    return out


def discretize_zoh(ss: StateSpace, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH discretization via the exponential of ``[[A, B], [0, 0]]``."""
    n, m = ss.B.shape
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, m))
    M = np.zeros((n + m, n + m))
    M[:n, :n] = ss.A
    M[:n, n:] = ss.B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate_lti_array(ss: StateSpace, u: np.ndarray, dt: float, x0=None) -> np.ndarray:
    """Simulate with inputs ``u`` of shape ``(n_steps, m)`` held constant over each step."""
    from . import kernels

    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    Ad, Bd = discretize_zoh(ss, dt)
    x0 = np.zeros(ss.n_states) if x0 is None else np.asarray(x0, dtype=float)
    return kernels.lti_run(Ad, Bd, np.asarray(ss.C), np.asarray(ss.D), u, x0)


def simulate_lti(ss: StateSpace, u: TimeSeries, x0=None, units: str = "") -> TimeSeries:
    """Simulate a SISO system driven by a piecewise-constant input.

    The output has the same grid as ``u``; sample ``k`` is ``C x_k + D u_k``.
    """
    y = simulate_lti_array(ss, u.values, u.dt, x0)
    return TimeSeries(u.t0, u.dt, y[:, 0], units)


# -- Butterworth designs -------------------------------------------------------

def _butter_prototype(order: int) -> np.ndarray:
    if order < 1:
        raise ValueError("filter order must be >= 1")
    k = np.arange(1, order + 1)
    poles = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    return np.real(np.poly(poles))


def butterworth_lowpass(cutoff: float, order: int = 2) -> TransferFunction:
    """Analog Butterworth low-pass with unit DC gain and -3 dB at ``cutoff``."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    p = _butter_prototype(order)
    den = p * cutoff ** np.arange(order + 1)
    return TransferFunction([cutoff ** order], den)


def butterworth_highpass(cutoff: float, order: int = 2) -> TransferFunction:
    """Analog Butterworth high-pass with unit high-frequency gain."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    p = _butter_prototype(order)
    den = p * cutoff ** np.arange(order + 1)
    num = np.zeros(order + 1)
    num[0] = 1.0
    return TransferFunction(num, den)


def butterworth_bandpass(f_lo: float, f_hi: float, order: int = 2) -> TransferFunction:
    """Analog Butterworth band-pass with -3 dB edges at ``f_lo`` and ``f_hi``.

    An ``order``-pole low-pass prototype is mapped with
    ``p -> (s^2 + w0^2)/(B s)``, ``w0 = sqrt(f_lo f_hi)``, ``B = f_hi - f_lo``,
    so the result has ``2*order`` poles and unit gain at ``w0``.
    """
    if not (f_lo > 0 and f_hi > f_lo):
        raise ValueError(f"invalid band [{f_lo}, {f_hi}]: need 0 < f_lo < f_hi")
    proto = _butter_prototype(order)
    w0sq = f_lo * f_hi
    bw = f_hi - f_lo
    quad = np.array([1.0, 0.0, w0sq])
    den = np.zeros(1)
    for i, c in enumerate(proto):
        # c * (s^2 + w0^2)^(order-i) * (B s)^i
        term = np.array([c])
        for _ in range(order - i):
            term = np.polymul(term, quad)
        term = np.polymul(term, np.concatenate([[bw ** i], np.zeros(i)]))
        den = np.polyadd(den, term)
    num = np.concatenate([[bw ** order], np.zeros(order)])
    return TransferFunction(num, den)


def bandpass_companion_lowpass(f_lo: float, f_hi: float, order: int = 2) -> TransferFunction:
    """Second-order low-pass on the upper pole pair of ``butterworth_bandpass``.

    Unit DC gain. Sharing the band-pass poles keeps the two responses roughly
    in phase over the band, so their sum has no notch near ``f_lo``.
    """
    poles = np.roots(butterworth_bandpass(f_lo, f_hi, order).den)
    pair = poles[np.argsort(np.abs(poles))][-2:]
    den = np.real(np.poly(pair))
    return TransferFunction([den[-1]], den)
