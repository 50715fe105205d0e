"""Controlled Markov chains, myopic tilting and the mean-field model.

A :class:`ControlledModel` bundles a nominal transition matrix ``S0``, a
utility vector (power drawn in each state, kW) and per-state Poisson
sampling rates. The tilted chain

    S_zeta(x, x') = S0(x, x') exp(zeta util(x') - Lambda_zeta(x))

drives a continuous-time generator ``A_zeta = diag(rates) (S_zeta - I)``;
the population distribution evolves as ``d mu/dt = mu A_zeta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components

from . import kernels
from .lti import StateSpace
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

#: Largest |zeta * util| admitted before tilting.
ZETA_UTIL_CLIP = 30.0


class ReducibleChainError(ValueError):
    """The nominal chain has more than one communicating class."""


class DivergenceError(FloatingPointError):
    """Mean-field integration left the probability simplex."""


def check_stochastic(P: np.ndarray, atol: float = 1e-9, what: str = "matrix") -> None:
    P = np.asarray(P)
    if np.any(P < -atol):
        raise ValueError(f"{what} has negative entries")
    err = np.abs(P.sum(axis=1) - 1.0)
    if np.any(err > atol):
        raise ValueError(f"{what} rows do not sum to one (max error {err.max():.2e})")


def compose_s0(R0: np.ndarray, Q0: np.ndarray) -> np.ndarray:
    """Nominal transition matrix from mode and bin factors.

    ``S0(x, (u', n')) = R0(x, u') Q0(x, n')`` with states ordered
    ``mode*d_half + bin``.
    """
    R0 = np.asarray(R0, dtype=float)
    Q0 = np.asarray(Q0, dtype=float)
    if R0.shape[0] != Q0.shape[0] or R0.shape[0] != 2 * Q0.shape[1]:
        raise ValueError(f"incompatible shapes R0 {R0.shape}, Q0 {Q0.shape}")
    check_stochastic(R0, what="R0")
    check_stochastic(Q0, what="Q0")
    d = R0.shape[0]
    return (R0[:, :, None] * Q0[:, None, :]).reshape(d, d)


def rate_matrix(S: np.ndarray, rates) -> np.ndarray:
    """Generator ``diag(rates) (S - I)``; ``rates`` may be a scalar."""
    S = np.asarray(S, dtype=float)
    r = np.broadcast_to(np.asarray(rates, dtype=float), (S.shape[0],))
    return r[:, None] * (S - np.eye(S.shape[0]))


def rate_matrix_asym(S: np.ndarray, r_on: float, r_off: float, mode_of=None) -> np.ndarray:
    """Generator with rows of on-states scaled by ``r_on`` and off-states by ``r_off``.

    ``mode_of`` gives the mode (0 off, 1 on) of each state; by default the
    first half of the states is off and the second half on.
    """
    d = np.asarray(S).shape[0]
    if r_on <= 0 or r_off <= 0:
        raise ValueError("rates must be positive")
    mode = np.repeat([0, 1], d // 2) if mode_of is None else np.asarray(mode_of)
    return rate_matrix(S, np.where(mode == 1, float(r_on), float(r_off)))


def state_rates(d_half: int, rate_off: float, rate_on: float) -> np.ndarray:
    """Per-state sampling rates for the (mode, bin) ordering."""
    return np.concatenate([np.full(d_half, float(rate_off)), np.full(d_half, float(rate_on))])


def is_irreducible(A: np.ndarray, tol: float = 0.0) -> bool:
    n, _ = connected_components(np.abs(A) > tol, directed=True, connection="strong")
    return n == 1


def invariant_pmf(A0: np.ndarray) -> np.ndarray:
    """Invariant distribution of an irreducible generator (``pi A0 = 0``).

    Raises
    ------
    ReducibleChainError
        If the support graph of ``A0`` has several strongly connected
        components.
    """
    A0 = np.asarray(A0, dtype=float)
    off = A0 - np.diag(np.diag(A0))
    n_comp, lab = connected_components(off > 0, directed=True, connection="strong")
    if n_comp != 1:
        sizes = np.bincount(lab)
        raise ReducibleChainError(f"chain has {n_comp} communicating classes (sizes {sizes.tolist()})")
    d = A0.shape[0]
    M = A0.T.copy()
    M[-1, :] = 1.0
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    pi = sla.solve(M, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def myopic_tilt(S0: np.ndarray, util: np.ndarray, zeta: float) -> np.ndarray:
    """Exponentially tilted transition matrix, computed in log space."""
    S0 = np.asarray(S0, dtype=float)
    ez = float(zeta) * np.asarray(util, dtype=float)
    w = np.exp(ez - ez.max())
    T = S0 * w[None, :]
    return T / T.sum(axis=1, keepdims=True)


def log_partition(S0: np.ndarray, util: np.ndarray, zeta: float) -> np.ndarray:
    """``Lambda_zeta(x) = log sum_x' S0(x, x') exp(zeta util(x'))``."""
    ez = float(zeta) * np.asarray(util, dtype=float)
    m = ez.max()
    return m + np.log(S0 @ np.exp(ez - m))


def tilt_derivative(S0: np.ndarray, util: np.ndarray) -> np.ndarray:
    """Derivative of the tilted matrix at ``zeta = 0``.

    ``dS(x, x') = S0(x, x') (util(x') - sum_z S0(x, z) util(z))``; every row
    sums to zero.
    """
    S0 = np.asarray(S0, dtype=float)
    util = np.asarray(util, dtype=float)
    return S0 * (util[None, :] - (S0 @ util)[:, None])


def rk4_propagator(A: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step of ``d mu/dt = mu A`` as a matrix: ``mu_next = mu @ P``."""
    H = dt * np.asarray(A, dtype=float)
    H2 = H @ H
    return np.eye(H.shape[0]) + H + H2 / 2 + H2 @ H / 6 + H2 @ H2 / 24


@dataclass
class Linearization:
    """Linear model of the mean-field output around ``zeta = 0``.

    ``A = A0^T``, ``B = (pi0 A0')^T`` and ``C = util``. ``A`` has a zero
    eigenvalue along ``pi0`` that is unreachable from ``B``
    (``sum(B) = 0``), so realizations are built on the subspace orthogonal
    to the ones vector.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    pi0: np.ndarray
    basis: np.ndarray = field(repr=False)

    @property
    def reduced(self) -> StateSpace:
        if getattr(self, "_reduced", None) is None:
            V = self.basis
            self._reduced = StateSpace(V.T @ self.A @ V, (V.T @ self.B)[:, None], (self.C @ V)[None, :],
                                       np.zeros((1, 1)))
        return self._reduced

    def freqresp(self, w) -> np.ndarray:
        ss = self.reduced
        return _siso_freqresp(ss.A, ss.B.ravel(), ss.C.ravel(), w)

    def dcgain(self) -> float:
        return float(np.squeeze(self.reduced.dcgain()))


def linearize(S0: np.ndarray, util: np.ndarray, rates) -> Linearization:
    """``(A, B, C)`` of the mean-field model at ``zeta = 0``.

    ``rates`` is a scalar or per-state vector; the tilt is applied to ``S0``
    before the per-row rates.
    """
    S0 = np.asarray(S0, dtype=float)
    util = np.asarray(util, dtype=float)
    A0 = rate_matrix(S0, rates)
    pi0 = invariant_pmf(A0)
    r = np.broadcast_to(np.asarray(rates, dtype=float), (S0.shape[0],))
    A0p = r[:, None] * tilt_derivative(S0, util)
    B = pi0 @ A0p
    d = S0.shape[0]
    basis = sla.null_space(np.ones((1, d)))
    return Linearization(A=A0.T, B=B, C=util.copy(), pi0=pi0, basis=basis)


def _siso_freqresp(A, B, C, w) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    # eigendecomposition makes each frequency point O(n)
    lam, X = np.linalg.eig(A)
    cx = C @ X
    xb = np.linalg.solve(X, B)
    if np.linalg.cond(X) > 1e10:
        n = A.shape[0]
        return np.array([C @ np.linalg.solve(1j * wi * np.eye(n) - A, B) for wi in w])
    return (cx * xb) @ (1.0 / (1j * w[None, :] - lam[:, None]))


def mf_frequency_response(A, B, C, w) -> np.ndarray:
    """``G(jw) = C (jw I - A)^{-1} B``.

    The conserved direction (``1^T A = 0``) is removed first, so ``A`` may
    have the zero eigenvalue of a generator transpose; ``B`` must then sum to
    zero.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).ravel()
    C = np.asarray(C, dtype=float).ravel()
    d = A.shape[0]
    ones = np.ones(d)
    if np.allclose(ones @ A, 0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        if abs(B.sum()) > 1e-9 * max(1.0, np.abs(B).max()):
            raise ValueError("B must lie in the subspace orthogonal to the ones vector")
        V = sla.null_space(ones[None, :])
        return _siso_freqresp(V.T @ A @ V, V.T @ B, C @ V, w)
    return _siso_freqresp(A, B, C, w)


@dataclass
class ControlledModel:
    """Nominal chain, utility and sampling rates for one load class.

    Parameters
    ----------
    S0 : (d, d) array
        Nominal transition matrix of the embedded jump chain.
    util : (d,) array
        Power drawn in each state, kW.
    rates : (d,) array
        Poisson sampling rate in each state, 1/s.
    """

    S0: np.ndarray
    util: np.ndarray
    rates: np.ndarray
    name: str = "load"
    labels: list[str] | None = None
    excursion: np.ndarray | None = None
    mode_of: np.ndarray | None = None

    def __post_init__(self):
        self.S0 = np.asarray(self.S0, dtype=float)
        d = self.S0.shape[0]
        check_stochastic(self.S0, atol=1e-8, what="S0")
        self.util = np.asarray(self.util, dtype=float).reshape(d)
        self.rates = np.broadcast_to(np.asarray(self.rates, dtype=float), (d,)).copy()
        if np.any(self.rates <= 0):
            raise ValueError("sampling rates must be positive")
        if self.excursion is None:
            self.excursion = np.zeros(d, dtype=np.int8)
        if self.mode_of is None:
            self.mode_of = (self.util > 0.5 * self.util.max()).astype(np.int8)
        self._lin = None

    @property
    def d(self) -> int:
        return self.S0.shape[0]

    @property
    def rho(self) -> float:
        return float(self.util.max())

    @property
    def generator(self) -> np.ndarray:
        return rate_matrix(self.S0, self.rates)

    @property
    def pi0(self) -> np.ndarray:
        return self.linearization.pi0

    @property
    def mean_power(self) -> float:
        """Nominal average power per load, kW."""
        return float(self.pi0 @ self.util)

    @property
    def capacity(self) -> float:
        """Symmetric power deviation available per load, kW."""
        y0 = self.mean_power
        return min(y0, self.rho - y0)

    @property
    def linearization(self) -> Linearization:
        if self._lin is None:
            self._lin = linearize(self.S0, self.util, self.rates)
        return self._lin

    def clip_zeta(self, zeta):
        lim = ZETA_UTIL_CLIP / max(np.abs(self.util).max(), 1e-300)
        return np.clip(zeta, -lim, lim)

    def tilted(self, zeta: float) -> np.ndarray:
        return myopic_tilt(self.S0, self.util, float(self.clip_zeta(zeta)))

    def tilted_generator(self, zeta: float) -> np.ndarray:
        return rate_matrix(self.tilted(zeta), self.rates)

    def stationary_power(self, zeta: float) -> float:
        """Steady-state mean power under a constant ``zeta``."""
        return float(invariant_pmf(self.tilted_generator(zeta)) @ self.util)

    @classmethod
    def from_factors(cls, R0, Q0, util, rates, **kw) -> "ControlledModel":
        return cls(compose_s0(R0, Q0), util, rates, **kw)


def integrate_mean_field(model: ControlledModel, zeta: TimeSeries, mu0=None, record_every: int = 1,
                         tol: float = 1e-9):
    """RK4 integration of the mean-field ODE with ``zeta`` held per step.

    Parameters
    ----------
    zeta : TimeSeries
        Tilting parameter on the integration grid (its ``dt`` is the RK4 step).
    mu0 : array, optional
        Initial distribution; defaults to the invariant pmf.

    Returns
    -------
    mu : ndarray (n_rec, d)
        Distribution at every ``record_every``-th step (before the update).
    y : TimeSeries
        Mean power per load, kW.

    Raises
    ------
    DivergenceError
        If a probability drops below ``-tol`` or the mass drifts from one.
    """
    mu0 = model.pi0 if mu0 is None else np.asarray(mu0, dtype=float)
    z = model.clip_zeta(np.asarray(zeta.values, dtype=float))
    rec, y, mn, mass_err, _ = kernels.mf_integrate(model.S0, model.util, model.rates, z, mu0, zeta.dt,
                                                   int(record_every))
    if not np.isfinite(mn) or mn < -tol or mass_err > 1e-6:
        raise DivergenceError(f"mean-field state left the simplex (min {mn:.3e}, mass error {mass_err:.3e})")
    return rec, zeta.with_values(y, "kW")
