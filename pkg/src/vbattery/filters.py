"""Prefilter design: rational fit, minimum-phase inversion and band limiting.

The linearized aggregate response ``G`` of a load class is approximated by a
low-order rational function using the Sanathanan-Koerner iteration. Its
stable, proper inverse ``M_inv`` (with roll-off poles added) is cascaded with
a Butterworth bandpass to give the class prefilter ``M_total``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .lti import TransferFunction, butterworth_bandpass, tf_eval

logger = logging.getLogger(__name__)

#: Orders tried, in sequence, when no explicit order is requested.
DEFAULT_ORDERS = ((1, 2), (2, 3), (3, 4))


class FitError(ValueError):
    """Rational fit error exceeds the admissible bound."""


@dataclass(frozen=True)
class RationalFit:
    tf: TransferFunction
    fit_order: tuple[int, int]
    max_fit_error_db: float
    max_fit_error_deg: float
    reflected: int = 0


@dataclass(frozen=True)
class LocalFilter:
    m_inv: TransferFunction
    m_bp: TransferFunction
    m_total: TransferFunction
    band: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "band_rad_s": list(self.band),
            "m_inv": self.m_inv.to_dict(),
            "m_bp": self.m_bp.to_dict(),
            "m_total": self.m_total.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "LocalFilter":
        return cls(TransferFunction.from_dict(d["m_inv"]), TransferFunction.from_dict(d["m_bp"]),
                   TransferFunction.from_dict(d["m_total"]), tuple(d["band_rad_s"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _reflect(roots: np.ndarray, min_damping: float = 1e-6) -> tuple[np.ndarray, int]:
    """Mirror right-half-plane roots into the left half-plane."""
    roots = np.asarray(roots, dtype=complex).copy()
    bad = roots.real >= -min_damping * np.abs(roots)
    bad &= np.abs(roots) > 0
    out = roots.copy()
    re = -np.maximum(np.abs(roots.real), min_damping * np.abs(roots))
    out[bad] = re[bad] + 1j * roots.imag[bad]
    return out, int(bad.sum())


def _polyfit_sk(x: np.ndarray, H: np.ndarray, n: int, m: int, n_iter: int, weights: np.ndarray):
    """SK iteration in the normalized variable; returns (num, den) with den monic."""
    V_num = np.vander(x, n + 1)  # columns x^n .. x^0
    V_den = np.vander(x, m + 1)
    D_prev = np.ones_like(x)
    for _ in range(n_iter + 1):
        w = weights / np.abs(D_prev)
        # N(x) - H * (D(x) - x^m) = H * x^m, den leading coefficient fixed to 1
        lhs = np.hstack([V_num, -H[:, None] * V_den[:, 1:]]) * w[:, None]
        rhs = H * V_den[:, 0] * w
        M = np.vstack([lhs.real, lhs.imag])
        r = np.concatenate([rhs.real, rhs.imag])
        scale = np.linalg.norm(M, axis=0)
        scale[scale == 0] = 1.0
        coef, *_ = np.linalg.lstsq(M / scale, r, rcond=None)
        coef = coef / scale
        num = coef[: n + 1]
        den = np.concatenate([[1.0], coef[n + 1:]])
        D_prev = np.polyval(den, x)
    return num, den


def fit_rational(w, H, order: tuple[int, int] = (1, 2), n_iter: int = 3, weights=None,
                 max_error_db: float = 3.0, band=None, out_of_band_weight: float = 0.3) -> RationalFit:
    """Low-order rational fit of frequency response data.

    Parameters
    ----------
    w : array
        Frequencies (rad/s), at least 50 points.
    H : complex array
        Response at ``w``.
    order : (int, int)
        Numerator and denominator degree, both at most 4.
    n_iter : int
        Sanathanan-Koerner reweighting iterations after the initial Levy
        solve.
    weights : array, optional
        Extra per-point weights; the default weights by ``1/|H|`` so the
        residual approximates a relative (dB) error.
    band : (float, float), optional
        Target band. Points outside it are down-weighted by
        ``out_of_band_weight`` and the reported errors cover the band only.

    Returns
    -------
    RationalFit
        Poles and zeros in the right half-plane are reflected, so the fit is
        stable and minimum phase.

    Raises
    ------
    FitError
        If the maximum magnitude error exceeds ``max_error_db``.
    """
    w = np.asarray(w, dtype=float)
    H = np.asarray(H, dtype=complex)
    n, m = order
    if w.size < 50:
        raise ValueError("need at least 50 frequency points")
    if not (0 <= n <= 4 and 0 <= m <= 4):
        raise ValueError("fit order must be at most 4")
    if np.any(w <= 0):
        raise ValueError("frequencies must be positive")
    w_ref = float(np.exp(np.mean(np.log(w))))
    x = 1j * w / w_ref
    base = 1.0 / np.maximum(np.abs(H), 1e-300)
    if weights is not None:
        base = base * np.asarray(weights, dtype=float)
    sel = np.ones(w.size, dtype=bool)
    if band is not None:
        sel = (w >= band[0] * (1 - 1e-12)) & (w <= band[1] * (1 + 1e-12))
        if not np.any(sel):
            raise ValueError("no frequency points inside band")
        base = np.where(sel, base, out_of_band_weight * base)
    num_x, den_x = _polyfit_sk(x, H, n, m, n_iter, base)

    # back to s = w_ref * x
    num_s = num_x * w_ref ** -np.arange(n, -1, -1.0)
    den_s = den_x * w_ref ** -np.arange(m, -1, -1.0)
    num_s = np.trim_zeros(num_s, "f") if np.any(num_s) else np.zeros(1)
    z, nz = _reflect(np.roots(num_s))
    p, npol = _reflect(np.roots(den_s))
    tf = TransferFunction.from_roots(z, p, num_s[0] / den_s[0])
    # mirrored roots keep |tf(jw)|, so reflection only changes the phase
    Hf = tf_eval(tf, 1j * w[sel])
    err_db = 20 * np.log10(np.abs(Hf) / np.abs(H[sel]))
    err_deg = np.degrees(np.angle(Hf / H[sel]))
    fit = RationalFit(tf, (n, m), float(np.max(np.abs(err_db))), float(np.max(np.abs(err_deg))), nz + npol)
    if fit.max_fit_error_db > max_error_db:
        raise FitError(
            f"order {order} fit error {fit.max_fit_error_db:.2f} dB exceeds {max_error_db} dB; "
            "try a higher order"
        )
    return fit


def fit_auto(w, H, orders=DEFAULT_ORDERS, target_db: float = 0.25, target_deg: float = 2.0,
             max_error_db: float = 3.0, **kw) -> RationalFit:
    """Lowest order in ``orders`` meeting the targets, else the best fit."""
    best = None
    for order in orders:
        try:
            fit = fit_rational(w, H, order, max_error_db=np.inf, **kw)
        except np.linalg.LinAlgError:
            continue
        if fit.max_fit_error_db <= target_db and fit.max_fit_error_deg <= target_deg:
            return fit
        if best is None or fit.max_fit_error_db < best.max_fit_error_db:
            best = fit
    if best is None:
        raise FitError("rational fit failed for every order")
    if best.max_fit_error_db > max_error_db:
        raise FitError(f"best fit error {best.max_fit_error_db:.2f} dB exceeds {max_error_db} dB; "
                       "try a higher order")
    return best


def rolloff(n_poles: int, freq: float) -> TransferFunction:
    """``(freq / (s + freq))**n_poles``, unity at DC."""
    tf = TransferFunction.gain(1.0)
    for _ in range(n_poles):
        tf = tf * TransferFunction([freq], [1.0, freq])
    return tf


def inverse_filter(fit: RationalFit | TransferFunction, band, rolloff_freq: float | None = None) -> TransferFunction:
    """Stable proper approximate inverse of a minimum-phase fit.

    Roll-off poles at ``rolloff_freq`` (default ten times the band top) are
    added until the inverse is proper.
    """
    tf = fit.tf if isinstance(fit, RationalFit) else fit
    if not tf.is_stable() or np.any(tf.zeros().real >= 0):
        raise ValueError("fit must be stable and minimum phase")
    inv = tf.inverse()
    f_roll = 10.0 * float(band[1]) if rolloff_freq is None else float(rolloff_freq)
    excess = inv.num_degree - inv.den_degree
    return inv * rolloff(max(excess, 0), f_roll) if excess > 0 else inv


def compose_local_filter(m_inv: TransferFunction, band, order: int = 2) -> LocalFilter:
    lo, hi = float(band[0]), float(band[1])
    m_bp = butterworth_bandpass(lo, hi, order)
    m_total = m_inv * m_bp
    if not (m_total.is_proper and m_total.is_stable()):
        raise ValueError("composite filter is not proper and stable")
    return LocalFilter(m_inv, m_bp, m_total, (lo, hi))


def band_grid(band, n: int = 200) -> np.ndarray:
    return np.logspace(np.log10(band[0]), np.log10(band[1]), n)


def flatness_report(m_total, w, G, band, reference=None) -> dict:
    """Deviation of ``M(jw) G(jw)`` from unity over ``band``.

    Parameters
    ----------
    m_total : TransferFunction
    w, G : arrays
        Raw (unfitted) frequency data of the load response.
    reference : TransferFunction, optional
        Target shape; deviations are measured from ``reference(jw)``
        instead of from one.
    """
    w = np.asarray(w, dtype=float)
    G = np.asarray(G, dtype=complex)
    sel = (w >= band[0] * (1 - 1e-12)) & (w <= band[1] * (1 + 1e-12))
    if not np.any(sel):
        raise ValueError("no frequency points inside band")
    L = tf_eval(m_total, 1j * w[sel]) * G[sel]
    if reference is not None:
        L = L / tf_eval(reference, 1j * w[sel])
    mag = 20 * np.log10(np.abs(L))
    ph = np.degrees(np.angle(L))
    return {"max_mag_dev_db": float(np.max(np.abs(mag))), "max_phase_dev_deg": float(np.max(np.abs(ph))),
            "n_points": int(sel.sum())}


def attenuation_db(tf: TransferFunction, w: float, G_at_w: complex = 1.0) -> float:
    """``-20 log10 |tf(jw) G|``; positive numbers mean attenuation."""
    return float(-20 * np.log10(abs(tf_eval(tf, 1j * w) * G_at_w)))


@dataclass(frozen=True)
class FilterDesign:
    fit: RationalFit
    local: LocalFilter
    report: dict


def hold_response(w, period: float):
    """Frequency response of a zero-order hold of length ``period``."""
    x = np.asarray(w, dtype=float) * period / 2
    return np.exp(-1j * x) * np.sinc(x / np.pi)


def design_local_filter(freqresp, band, orders=DEFAULT_ORDERS, n_points: int = 240,
                        margin_decades: float = 0.5, rolloff_factor: float = 10.0,
                        hold: float | None = 20.0, precompensate: bool = True) -> FilterDesign:
    """Full design for one class.

    ``freqresp`` is a callable returning ``G(jw)`` for an array of
    frequencies. The fit spans ``margin_decades`` beyond each band edge.

    With ``precompensate`` the fitted data is ``G * H_hold * P_roll``, where
    ``H_hold`` is the zero-order hold on which ``zeta`` is delivered and
    ``P_roll`` the single roll-off pole the inverse of a strictly proper fit
    needs. The inverse then cancels both lags inside the band. Without it the
    fit is of ``G`` alone.
    """
    lo, hi = float(band[0]), float(band[1])
    if not (0 < lo < hi):
        raise ValueError("band must satisfy 0 < lo < hi")
    f_roll = rolloff_factor * hi
    wf = np.logspace(np.log10(lo) - margin_decades, np.log10(hi) + margin_decades, n_points)
    target = freqresp(wf)
    if precompensate:
        if hold:
            target = target * hold_response(wf, hold)
        target = target * tf_eval(rolloff(1, f_roll), 1j * wf)
    fit = fit_auto(wf, target, orders, band=(lo, hi))
    m_inv = inverse_filter(fit, (lo, hi), f_roll)
    local = compose_local_filter(m_inv, (lo, hi))
    wb = band_grid((lo, hi))
    Gb = freqresp(wb)
    inv_rep = flatness_report(m_inv, wb, Gb, (lo, hi))
    tot_rep = flatness_report(local.m_total, wb, Gb, (lo, hi))
    rel_rep = flatness_report(local.m_total, wb, Gb, (lo, hi), reference=local.m_bp)
    w_dec = 10 * hi
    report = {
        "band_rad_s": [lo, hi],
        "fit_order": list(fit.fit_order),
        "fit_error_db": fit.max_fit_error_db,
        "fit_error_deg": fit.max_fit_error_deg,
        "hold_s": hold if precompensate else None,
        "inverse_mag_dev_db": inv_rep["max_mag_dev_db"],
        "inverse_phase_dev_deg": inv_rep["max_phase_dev_deg"],
        "total_mag_dev_db": tot_rep["max_mag_dev_db"],
        "total_phase_dev_deg": tot_rep["max_phase_dev_deg"],
        "total_vs_bandpass_mag_dev_db": rel_rep["max_mag_dev_db"],
        "total_vs_bandpass_phase_dev_deg": rel_rep["max_phase_dev_deg"],
        "attenuation_decade_above_db": attenuation_db(local.m_total, w_dec, complex(freqresp(np.array([w_dec]))[0])),
    }
    return FilterDesign(fit, local, report)
