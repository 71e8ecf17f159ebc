"""Dead-time and afterpulse correction of measured click rates.

A detector with non-paralyzable dead time ``tau`` is read out at two
settings: with the laser on (click rate ``R``) and with the laser off
(click rate ``R_dark``).  The functions here recover the per-pulse
probability that a laser pulse would have been detected if the detector
had been live, removing

* the afterpulse contribution, to 1st or 2nd order in ``p_ap``;
* the dark-click contribution, including dark clicks hidden by dead time;
* laser pulses blocked by the dead time of earlier clicks.

Click probabilities are "per dead-time window": ``P = R * tau``.

Everything is a pure function of immutable values. ``PulseDetectionCorrector``
wraps the same arithmetic in a scikit-learn transformer.
"""
import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InconsistentRates, NegativeDiscriminant, OutOfRange
from .validation import check_non_negative, check_positive, check_probability

#: below this afterpulse probability the 2nd-order inverse uses its Taylor series
EPS_AP = 1e-6
#: negative round-off tolerated (and clamped to 0) in derived probabilities
NEG_TOL = 1e-12


class ApOrder(enum.IntEnum):
    """Order of the afterpulse approximation."""

    FIRST = 1
    SECOND = 2


@dataclass(frozen=True)
class DetectorParams:
    """Dead time ``tau`` [s], afterpulse probability ``p_ap`` and laser repetition rate ``nu_l`` [Hz]."""

    tau: float
    p_ap: float
    nu_l: float

    def __post_init__(self):
        object.__setattr__(self, "tau", check_positive(self.tau, "tau"))
        object.__setattr__(self, "nu_l", check_positive(self.nu_l, "nu_l"))
        object.__setattr__(self, "p_ap", check_probability(self.p_ap, "p_ap", upper_open=True))

    @property
    def nu_tau(self):
        """Limit count rate of the detector, ``1 / tau``."""
        return 1.0 / self.tau

    @property
    def period(self):
        """Laser period ``T = 1 / nu_l``."""
        return 1.0 / self.nu_l

    @property
    def tau_over_period(self):
        return self.tau * self.nu_l

    @property
    def blocked_pulses(self):
        """Laser pulses fully covered by one dead time, ``floor(tau / T)``."""
        ratio = self.tau_over_period
        nearest = round(ratio)
        # tau an exact multiple of T must not lose a pulse to round-off
        if abs(ratio - nearest) < 1e-9:
            return int(nearest)
        return math.floor(ratio)


@dataclass(frozen=True)
class RawRates:
    """Mean click rates with the laser on (``r``) and off (``r_dark``), in Hz."""

    r: float
    r_dark: float

    def __post_init__(self):
        object.__setattr__(self, "r", check_non_negative(self.r, "r"))
        object.__setattr__(self, "r_dark", check_non_negative(self.r_dark, "r_dark"))
        if self.r_dark > self.r:
            warnings.warn(
                f"dark rate {self.r_dark} Hz exceeds light-on rate {self.r} Hz",
                RuntimeWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class CorrectionBreakdown:
    """Every intermediate probability of the correction, for reporting."""

    p_measured: float
    p_measured_dark: float
    p0: float
    p0_dark: float
    p_dc: float
    p_sig: float
    p0_sig: float

    def as_dict(self):
        return dict(self.__dict__)


def _clamp(value, what):
    if value < -NEG_TOL or value > 1 + NEG_TOL:
        raise InconsistentRates(f"{what} = {value!r} is outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def _second_order_term(p0, p_ap):
    return p0 * p0 * p_ap / ((1.0 - p_ap) ** 2 * (1.0 + p_ap))


def afterpulse_forward(p0, p_ap, order=ApOrder.SECOND):
    """Click probability including afterpulses, from the afterpulse-free probability ``p0``.

    Raises
    ------
    OutOfRange
        If the result is not a probability, i.e. ``p0`` and ``p_ap`` are
        physically inconsistent.
    """
    p0 = check_probability(p0, "p0")
    p_ap = check_probability(p_ap, "p_ap", upper_open=True)
    order = ApOrder(order)
    p = p0 / (1.0 - p_ap)
    if order is ApOrder.SECOND:
        p = p - _second_order_term(p0, p_ap)
    if p > 1.0 or p < 0.0:
        raise OutOfRange(
            f"p0={p0} with p_ap={p_ap} ({order.name.lower()} order) gives click probability {p}"
        )
    return p


def afterpulse_invert(p, p_ap, order=ApOrder.SECOND):
    """Afterpulse-free click probability from the measured click probability ``p``.

    The 2nd-order map is a quadratic in ``p0``; the smaller root is the
    physical one. It is evaluated in the rationalized form
    ``2 (1 - p_ap) p / (1 + sqrt(1 - 4 p_ap p / (1 + p_ap)))`` which has no
    cancellation, and by its Taylor series in ``p_ap`` below ``EPS_AP``.

    Raises
    ------
    NegativeDiscriminant
        If ``4 p_ap p / (1 + p_ap) > 1``: no afterpulse-free probability
        reproduces ``p`` at this ``p_ap``.
    """
    p = check_probability(p, "p")
    p_ap = check_probability(p_ap, "p_ap", upper_open=True)
    order = ApOrder(order)
    if order is ApOrder.FIRST:
        return p * (1.0 - p_ap)

    disc = 1.0 - 4.0 * p_ap * p / (1.0 + p_ap)
    if disc < 0.0:
        raise NegativeDiscriminant(
            f"click probability {p} cannot be reached with p_ap={p_ap} "
            f"(discriminant {disc})"
        )
    if p_ap < EPS_AP:
        p2 = p * p
        return p + p_ap * (p2 - p) + p_ap * p_ap * (2.0 * p2 * p - 2.0 * p2)
    return 2.0 * (1.0 - p_ap) * p / (1.0 + math.sqrt(disc))


def _check_rates(raw, params):
    if raw.r * params.tau >= 1.0:
        raise InconsistentRates(f"light-on rate {raw.r} Hz is not below 1/tau = {params.nu_tau} Hz")
    if raw.r_dark * params.tau >= 1.0:
        raise InconsistentRates(
            f"dark rate {raw.r_dark} Hz is not below 1/tau = {params.nu_tau} Hz"
        )


def _dark_unchecked(r, r_dark, params, order):
    p_dark = r_dark * params.tau
    p0_dark = afterpulse_invert(p_dark, params.p_ap, order)
    blocking = 1.0 - r * params.tau * params.tau_over_period
    return p_dark, p0_dark, p0_dark * blocking


def dark_click_probability(raw, params, order=ApOrder.SECOND):
    """Probability of a dark click in one dead-time window while the laser is on."""
    _check_rates(raw, params)
    _, _, p_dc = _dark_unchecked(raw.r, raw.r_dark, params, order)
    return _clamp(p_dc, "dark-click probability")


def signal_click_probability(raw, params, order=ApOrder.SECOND):
    """Probability of a laser-induced click in one dead-time window."""
    return _breakdown(raw, params, order).p_sig


def _breakdown(raw, params, order):
    _check_rates(raw, params)
    order = ApOrder(order)
    p_dark, p0_dark, p_dc = _dark_unchecked(raw.r, raw.r_dark, params, order)
    p_dc = _clamp(p_dc, "dark-click probability")
    if p_dc >= 1.0:
        raise InconsistentRates("dark-click probability reached 1")
    p = raw.r * params.tau
    p0 = afterpulse_invert(p, params.p_ap, order)
    p_sig = _clamp(1.0 - (1.0 - p0) / (1.0 - p_dc), "signal-click probability")
    return CorrectionBreakdown(
        p_measured=p,
        p_measured_dark=p_dark,
        p0=p0,
        p0_dark=p0_dark,
        p_dc=p_dc,
        p_sig=p_sig,
        p0_sig=math.nan,
    )


def pulse_detection_probability(raw, params, order=ApOrder.SECOND):
    """Probability that a laser pulse is detected, given a live detector.

    The signal click rate ``R_sig = P_sig / tau`` is divided by the number of
    laser pulses per second the detector could actually see::

        P_det = R_sig / (nu_l - R tau/T + R_sig (tau/T - floor(tau/T)))

    Returns the full :class:`CorrectionBreakdown`; ``.p0_sig`` is the answer.
    """
    b = _breakdown(raw, params, order)
    ratio = params.tau_over_period
    r_sig = b.p_sig / params.tau
    denom = params.nu_l - raw.r * ratio + r_sig * (ratio - params.blocked_pulses)
    if denom <= 0.0:
        raise InconsistentRates(
            f"live laser-pulse rate {denom} Hz is not positive for R={raw.r} Hz"
        )
    p0_sig = _clamp(r_sig / denom, "pulse detection probability")
    return CorrectionBreakdown(**{**b.as_dict(), "p0_sig": p0_sig})


def _p0_sig_unchecked(r, r_dark, params, order):
    _, _, p_dc = _dark_unchecked(r, r_dark, params, order)
    p0 = afterpulse_invert(r * params.tau, params.p_ap, order)
    p_sig = 1.0 - (1.0 - p0) / (1.0 - p_dc)
    ratio = params.tau_over_period
    r_sig = p_sig / params.tau
    return r_sig / (params.nu_l - r * ratio + r_sig * (ratio - params.blocked_pulses))


def click_rate_for_probability(p0_sig, r_dark, params, order=ApOrder.SECOND):
    """Light-on click rate whose correction yields ``p0_sig``.

    Inverse of :func:`pulse_detection_probability` in ``R`` at fixed dark
    rate, solved by bracketing. Used to build noise-free synthetic data.
    """
    p0_sig = check_probability(p0_sig, "p0_sig")
    order = ApOrder(order)
    p_max = 1.0
    if order is ApOrder.SECOND and params.p_ap > 0:
        p_max = min(1.0, (1.0 + params.p_ap) / (4.0 * params.p_ap))
    hi = p_max / params.tau * (1.0 - 1e-12)
    lo = r_dark

    def f(r):
        return _p0_sig_unchecked(r, r_dark, params, order) - p0_sig

    f_lo = f(lo)
    if f_lo >= 0.0:
        return lo
    # the live-pulse denominator can vanish below hi; shrink until f is finite and positive
    for _ in range(200):
        try:
            f_hi = f(hi)
        except (ZeroDivisionError, NegativeDiscriminant):
            f_hi = math.nan
        if math.isfinite(f_hi) and f_hi > 0.0 and _live_rate(hi, r_dark, params, order) > 0:
            break
        hi = lo + 0.5 * (hi - lo)
    else:
        raise OutOfRange(f"pulse detection probability {p0_sig} is not reachable")
    return brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500)


def _live_rate(r, r_dark, params, order):
    _, _, p_dc = _dark_unchecked(r, r_dark, params, order)
    p0 = afterpulse_invert(r * params.tau, params.p_ap, order)
    r_sig = (1.0 - (1.0 - p0) / (1.0 - p_dc)) / params.tau
    ratio = params.tau_over_period
    return params.nu_l - r * ratio + r_sig * (ratio - params.blocked_pulses)


class PulseDetectionCorrector(TransformerMixin, BaseEstimator):
    """Transform measured click rates into pulse detection probabilities.

    Parameters
    ----------
    tau : float
        Dead time in seconds.
    p_ap : float
        Afterpulse probability.
    nu_l : float, default=100e3
        Laser repetition rate in Hz.
    order : {1, 2}, default=2
        Afterpulse approximation order.
    dark_rate : float or None
        Click rate with the laser off. Required when ``X`` has one column.

    ``X`` holds the light-on rate in column 0 and optionally the dark rate in
    column 1; ``transform`` returns a single column of ``P_det``.
    """

    def __init__(self, tau=5e-6, p_ap=0.0, nu_l=100e3, order=2, dark_rate=None):
        self.tau = tau
        self.p_ap = p_ap
        self.nu_l = nu_l
        self.order = order
        self.dark_rate = dark_rate

    def fit(self, X=None, y=None):
        self.detector_ = DetectorParams(self.tau, self.p_ap, self.nu_l)
        self.order_ = ApOrder(self.order)
        if X is not None:
            X = check_array(X, ensure_2d=True)
            self.n_features_in_ = X.shape[1]
        return self

    def _rates(self, X):
        X = check_array(X, ensure_2d=True)
        if X.shape[1] == 2:
            return X[:, 0], X[:, 1]
        if X.shape[1] != 1:
            raise ValueError(f"X must have 1 or 2 columns, got {X.shape[1]}")
        if self.dark_rate is None:
            raise ValueError("dark_rate is required when X has a single column")
        return X[:, 0], np.full(X.shape[0], float(self.dark_rate))

    def transform(self, X):
        check_is_fitted(self, "detector_")
        r, r_dark = self._rates(X)
        out = np.empty((r.size, 1))
        for i, (a, b) in enumerate(zip(r, r_dark)):
            out[i, 0] = pulse_detection_probability(RawRates(a, b), self.detector_, self.order_).p0_sig
        return out

    def breakdowns(self, X):
        """Per-row :class:`CorrectionBreakdown` objects."""
        check_is_fitted(self, "detector_")
        r, r_dark = self._rates(X)
        return [
            pulse_detection_probability(RawRates(a, b), self.detector_, self.order_)
            for a, b in zip(r, r_dark)
        ]
