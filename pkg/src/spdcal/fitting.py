"""Weighted chi-squared fits of detection-probability models.

Each measurement point is a set of repeated one-second click-rate samples
at one optical power.  The point is corrected for dead time, dark clicks and
afterpulses (``spdcal.correction``) into an observed signal rate
``R0 = nu_l * P_det`` with standard deviation propagated from the sample
scatter.  The model predicts ``R_th = nu_l * P_det(mu)``.  Uncertainty in
``mu`` (power-meter error ``delta_w`` and attenuation error
``delta_alpha``) is carried to the model side by finite differences::

    chi2 = sum (R0_i - R_th_i)**2 / (sigma_R0_i**2 + sigma_p_i**2)

The fit minimizes ``chi2`` with multi-start Nelder-Mead in a unit box and
grades the reduced value ``chi2 / (N - n_params)``.
"""
import enum
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy import constants
from scipy.optimize import minimize
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .correction import ApOrder, DetectorParams, RawRates, pulse_detection_probability
from .exceptions import DegenerateDof, NoConvergence, ParameterOutOfRange
from .models import (
    Dependent,
    Empirical,
    Independent,
    detection_probability,
    eta_k,
    recommended_order,
)
from .validation import check_non_negative, check_positive, check_samples

DEFAULT_DELTA_W = 200e-12
DEFAULT_DELTA_ALPHA = 0.1
DEFAULT_MU_REL_SIGMA = 0.02

W_REL_STEP = 1e-6
ALPHA_STEP_DB = 1e-4
MU_REL_STEP = 1e-6
RATE_REL_STEP = 1e-6

RHO_BOUNDS = (0.5, 5.0)
N_STARTS = 16
XATOL = 1e-10
# scaled coordinates stay this far inside (0, 1) where the bound is open
_OPEN_EDGE = 1e-9
_BOUNDARY_TOL = 1e-6


class Adequacy(str, enum.Enum):
    GOOD = "good"
    MARGINAL = "marginal"
    UNUSABLE = "unusable"


def classify(chi2_reduced):
    """Good at or below 1, unusable at or above 3, marginal in between."""
    if chi2_reduced <= 1.0:
        return Adequacy.GOOD
    if chi2_reduced < 3.0:
        return Adequacy.MARGINAL
    return Adequacy.UNUSABLE


@dataclass(frozen=True)
class OpticsConfig:
    """Attenuation between power meter and detector, and its uncertainties.

    ``mu_rel_sigma`` replaces ``delta_w`` / ``delta_alpha`` for points that
    are given directly as a mean photon number.
    """

    attenuation_db: float = 64.5
    wavelength_m: float = 1550e-9
    delta_w: float = DEFAULT_DELTA_W
    delta_alpha: float = DEFAULT_DELTA_ALPHA
    mu_rel_sigma: float = DEFAULT_MU_REL_SIGMA

    def __post_init__(self):
        check_positive(self.attenuation_db, "attenuation_db")
        check_positive(self.wavelength_m, "wavelength_m")
        check_non_negative(self.delta_w, "delta_w")
        check_non_negative(self.delta_alpha, "delta_alpha")
        check_non_negative(self.mu_rel_sigma, "mu_rel_sigma")

    @property
    def photon_energy(self):
        return constants.h * constants.c / self.wavelength_m


def power_to_mu(power_w, optics, nu_l, attenuation_db=None):
    """Mean photon number per pulse at the detector for meter power ``power_w``.

    ``mu = W 10**(-alpha/10) / (nu_l h c / lambda)``; vectorizes over
    ``power_w`` and ``attenuation_db``.
    """
    alpha = optics.attenuation_db if attenuation_db is None else attenuation_db
    return np.asarray(power_w) * 10.0 ** (-np.asarray(alpha) / 10.0) / (nu_l * optics.photon_energy) + 0.0


def mu_to_power(mu, optics, nu_l):
    """Inverse of :func:`power_to_mu` at the configured attenuation."""
    return np.asarray(mu) * nu_l * optics.photon_energy * 10.0 ** (optics.attenuation_db / 10.0) + 0.0


@dataclass(frozen=True)
class MeasurementPoint:
    """Repeated click-rate samples [Hz] at one power setting (or one ``mu``)."""

    samples: tuple
    power_w: float = None
    mu: float = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(float(s) for s in check_samples(self.samples)))
        if self.power_w is not None and self.mu is not None:
            raise ValueError("give either power_w or mu, not both")
        if self.power_w is not None:
            object.__setattr__(self, "power_w", check_positive(self.power_w, "power_w"))
        if self.mu is not None:
            object.__setattr__(self, "mu", check_non_negative(self.mu, "mu"))

    @property
    def n(self):
        return len(self.samples)

    @property
    def mean(self):
        return float(np.mean(self.samples))

    @property
    def sigma(self):
        """Standard deviation of the mean, ``std(ddof=1) / sqrt(n)``; 0 for one sample."""
        if self.n < 2:
            return 0.0
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.n))

    def mu_value(self, optics, nu_l):
        if self.mu is not None:
            return self.mu
        if self.power_w is None:
            raise ValueError("point has neither power_w nor mu")
        return float(power_to_mu(self.power_w, optics, nu_l))


@dataclass(frozen=True)
class MeasurementSeries:
    """Light-on points sharing one dark measurement, detector and optics.

    Points are kept sorted by ``mu``.
    """

    points: tuple
    dark: MeasurementPoint
    detector: DetectorParams
    optics: OpticsConfig = field(default_factory=OpticsConfig)

    def __post_init__(self):
        pts = tuple(self.points)
        kinds = {p.power_w is not None for p in pts}
        if len(kinds) > 1:
            raise ValueError("points mix power_w and mu")
        pts = tuple(sorted(pts, key=lambda p: p.mu_value(self.optics, self.detector.nu_l)))
        object.__setattr__(self, "points", pts)

    @property
    def uses_power(self):
        return bool(self.points) and self.points[0].power_w is not None

    def mus(self):
        return np.array([p.mu_value(self.optics, self.detector.nu_l) for p in self.points])

    def select(self, mu_lo=0.0, mu_hi=math.inf, rtol=1e-6):
        """Sub-series with ``mu_lo <= mu <= mu_hi`` (bounds widened by ``rtol``)."""
        mus = self.mus()
        keep = (mus >= mu_lo * (1 - rtol)) & (mus <= mu_hi * (1 + rtol))
        return replace(self, points=tuple(p for p, k in zip(self.points, keep) if k))


def correct_point(point, dark, detector, order=ApOrder.SECOND):
    """Corrected signal rate ``nu_l P_det`` [Hz], its standard deviation, and the breakdown.

    The deviation combines the sample scatter of the light-on and dark rates
    through central finite differences of the correction.
    """
    r, r_dark = point.mean, dark.mean

    def y(a, b):
        return detector.nu_l * pulse_detection_probability(RawRates(a, b), detector, order).p0_sig

    breakdown = pulse_detection_probability(RawRates(r, r_dark), detector, order)
    value = detector.nu_l * breakdown.p0_sig
    var = 0.0
    if point.sigma > 0:
        var += (_diff(lambda a: y(a, r_dark), r) * point.sigma) ** 2
    if dark.sigma > 0:
        var += (_diff(lambda b: y(r, b), r_dark) * dark.sigma) ** 2
    return value, math.sqrt(var), breakdown


def _diff(f, x):
    h = RATE_REL_STEP * x if x > 0 else RATE_REL_STEP
    if x - h < 0:
        return (f(x + h) - f(x)) / h
    return (f(x + h) - f(x - h)) / (2 * h)


class WeightedChi2:
    """Chi-squared of a model against corrected observations.

    Works in any rate unit: ``observed`` and ``sigma_obs`` are in the units
    of ``nu_l * P_det``.  Model-side deviation comes from ``power`` with the
    ``optics`` uncertainties when ``power`` is given, otherwise from
    ``mu_rel_sigma * mu``.
    """

    def __init__(self, mu, observed, sigma_obs, nu_l, *, power=None, optics=None, mu_rel_sigma=0.0):
        self.mu = np.asarray(mu, dtype=float)
        self.observed = np.asarray(observed, dtype=float)
        self.sigma_obs = np.asarray(sigma_obs, dtype=float)
        self.nu_l = float(nu_l)
        self.power = None if power is None else np.asarray(power, dtype=float)
        self.optics = optics
        self.mu_rel_sigma = float(mu_rel_sigma)
        if not (self.mu.shape == self.observed.shape == self.sigma_obs.shape):
            raise ValueError("mu, observed and sigma_obs must have equal shapes")
        if self.power is not None:
            if optics is None:
                raise ValueError("optics are required with power")
            alpha, w = optics.attenuation_db, self.power
            hw = W_REL_STEP * w
            self._fd_mu = np.concatenate([
                power_to_mu(w + hw, optics, self.nu_l, alpha),
                power_to_mu(w - hw, optics, self.nu_l, alpha),
                power_to_mu(w, optics, self.nu_l, alpha + ALPHA_STEP_DB),
                power_to_mu(w, optics, self.nu_l, alpha - ALPHA_STEP_DB),
            ])
            self._fd_scale = (optics.delta_w / (2 * hw), np.full_like(w, optics.delta_alpha / (2 * ALPHA_STEP_DB)))
        else:
            hm = MU_REL_STEP * np.maximum(self.mu, MU_REL_STEP)
            self._fd_mu = np.concatenate([self.mu + hm, np.maximum(self.mu - hm, 0.0)])
            self._fd_scale = (self.mu_rel_sigma * self.mu / (self.mu + hm - np.maximum(self.mu - hm, 0.0)),)

    def __len__(self):
        return self.mu.size

    def predict(self, model):
        return self.nu_l * np.asarray(detection_probability(model, self.mu))

    def sigma_model(self, model):
        vals = self.nu_l * np.asarray(detection_probability(model, self._fd_mu))
        parts = vals.reshape(-1, 2, self.mu.size)
        var = np.zeros(self.mu.size)
        for (plus, minus), scale in zip(parts, self._fd_scale):
            var += ((plus - minus) * scale) ** 2
        return np.sqrt(var)

    def residuals(self, model):
        """(observed, predicted, total sigma) per point."""
        pred = self.predict(model)
        sigma = np.sqrt(self.sigma_obs ** 2 + self.sigma_model(model) ** 2)
        return self.observed, pred, sigma

    def __call__(self, model):
        obs, pred, sigma = self.residuals(model)
        var = sigma ** 2
        if np.any(var <= 0):
            raise ValueError("a point has zero total variance; chi2 is undefined")
        return float(np.sum((obs - pred) ** 2 / var))


def series_objective(series, order=ApOrder.SECOND):
    """Build the :class:`WeightedChi2` of a measurement series (rates in Hz)."""
    det = series.detector
    obs, sig = [], []
    for p in series.points:
        value, sigma, _ = correct_point(p, series.dark, det, order)
        obs.append(value)
        sig.append(sigma)
    power = np.array([p.power_w for p in series.points]) if series.uses_power else None
    return WeightedChi2(
        series.mus(), obs, sig, det.nu_l,
        power=power, optics=series.optics, mu_rel_sigma=series.optics.mu_rel_sigma,
    )


def _dof(n_points, n_free):
    dof = n_points - n_free
    if dof <= 0:
        raise DegenerateDof(f"{n_points} points cannot constrain {n_free} free parameters")
    return dof


def chi2(series, model, order=ApOrder.SECOND):
    """``(chi2, chi2_reduced, dof)`` of ``model`` on ``series``."""
    dof = _dof(len(series.points), model.n_params)
    value = series_objective(series, order)(model)
    return value, value / dof, dof


def sigma_model(model, point, optics, detector):
    """Model-side rate deviation [Hz] at one point from power and attenuation uncertainty."""
    mu = point.mu_value(optics, detector.nu_l)
    power = None if point.power_w is None else [point.power_w]
    obj = WeightedChi2([mu], [0.0], [0.0], detector.nu_l, power=power, optics=optics,
                       mu_rel_sigma=optics.mu_rel_sigma)
    return float(obj.sigma_model(model)[0])


class _Parametrization:
    """Maps the unit box onto model parameters.

    Independent: ``eta``.  Empirical: ``(eta, rho * eta)`` so ``rho < 1/eta``
    holds everywhere in the box.  Dependent: ``eta`` and each ``rho_i``
    linearly over ``rho_bounds``.
    """

    def __init__(self, kind, n_rhos=0, rho_bounds=RHO_BOUNDS, fixed_rho=None):
        self.kind = kind
        self.n_rhos = n_rhos if kind == "dependent" else 0
        self.rho_bounds = tuple(float(b) for b in rho_bounds)
        self.fixed_rho = fixed_rho if kind == "empirical" else None
        if fixed_rho is not None and kind != "empirical":
            raise ValueError("fixed_rho applies to the empirical model only")
        if self.rho_bounds[0] <= 0 or self.rho_bounds[0] >= self.rho_bounds[1]:
            raise ValueError(f"invalid rho_bounds {rho_bounds}")

    @property
    def names(self):
        if self.kind == "dependent":
            return ["eta"] + [f"rho_{i}" for i in range(2, self.n_rhos + 2)]
        if self.kind == "empirical" and self.fixed_rho is None:
            return ["eta", "rho"]
        return ["eta"]

    @property
    def dim(self):
        return len(self.names)

    def bounds(self):
        open_ = (_OPEN_EDGE, 1 - _OPEN_EDGE)
        if self.kind == "dependent":
            return [open_] + [(0.0, 1.0)] * self.n_rhos
        return [open_] * self.dim

    def to_model(self, u):
        eta = float(u[0])
        if self.kind == "independent":
            return Independent(eta)
        if self.kind == "empirical":
            rho = self.fixed_rho if self.fixed_rho is not None else float(u[1]) / eta
            return Empirical(eta, rho)
        lo, hi = self.rho_bounds
        return Dependent(eta, tuple(lo + (hi - lo) * float(v) for v in u[1:]))

    def at_boundary(self, u):
        flags = {}
        for name, v, (lo, hi) in zip(self.names, u, self.bounds()):
            flags[name] = bool(v - lo < _BOUNDARY_TOL or hi - v < _BOUNDARY_TOL)
        return flags


@dataclass(frozen=True)
class Residual:
    mu: float
    observed: float
    predicted: float
    sigma_total: float


@dataclass(frozen=True)
class FitResult:
    model: object
    chi2: float
    chi2_reduced: float
    dof: int
    adequacy: Adequacy
    residuals: tuple
    boundary: dict
    nu_l: float = 1.0
    mu_max: float = None
    n_converged: int = 0
    fixed: dict = field(default_factory=dict)

    @property
    def rho_straddles_one(self):
        """Dependent fits whose ``rho_i`` lie on both sides of 1."""
        rhos = getattr(self.model, "rhos", ())
        return any(r > 1 for r in rhos) and any(r < 1 for r in rhos)

    def eta_table(self, n=None):
        if n is None:
            n = 3 if self.mu_max is None else max(3, recommended_order(self.mu_max))
        return [eta_k(self.model, k) for k in range(1, n + 1)]

    def to_report(self):
        """JSON-ready dictionary."""
        return {
            "model": self.model.to_dict(),
            "kind": self.model.kind,
            "parameters": dict(zip(_param_names(self.model), self.model.params)),
            "fixed": dict(self.fixed),
            "boundary": dict(self.boundary),
            "chi2": self.chi2,
            "chi2_reduced": self.chi2_reduced,
            "dof": self.dof,
            "adequacy": self.adequacy.value,
            "n_converged": self.n_converged,
            "rho_straddles_one": self.rho_straddles_one,
            "nu_l": self.nu_l,
            "mu_max": self.mu_max,
            "eta_k": self.eta_table(),
            "residuals": [
                {"mu": r.mu, "observed": r.observed, "predicted": r.predicted, "sigma_total": r.sigma_total}
                for r in self.residuals
            ],
        }


def _param_names(model):
    if isinstance(model, Dependent):
        return ["eta"] + [f"rho_{i}" for i in range(2, len(model.rhos) + 2)]
    if isinstance(model, Empirical):
        return ["eta", "rho"]
    return ["eta"]


def _n_jobs(n_jobs):
    if n_jobs is not None:
        return n_jobs
    env = os.environ.get("PCC_THREADS")
    return max(1, int(env)) if env else 1


def _safe(objective, param, u):
    try:
        return objective(param.to_model(u))
    except ParameterOutOfRange:
        return math.inf


def _local_search(objective, param, u0, maxiter):
    bounds = param.bounds()
    d = len(u0)
    simplex = [np.array(u0, dtype=float)]
    for j in range(d):
        v = simplex[0].copy()
        lo, hi = bounds[j]
        step = 0.05 if v[j] + 0.05 <= hi else -0.05
        v[j] = min(max(v[j] + step, lo), hi)
        simplex.append(v)
    res = minimize(
        lambda u: _safe(objective, param, u),
        u0,
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "initial_simplex": np.array(simplex),
            "xatol": XATOL,
            "fatol": math.inf,
            "maxiter": maxiter,
            "maxfev": 2 * maxiter,
        },
    )
    return res.x, float(res.fun), bool(res.success) and math.isfinite(res.fun)


def _starts(objective, param, n_starts, seed):
    sampler = qmc.Sobol(param.dim, scramble=True, seed=seed)
    candidates = 0.02 + 0.96 * sampler.random(max(64, 4 * n_starts))
    starts = [u for u in candidates if math.isfinite(_safe(objective, param, u))]
    return starts[:n_starts]


def minimize_chi2(objective, kind, *, n_rhos=0, rho_bounds=RHO_BOUNDS, fixed_rho=None,
                  n_starts=N_STARTS, seed=0, maxiter=20000, n_jobs=None, mu_max=None):
    """Multi-start bounded Nelder-Mead on a :class:`WeightedChi2`.

    The best converged start wins; ties go to the lexicographically smaller
    parameter vector, so the outcome does not depend on execution order.
    """
    param = _Parametrization(kind, n_rhos, rho_bounds, fixed_rho)
    _dof(len(objective), param.dim)
    starts = _starts(objective, param, n_starts, seed)
    if not starts:
        raise NoConvergence("no start gives finite chi2")
    runs = Parallel(n_jobs=_n_jobs(n_jobs), prefer="threads")(
        delayed(_local_search)(objective, param, u0, maxiter) for u0 in starts
    )
    converged = [(f, tuple(u)) for u, f, ok in runs if ok]
    if not converged:
        raise NoConvergence(f"none of {len(starts)} Nelder-Mead starts converged")
    _, u_best = min(converged)
    fixed = {} if param.fixed_rho is None else {"rho": param.fixed_rho}
    return evaluate(
        objective, param.to_model(u_best), mu_max, n_free=param.dim,
        boundary=param.at_boundary(u_best), n_converged=len(converged), fixed=fixed,
    )


def evaluate(objective, model, mu_max=None, *, n_free=None, boundary=None, n_converged=0, fixed=None):
    """:class:`FitResult` for given parameters; ``n_free`` defaults to all model parameters."""
    dof = _dof(len(objective), model.n_params if n_free is None else n_free)
    value = objective(model)
    obs, pred, sigma = objective.residuals(model)
    residuals = tuple(
        Residual(float(m), float(o), float(p), float(s))
        for m, o, p, s in zip(objective.mu, obs, pred, sigma)
    )
    return FitResult(
        model=model,
        chi2=value,
        chi2_reduced=value / dof,
        dof=dof,
        adequacy=classify(value / dof),
        residuals=residuals,
        boundary={} if boundary is None else boundary,
        nu_l=objective.nu_l,
        mu_max=mu_max,
        n_converged=n_converged,
        fixed={} if fixed is None else fixed,
    )


def fit(series, kind, mu_max=None, order=ApOrder.SECOND, *, n_rhos=None, rho_bounds=RHO_BOUNDS,
        fixed_rho=None, n_starts=N_STARTS, seed=0, n_jobs=None):
    """Fit one model family to the points of ``series`` with ``mu <= mu_max``.

    For the Dependent family ``n_rhos`` defaults to
    ``recommended_order(mu_max) - 1``.
    """
    if kind not in ("independent", "dependent", "empirical"):
        raise ValueError(f"unknown model kind {kind!r}")
    if mu_max is None:
        mu_max = float(series.mus().max()) if series.points else 0.0
    sub = series.select(0.0, mu_max)
    if kind == "dependent" and n_rhos is None:
        n_rhos = recommended_order(mu_max) - 1
    objective = series_objective(sub, order)
    return minimize_chi2(
        objective, kind, n_rhos=n_rhos or 0, rho_bounds=rho_bounds, fixed_rho=fixed_rho,
        n_starts=n_starts, seed=seed, n_jobs=n_jobs, mu_max=mu_max,
    )


class DetectionModelRegressor(RegressorMixin, BaseEstimator):
    """Fit ``P_det(mu)`` of one model family by weighted chi-squared.

    ``X`` is a single column of mean photon numbers, ``y`` the measured
    detection probabilities and ``sigma`` their standard deviations.
    ``mu_rel_sigma`` adds model-side uncertainty from a relative error on
    ``mu``.

    Attributes
    ----------
    model_ : PdeModel
    result_ : FitResult
    chi2_, chi2_reduced_, dof_, adequacy_
    """

    def __init__(self, kind="independent", mu_max=None, n_rhos=None, rho_bounds=RHO_BOUNDS,
                 fixed_rho=None, mu_rel_sigma=0.0, n_starts=N_STARTS, random_state=0, n_jobs=None):
        self.kind = kind
        self.mu_max = mu_max
        self.n_rhos = n_rhos
        self.rho_bounds = rho_bounds
        self.fixed_rho = fixed_rho
        self.mu_rel_sigma = mu_rel_sigma
        self.n_starts = n_starts
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, sigma=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("X must be a single column of mean photon numbers")
        mu = X[:, 0]
        sigma = np.zeros_like(y) if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)
        mu_max = float(mu.max()) if self.mu_max is None else float(self.mu_max)
        keep = mu <= mu_max * (1 + 1e-6)
        n_rhos = self.n_rhos
        if self.kind == "dependent" and n_rhos is None:
            n_rhos = recommended_order(mu_max) - 1
        objective = WeightedChi2(mu[keep], y[keep], sigma[keep], 1.0, mu_rel_sigma=self.mu_rel_sigma)
        self.result_ = minimize_chi2(
            objective, self.kind, n_rhos=n_rhos or 0, rho_bounds=self.rho_bounds,
            fixed_rho=self.fixed_rho, n_starts=self.n_starts, seed=self.random_state,
            n_jobs=self.n_jobs, mu_max=mu_max,
        )
        self.model_ = self.result_.model
        self.chi2_ = self.result_.chi2
        self.chi2_reduced_ = self.result_.chi2_reduced
        self.dof_ = self.result_.dof
        self.adequacy_ = self.result_.adequacy
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return np.asarray(detection_probability(self.model_, X[:, 0]), dtype=float)
