"""Detection-probability models for coherent (Poisson) light pulses.

A pulse with mean photon number ``mu`` holds ``k`` photons with Poisson
probability; a ``k``-photon pulse is detected with probability ``eta_k``.
Three families of ``eta_k`` are provided:

``Independent(eta)``
    photons detected independently, ``eta_k = 1 - (1 - eta)**k``.
``Dependent(eta, rhos)``
    after ``i - 1`` undetected photons the ``i``-th is detected with
    probability ``rho_i * eta`` (``rho_1 = 1``), so
    ``eta_k = 1 - prod_i (1 - rho_i eta)``.  ``rho_i`` past the supplied
    list default to 1.
``Empirical(eta, rho)``
    ``eta_k = (1 - (1 - rho eta)**k) / rho``, which sums in closed form to
    ``P_det = (1 - exp(-rho eta mu)) / rho``.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, pdtrc

from .exceptions import ParameterOutOfRange
from .validation import check_non_negative, check_positive, check_scalar_finite

#: Poisson tail mass neglected when summing eta_k series
TAIL_TOL = 1e-12
# tail actually used for P_det sums, so the summed round-off stays well inside TAIL_TOL
_SUM_TAIL = 1e-16
#: eta_k may exceed 1 by this much from round-off
ETA_K_TOL = 1e-12

# anchors (mu, number of eta_k worth fitting) read off the photon-number distributions
_ORDER_LADDER = ((0.1, 1), (0.5, 2), (1.0, 3), (1.5, 5), (2.0, 6))
_ORDER_TAIL_ABOVE_LADDER = 1e-2


def poisson_pmf(mu, k):
    """``mu**k exp(-mu) / k!``, evaluated in log space. Vectorizes over ``mu`` and ``k``."""
    mu = np.asarray(mu, dtype=float)
    k = np.asarray(k)
    if np.any(mu < 0):
        raise ValueError("mu must be >= 0")
    if np.any(k < 0):
        raise ValueError("k must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = k * np.log(mu) - mu - gammaln(k + 1.0)
    out = np.where(mu == 0, np.where(k == 0, 1.0, 0.0), np.exp(logp))
    return float(out) if out.ndim == 0 else out


def poisson_truncation(mu, tol=TAIL_TOL):
    """Smallest ``K`` with Poisson tail mass ``P(k > K) < tol``."""
    mu = check_non_negative(mu, "mu")
    if mu == 0:
        return 0
    k = int(mu)
    while k > 0 and pdtrc(k - 1, mu) < tol:
        k -= 1
    while pdtrc(k, mu) >= tol:
        k += 1
    return k


def recommended_order(mu):
    """How many ``eta_k`` carry weight at this ``mu`` (the Dependent model fits ``rho_2..rho_K``).

    Follows the ladder 0.1 -> 1, 0.5 -> 2, 1 -> 3, 1.5 -> 5, 2 -> 6, taking
    the first anchor at or above ``mu``.  Beyond ``mu = 2`` the order is the
    smallest ``K >= 6`` whose Poisson tail is below 1 %.
    """
    mu = check_non_negative(mu, "mu")
    for anchor, order in _ORDER_LADDER:
        if mu <= anchor + 1e-12:
            return order
    return max(_ORDER_LADDER[-1][1], poisson_truncation(mu, _ORDER_TAIL_ABOVE_LADDER))


class PdeModel:
    """Common interface of the three model families."""

    kind = None

    @property
    def n_params(self):
        return len(self.params)

    def eta_k(self, k):
        return eta_k(self, k)

    def detection_probability(self, mu):
        return detection_probability(self, mu)

    def eta_table(self, n):
        """``[eta_1, ..., eta_n]``."""
        return [eta_k(self, k) for k in range(1, n + 1)]

    def to_dict(self):
        raise NotImplementedError


def _check_eta(eta):
    eta = check_scalar_finite(eta, "eta")
    if not 0.0 < eta < 1.0:
        raise ParameterOutOfRange(f"eta must lie in (0, 1), got {eta}")
    return eta


@dataclass(frozen=True)
class Independent(PdeModel):
    eta: float
    kind = "independent"

    def __post_init__(self):
        object.__setattr__(self, "eta", _check_eta(self.eta))

    @property
    def params(self):
        return (self.eta,)

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta}


@dataclass(frozen=True)
class Dependent(PdeModel):
    eta: float
    rhos: tuple = ()
    kind = "dependent"

    def __post_init__(self):
        object.__setattr__(self, "eta", _check_eta(self.eta))
        rhos = tuple(check_scalar_finite(r, "rho") for r in self.rhos)
        if any(r <= 0 for r in rhos):
            raise ParameterOutOfRange(f"every rho_i must be > 0, got {rhos}")
        object.__setattr__(self, "rhos", rhos)

    @property
    def params(self):
        return (self.eta, *self.rhos)

    def rho(self, i):
        """``rho_i`` for ``i >= 1``; ``rho_1 = 1`` and unfitted ones are 1."""
        if i == 1 or i - 2 >= len(self.rhos):
            return 1.0
        return self.rhos[i - 2]

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta, "rhos": list(self.rhos)}


@dataclass(frozen=True)
class Empirical(PdeModel):
    eta: float
    rho: float
    kind = "empirical"

    def __post_init__(self):
        object.__setattr__(self, "eta", _check_eta(self.eta))
        rho = check_positive(self.rho, "rho")
        if rho * self.eta >= 1.0:
            raise ParameterOutOfRange(f"rho * eta must be < 1, got {rho * self.eta}")
        object.__setattr__(self, "rho", rho)

    @property
    def params(self):
        return (self.eta, self.rho)

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta, "rho": self.rho}


MODEL_KINDS = {cls.kind: cls for cls in (Independent, Dependent, Empirical)}


def model_from_dict(d):
    """Inverse of ``PdeModel.to_dict``."""
    kind = d.get("kind")
    if kind == "independent":
        return Independent(d["eta"])
    if kind == "dependent":
        return Dependent(d["eta"], tuple(d.get("rhos", ())))
    if kind == "empirical":
        return Empirical(d["eta"], d["rho"])
    raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")


def _dependent_etas(model, k_max):
    """``eta_1..eta_k_max`` for a Dependent model as an array.

    Runs of equal factors ``1 - rho_i eta`` are raised to a power rather than
    multiplied out, so all-ones ``rho`` reproduces the Independent model exactly.
    """
    out = np.empty(k_max)
    base = 1.0
    run_factor = None
    run_start = 1
    for k in range(1, k_max + 1):
        factor = 1.0 - model.rho(k) * model.eta
        if factor < 0:
            raise ParameterOutOfRange(f"rho_{k} * eta = {model.rho(k) * model.eta} exceeds 1")
        if factor != run_factor:
            if run_factor is not None:
                base = base * run_factor ** (k - run_start)
            run_factor = factor
            run_start = k
        out[k - 1] = 1.0 - base * run_factor ** (k - run_start + 1)
    return out


def eta_k(model, k):
    """Detection probability of a pulse holding exactly ``k >= 1`` photons."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k!r}")
    k = int(k)
    if isinstance(model, Independent):
        val = 1.0 - (1.0 - model.eta) ** k
    elif isinstance(model, Empirical):
        val = (1.0 - (1.0 - model.rho * model.eta) ** k) / model.rho
    elif isinstance(model, Dependent):
        val = float(_dependent_etas(model, k)[-1])
    else:
        raise TypeError(f"not a PdeModel: {model!r}")
    if val > 1.0 + ETA_K_TOL:
        raise ParameterOutOfRange(f"eta_{k} = {val} exceeds 1")
    return val


def detection_probability(model, mu):
    """Probability that a pulse of mean photon number ``mu`` is detected.

    Scalars give a float, arrays an array of the same shape.  The Dependent
    model is summed over photon numbers until the neglected Poisson tail is
    far below ``TAIL_TOL``.
    """
    mu_arr = np.asarray(mu, dtype=float)
    if np.any(~np.isfinite(mu_arr)) or np.any(mu_arr < 0):
        raise ValueError("mu must be finite and >= 0")
    if isinstance(model, Independent):
        out = -np.expm1(-model.eta * mu_arr)
    elif isinstance(model, Empirical):
        out = -np.expm1(-model.rho * model.eta * mu_arr) / model.rho
    elif isinstance(model, Dependent):
        out = dependent_series(model, mu_arr)
    else:
        raise TypeError(f"not a PdeModel: {model!r}")
    return float(out) if out.ndim == 0 else out


def dependent_series(model, mu, k_max=None):
    """``sum_{k=1..k_max} pmf(mu, k) eta_k``; by default ``k_max`` leaves a tail below 1e-16."""
    mu = np.asarray(mu, dtype=float)
    if k_max is None:
        k_max = max(1, poisson_truncation(float(mu.max(initial=0.0)), _SUM_TAIL))
    etas = _dependent_etas(model, k_max)
    k = np.arange(1, k_max + 1)
    pmf = poisson_pmf(mu[..., None], k)
    return pmf @ etas
