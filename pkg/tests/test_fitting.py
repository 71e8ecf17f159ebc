import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from spdcal.correction import DetectorParams
from spdcal.exceptions import DegenerateDof
from spdcal.fitting import (
    Adequacy,
    DetectionModelRegressor,
    MeasurementPoint,
    MeasurementSeries,
    OpticsConfig,
    WeightedChi2,
    chi2,
    classify,
    evaluate,
    fit,
    minimize_chi2,
    mu_to_power,
    power_to_mu,
    series_objective,
    sigma_model,
)
from spdcal.models import Dependent, Empirical, Independent, detection_probability
from spdcal.simulator import generate_series

OPTICS = OpticsConfig()
NU_L = 100e3
SPD1 = DetectorParams(4.7e-6, 0.032, NU_L)
SPD2 = DetectorParams(5.4e-6, 0.006, NU_L)
MU2 = np.round(np.arange(1, 21) * 0.1, 10)


@pytest.fixture(scope="module")
def empirical_expected():
    """Noise-free SPD2-regime series, counting noise replaced by a 0.5 % spread."""
    base = generate_series(Empirical(0.152, 2.897), MU2, SPD2, OPTICS, dcr_hz=300.0, n_samples=2, expected=True)
    pts = tuple(MeasurementPoint((p.mean * 0.995, p.mean * 1.005), power_w=p.power_w) for p in base.points)
    return MeasurementSeries(pts, base.dark, SPD2, OPTICS)


@pytest.fixture(scope="module")
def noisy_series():
    return generate_series(Empirical(0.161, 3.726), MU2[:10], SPD2, OPTICS, dcr_hz=300.0,
                           n_samples=20, window_s=0.2, seed=11)


class TestPowerToMu:
    def test_anchors(self):
        assert power_to_mu(3.6e-9, OPTICS, NU_L) == pytest.approx(0.0997, abs=1e-4)
        assert power_to_mu(36e-9, OPTICS, NU_L) == pytest.approx(0.997, abs=1e-3)

    def test_total_attenuation(self):
        assert power_to_mu(1e-3, OPTICS, NU_L, attenuation_db=400.0) < 1e-20

    def test_inverse(self):
        mu = np.array([0.1, 0.5, 2.0])
        assert np.allclose(power_to_mu(mu_to_power(mu, OPTICS, NU_L), OPTICS, NU_L), mu, rtol=1e-14)


class TestPoint:
    def test_sigma_of_mean(self):
        p = MeasurementPoint([1.0, 2.0, 3.0, 4.0], mu=0.1)
        assert p.mean == 2.5
        assert p.sigma == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_single_sample(self):
        assert MeasurementPoint([5.0], mu=0.1).sigma == 0.0

    def test_rejects(self):
        with pytest.raises(ValueError):
            MeasurementPoint([], mu=0.1)
        with pytest.raises(ValueError):
            MeasurementPoint([1.0], mu=0.1, power_w=1e-9)
        with pytest.raises(ValueError):
            MeasurementPoint([1.0], power_w=0.0)

    def test_series_sorted(self):
        pts = [MeasurementPoint([1.0], mu=m) for m in (0.3, 0.1, 0.2)]
        s = MeasurementSeries(pts, MeasurementPoint([0.0]), SPD1)
        assert list(s.mus()) == [0.1, 0.2, 0.3]


class TestSigmaModel:
    def test_zero_deviations(self):
        optics = OpticsConfig(delta_w=0.0, delta_alpha=0.0)
        point = MeasurementPoint([1.0], power_w=3.6e-9)
        assert sigma_model(Independent(0.2), point, optics, SPD1) == 0.0

    def test_linearization(self):
        optics = OpticsConfig(delta_alpha=0.0)
        w = 1e-9
        point = MeasurementPoint([1.0], power_w=w)
        mu = power_to_mu(w, optics, NU_L)
        eta = 0.2
        analytic = optics.delta_w * (mu / w) * eta * math.exp(-eta * mu) * NU_L
        got = sigma_model(Independent(eta), point, optics, SPD1)
        assert got == pytest.approx(analytic, rel=1e-4)

    def test_delta_w_is_linear(self):
        point = MeasurementPoint([1.0], power_w=3.6e-9)
        m = Independent(0.2)
        only_w = OpticsConfig(delta_alpha=0.0)
        doubled = OpticsConfig(delta_alpha=0.0, delta_w=2 * only_w.delta_w)
        assert sigma_model(m, point, doubled, SPD1) == pytest.approx(2 * sigma_model(m, point, only_w, SPD1), rel=1e-9)

    def test_quadrature(self):
        point = MeasurementPoint([1.0], power_w=3.6e-9)
        m = Independent(0.2)
        a = sigma_model(m, point, OpticsConfig(delta_alpha=0.0), SPD1)
        b = sigma_model(m, point, OpticsConfig(delta_w=0.0), SPD1)
        assert sigma_model(m, point, OPTICS, SPD1) == pytest.approx(math.hypot(a, b), rel=1e-12)

    def test_mu_points_use_relative_sigma(self):
        point = MeasurementPoint([1.0], mu=0.5)
        m = Independent(0.2)
        want = 0.02 * 0.5 * 0.2 * math.exp(-0.1) * NU_L
        assert sigma_model(m, point, OPTICS, SPD1) == pytest.approx(want, rel=1e-6)


class TestChi2:
    def test_exact_model_is_zero(self):
        m = Independent(0.2)
        mu = np.linspace(0.1, 1, 10)
        obj = WeightedChi2(mu, NU_L * detection_probability(m, mu), np.ones(10), NU_L)
        assert obj(m) == 0.0

    def test_doubling_sigma_quarters(self):
        mu = np.linspace(0.1, 1, 10)
        obs = NU_L * detection_probability(Independent(0.21), mu)
        a = WeightedChi2(mu, obs, np.full(10, 3.0), NU_L)(Independent(0.2))
        b = WeightedChi2(mu, obs, np.full(10, 6.0), NU_L)(Independent(0.2))
        assert b == pytest.approx(a / 4, rel=1e-14)

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            WeightedChi2([0.1], [1.0], [0.0], NU_L)(Independent(0.2))

    def test_dof(self, noisy_series):
        c, cr, dof = chi2(noisy_series, Independent(0.14))
        assert dof == 9 and cr == pytest.approx(c / 9)

    def test_degenerate_dof(self, noisy_series):
        two = MeasurementSeries(noisy_series.points[:2], noisy_series.dark, SPD2, OPTICS)
        with pytest.raises(DegenerateDof):
            chi2(two, Dependent(0.15, (1.0, 1.0)))
        with pytest.raises(DegenerateDof):
            fit(two, "dependent", n_rhos=2)

    @settings(max_examples=20, deadline=None)
    @given(st.permutations(range(10)))
    def test_order_invariant(self, perm):
        mu = np.linspace(0.1, 1, 10)
        obs = NU_L * detection_probability(Independent(0.21), mu) * (1 + 0.01 * np.sin(mu * 7))
        sig = 10 + mu
        m = Empirical(0.2, 1.3)
        a = WeightedChi2(mu, obs, sig, NU_L, mu_rel_sigma=0.02)(m)
        p = list(perm)
        b = WeightedChi2(mu[p], obs[p], sig[p], NU_L, mu_rel_sigma=0.02)(m)
        assert b == pytest.approx(a, rel=1e-13)


class TestClassify:
    @pytest.mark.parametrize("x,want", [(0.0, Adequacy.GOOD), (1.0, Adequacy.GOOD), (1.0001, Adequacy.MARGINAL),
                                        (2.999, Adequacy.MARGINAL), (3.0, Adequacy.UNUSABLE)])
    def test_thresholds(self, x, want):
        assert classify(x) is want


class TestFit:
    def test_noiseless_independent_recovery(self):
        mu = np.linspace(0.1, 2, 20)
        y = detection_probability(Independent(0.2), mu)
        reg = DetectionModelRegressor("independent").fit(mu[:, None], y, sigma=1e-4)
        assert reg.model_.eta == pytest.approx(0.2, abs=1e-6)
        assert reg.chi2_reduced_ < 1e-6
        assert reg.adequacy_ is Adequacy.GOOD

    def test_expected_empirical_recovery(self, empirical_expected):
        res = fit(empirical_expected, "empirical")
        assert res.model.eta == pytest.approx(0.152, rel=1e-6)
        assert res.model.rho == pytest.approx(2.897, rel=1e-6)
        assert res.chi2 < 1e-8

    def test_independent_is_unusable_on_correlated_data(self, empirical_expected):
        assert fit(empirical_expected, "independent").adequacy is Adequacy.UNUSABLE

    def test_self_consistency(self, noisy_series):
        res = fit(noisy_series, "empirical", seed=2)
        assert chi2(noisy_series, res.model)[0] == pytest.approx(res.chi2, rel=1e-12, abs=1e-12)
        assert res.chi2_reduced == res.chi2 / res.dof

    def test_frozen_rho_reproduces_independent(self, noisy_series):
        a = fit(noisy_series, "independent")
        b = fit(noisy_series, "empirical", fixed_rho=1.0)
        assert b.chi2 == pytest.approx(a.chi2, abs=1e-9)
        assert b.dof == a.dof
        assert b.to_report()["fixed"] == {"rho": 1.0}

    def test_deterministic(self, noisy_series):
        a = fit(noisy_series, "dependent", seed=5, n_jobs=1)
        b = fit(noisy_series, "dependent", seed=5, n_jobs=3)
        assert a.model == b.model and a.chi2 == b.chi2

    def test_on_curve_point_keeps_chi2(self, noisy_series):
        res = fit(noisy_series, "empirical")
        obj = series_objective(noisy_series)
        mu_new = 0.55
        extra = WeightedChi2(
            np.append(obj.mu, mu_new), np.append(obj.observed, NU_L * detection_probability(res.model, mu_new)),
            np.append(obj.sigma_obs, 5.0), NU_L,
            power=np.append(obj.power, mu_to_power(mu_new, OPTICS, NU_L)), optics=OPTICS,
        )
        before = evaluate(obj, res.model)
        after = evaluate(extra, res.model)
        assert after.dof == before.dof + 1
        assert after.chi2 <= before.chi2 + 1e-9
        assert after.chi2_reduced <= before.chi2_reduced

    def test_dependent_lower_bound_flag(self):
        # rho_2 far below the box pushes the fit onto rho_2 = 0.5
        truth = Dependent(0.2, (0.2, 1.0))
        mu = np.linspace(0.1, 1, 10)
        y = detection_probability(truth, mu)
        reg = DetectionModelRegressor("dependent").fit(mu[:, None], y, sigma=1e-5)
        assert reg.result_.boundary["rho_2"]
        assert reg.model_.rhos[0] == pytest.approx(0.5, abs=1e-5)

    def test_rho_straddle_flag(self):
        mu = np.linspace(0.1, 1, 10)
        y = detection_probability(Dependent(0.251, (1.157, 0.8)), mu)
        reg = DetectionModelRegressor("dependent", n_rhos=2).fit(mu[:, None], y, sigma=1e-6)
        assert reg.result_.rho_straddles_one

    def test_report_layout(self, noisy_series):
        rep = fit(noisy_series, "dependent", 1.0).to_report()
        assert rep["kind"] == "dependent"
        assert len(rep["eta_k"]) == 3
        assert set(rep["parameters"]) == {"eta", "rho_2", "rho_3"}
        assert set(rep["boundary"]) == set(rep["parameters"])
        assert len(rep["residuals"]) == 10
        assert rep["adequacy"] in {"good", "marginal", "unusable"}

    def test_pcc_threads(self, noisy_series, monkeypatch):
        monkeypatch.setenv("PCC_THREADS", "2")
        a = fit(noisy_series, "independent")
        monkeypatch.setenv("PCC_THREADS", "1")
        assert fit(noisy_series, "independent").chi2 == a.chi2

    def test_unknown_kind(self, noisy_series):
        with pytest.raises(ValueError):
            fit(noisy_series, "other")


class TestRegressor:
    def test_params_and_clone(self):
        reg = DetectionModelRegressor("empirical", mu_max=1.0, random_state=4)
        assert clone(reg).get_params() == reg.get_params()

    def test_predict(self):
        mu = np.linspace(0.1, 1, 10)
        y = detection_probability(Empirical(0.16, 2.8), mu)
        reg = DetectionModelRegressor("empirical").fit(mu[:, None], y, sigma=1e-4)
        assert np.allclose(reg.predict(mu[:, None]), y, atol=1e-8)
        assert reg.score(mu[:, None], y) > 0.999999

    def test_rejects_two_columns(self):
        with pytest.raises(ValueError):
            DetectionModelRegressor().fit(np.ones((5, 2)), np.ones(5))

    def test_minimize_directly(self):
        mu = np.linspace(0.1, 1, 10)
        obj = WeightedChi2(mu, detection_probability(Independent(0.3), mu), np.full(10, 1e-3), 1.0)
        res = minimize_chi2(obj, "independent", seed=1)
        assert res.model.eta == pytest.approx(0.3, abs=1e-8)
        assert res.n_converged >= 1
