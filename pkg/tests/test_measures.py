"""Market price of risk, density and growth-portfolio tests."""

import numpy as np
import pytest

from memdelta.engine import euler_solve, generate_noise_block
from memdelta.greeks import Estimate, McParams, Payoff, price, price_risk_neutral_qdrift
from memdelta.measures import (
    SingularVolatilityError,
    benchmarked_martingale_diag,
    dtheta,
    market_price_of_risk,
    q_drift_model,
    simulate_measures,
)
from memdelta.models import bs_model, kp_params
from memdelta.segment import constant_direction, segment_from_closed_form


class TestTheta:
    def test_bs_constant_theta_and_zero_derivative(self, bs_setup):
        model, eta, h, r, _ = bs_setup
        th = market_price_of_risk(model, 0.3, eta)
        assert th == pytest.approx((0.1 - 0.05) / 0.2)
        d = dtheta(model, 0.3, eta, constant_direction(h, r, 1))
        assert np.all(d == 0.0)

    def test_theta_vanishes_when_drift_equals_rate(self):
        model = bs_model(0.05, 0.2, r=0.25, rate=0.05)
        eta = segment_from_closed_form("constant", {"value": 10.0}, 0.0625, 0.25)
        assert market_price_of_risk(model, 0.0, eta) == pytest.approx(0.0)

    def test_kp_theta_derivative_reads_delayed_factor(self, kp_setup):
        model, eta, h, r, _ = kp_setup
        p = kp_params(model)
        psi = constant_direction(h, r, 2, 1)
        got = dtheta(model, 0.2, eta, psi)
        expected = -p.c1 * psi.phi[0, 1] / p.c3
        assert got == pytest.approx(expected, rel=1e-12)

    def test_singular_volatility_raises(self):
        from dataclasses import replace
        model = bs_model(0.1, 0.2, r=0.25)
        broken = replace(model, vol_sigma=lambda t, seg: np.zeros(seg.v.shape[:-1]))
        eta = segment_from_closed_form("constant", {"value": 1.0}, 0.0625, 0.25)
        with pytest.raises(SingularVolatilityError):
            market_price_of_risk(broken, 0.0, eta)


class TestMeasurePaths:
    def test_zero_theta_gives_unit_density_and_bond_growth(self):
        # mu == rate: no risk premium, the growth portfolio is the bond
        h, r, T = 2.0 ** -5, 0.25, 0.5
        model = bs_model(0.05, 0.2, r=r, rate=0.05)
        eta = segment_from_closed_form("constant", {"value": 10.0}, h, r)
        noise = generate_noise_block(0, 0, 64, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise)
        meas = simulate_measures(model, path, noise)
        np.testing.assert_allclose(meas.M_T(), 1.0, atol=1e-14)
        np.testing.assert_allclose(meas.G_T(), meas.B_T(), rtol=1e-14)

    def test_density_is_mean_one(self, bs_setup):
        model, eta, h, r, T = bs_setup
        noise = generate_noise_block(21, 0, 100_000, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise)
        meas = simulate_measures(model, path, noise)
        est = Estimate.from_samples(meas.M_T())
        assert abs(est.mean - 1.0) <= 3.0 * est.stderr

    @pytest.mark.parametrize("which", ["bs", "kp", "ahmp"])
    def test_log_identity_every_grid_time(self, which, bs_setup, kp_setup, ahmp_setup):
        # log M + log G - log B telescopes to zero at every grid time
        model, eta, h, r, T = {"bs": bs_setup, "kp": kp_setup, "ahmp": ahmp_setup}[which]
        noise = generate_noise_block(3, 0, 64, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise)
        meas = simulate_measures(model, path, noise)
        resid = meas.logM + meas.logG - meas.logB
        assert np.max(np.abs(resid)) < 1e-12


class TestBenchmarkedDiagnostics:
    def test_initial_time_exact(self, bs_setup):
        model, eta, h, r, T = bs_setup
        noise = generate_noise_block(4, 0, 500, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise, stepping="log_euler")
        meas = simulate_measures(model, path, noise)
        diag = benchmarked_martingale_diag(model, path, meas, [0.0])
        assert diag["mean"][0] == diag["initial"]

    def test_benchmarked_price_keeps_initial_mean(self, bs_setup):
        model, eta, h, r, T = bs_setup
        noise = generate_noise_block(5, 0, 100_000, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise, stepping="log_euler")
        meas = simulate_measures(model, path, noise)
        diag = benchmarked_martingale_diag(model, path, meas, [0.5, 1.0])
        assert not any(diag["violation"])

    def test_unit_claim_hedge_value(self, bs_setup):
        # E[1 / G(T)] equals the discount factor
        model, eta, h, r, T = bs_setup
        noise = generate_noise_block(6, 0, 100_000, int(T / h), 1, h)
        path = euler_solve(model, eta, T, h, noise, stepping="log_euler")
        meas = simulate_measures(model, path, noise)
        est = Estimate.from_samples(1.0 / meas.G_T())
        assert abs(est.mean - np.exp(-0.05 * T)) <= 3.0 * est.stderr


class TestGirsanovConsistency:
    @pytest.mark.parametrize("which", ["bs", "ahmp", "kp"])
    def test_rn_price_two_ways(self, which, bs_setup, ahmp_setup, kp_setup):
        model, eta, h, r, T = {"bs": bs_setup, "kp": kp_setup, "ahmp": ahmp_setup}[which]
        strike = float(eta.v[0])
        payoff = Payoff("european_call", strike)
        mc = McParams(n_paths=40_000, T=T, h=h, seed=31)
        weighted = price(model, eta, payoff, "risk_neutral", mc)
        shifted = price_risk_neutral_qdrift(model, eta, payoff, mc)
        assert abs(weighted.mean - shifted.mean) <= 3.0 * (weighted.stderr + shifted.stderr)

    def test_qdrift_twin_grows_at_short_rate(self, bs_setup):
        model, eta, h, r, T = bs_setup
        q = q_drift_model(model)
        assert q.drift_mu(0.0, eta) == pytest.approx(0.05)
        seg = segment_from_closed_form("constant", {"value": 50.0}, h, r)
        np.testing.assert_allclose(q.drift(0.0, seg), 0.05 * seg.v, atol=1e-12)
