"""Shared fixtures: reference models, closed-form oracles, quadrature harness."""

import math

import numpy as np
import pytest

from memdelta.engine import NoiseGrid, euler_solve
from memdelta.greeks import Payoff
from memdelta.measures import simulate_measures
from memdelta.models import ahmp_model, bs_model, kp_initial_segment, kp_model
from memdelta.segment import SegmentGrid, segment_from_closed_form, segment_of_path


def norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bs_call_price(s0, k, vol, rate, T):
    d1 = (math.log(s0 / k) + (rate + 0.5 * vol * vol) * T) / (vol * math.sqrt(T))
    d2 = d1 - vol * math.sqrt(T)
    return s0 * norm_cdf(d1) - k * math.exp(-rate * T) * norm_cdf(d2)


def bs_call_delta(s0, k, vol, rate, T):
    d1 = (math.log(s0 / k) + (rate + 0.5 * vol * vol) * T) / (vol * math.sqrt(T))
    return norm_cdf(d1)


@pytest.fixture
def bs_setup():
    h, r, T = 2.0 ** -6, 0.5, 1.0
    model = bs_model(0.1, 0.2, r=r, rate=0.05)
    eta = segment_from_closed_form("constant", {"value": 100.0}, h, r)
    return model, eta, h, r, T


@pytest.fixture
def kp_setup():
    h, r, T = 2.0 ** -6, 0.5, 1.0
    model = kp_model(1.2, 0.8, 0.05, 0.4, 0.3, r, rate=0.03)
    eta_y = segment_from_closed_form("linear", {"value": 0.1, "slope": 0.2}, h, r)
    eta = kp_initial_segment(model, eta_y)
    return model, eta, h, r, T


@pytest.fixture
def ahmp_setup():
    h, r, T = 2.0 ** -6, 0.5, 1.0
    model = ahmp_model(0.25, 0.3, r, rate=0.04)
    eta = segment_from_closed_form("constant", {"value": 1.0}, h, r)
    return model, eta, h, r, T


# ---------------------------------------------------------------------------
# exact-expectation harness: tensor Gauss-Hermite nodes as a path ensemble


def gauss_hermite_noise(n_steps: int, h: float, nodes: int = 7):
    """All tensor-product quadrature nodes as one weighted batch of paths.

    Expectations over the increments become exact weighted sums, turning
    estimator-unbiasedness checks into deterministic assertions.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    grids = np.meshgrid(*([x] * n_steps), indexing="ij")
    zs = np.stack([g.ravel() for g in grids], axis=-1)
    ws = np.ones(zs.shape[0])
    for i in range(n_steps):
        ws = ws * w[np.searchsorted(x, zs[:, i])]
    return NoiseGrid(zs[..., None] * np.sqrt(h), seed=0, path_id=0, h=h), ws


class SmoothPayoff(Payoff):
    """exp(c * terminal value): smooth, so quadrature expectations are exact."""

    def evaluate(self, seg, row=0):
        return np.exp(0.3 * seg.v[..., row])


def quadrature_price(model, eta, payoff, valuation, T, h, noise, ws):
    path = euler_solve(model, eta, T, h, noise)
    vals = payoff.evaluate(segment_of_path(path, T), model.price_row)
    if valuation != "plain":
        meas = simulate_measures(model, path, noise)
        if valuation == "risk_neutral":
            vals = vals * meas.M_T() / meas.B_T()
        else:
            vals = vals / meas.G_T()
    return float(np.sum(ws * vals))


def quadrature_delta(model, eta, payoff, valuation, T, h, psi, noise, ws, eps=1e-6):
    """True delta of the discrete scheme: central difference of the exact price."""
    up = SegmentGrid(eta.v + eps * psi.v, eta.phi + eps * psi.phi, eta.h, eta.r)
    dn = SegmentGrid(eta.v - eps * psi.v, eta.phi - eps * psi.phi, eta.h, eta.r)
    return (quadrature_price(model, eta.__class__(up.v, up.phi, eta.h, eta.r), payoff, valuation, T, h, noise, ws)
            - quadrature_price(model, dn, payoff, valuation, T, h, noise, ws)) / (2.0 * eps)
