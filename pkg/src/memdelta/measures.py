"""Numeraires and measure changes for geometric market models.

Along each simulated path we carry three log processes: the bond
log B(t) = int kappa, the change-of-measure density
log M(t) = -int theta dW - 1/2 int theta^2 dt driven by the market price of
risk theta = (mu - kappa) / sigma, and the growth-optimal portfolio
log G(t) = int (kappa + theta^2 / 2) dt + int theta dW.  Log-space
recursions keep all three positive and make log M + log G - log B vanish
identically at every grid time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dataclasses import replace

from .engine import ModelSpec, NoiseGrid
from .segment import GridError, PathGrid, SegmentGrid, segment_of_path


class SingularVolatilityError(ZeroDivisionError):
    """The volatility functional hit zero; theta is undefined there."""


def market_price_of_risk(model: ModelSpec, t: float, seg: SegmentGrid) -> np.ndarray:
    """theta(t, seg) = (mu(t, seg) - kappa(t)) / sigma(t, seg)."""
    if not model.is_geometric:
        raise GridError(f"model {model.name} exposes no geometric mu/sigma; theta undefined")
    sig = np.asarray(model.vol_sigma(t, seg))
    if np.any(sig == 0.0):
        raise SingularVolatilityError(f"sigma(t={t}) = 0")
    return (np.asarray(model.drift_mu(t, seg)) - model.rate(t)) / sig


def dtheta(model: ModelSpec, t: float, seg: SegmentGrid, dir: SegmentGrid) -> np.ndarray:
    """Directional derivative of theta along a segment direction.

    d theta = (d mu - theta d sigma) / sigma, the bracketed integrand of the
    density derivative.
    """
    sig = np.asarray(model.vol_sigma(t, seg))
    th = market_price_of_risk(model, t, seg)
    dmu = np.asarray(model.dmu(t, seg, dir))
    dsig = np.asarray(model.dsigma(t, seg, dir))
    return (dmu - th * dsig) / sig


@dataclass(frozen=True)
class MeasurePath:
    """Per-path log numeraires at grid times 0..T plus the theta path.

    logM, logG: (..., n_T + 1); logB: (n_T + 1,); theta: (..., n_T).
    M(0) = G(0) = B(0) = 1.
    """

    logM: np.ndarray
    logG: np.ndarray
    logB: np.ndarray
    theta: np.ndarray
    h: float

    @property
    def n_T(self) -> int:
        return self.theta.shape[-1]

    def M_T(self) -> np.ndarray:
        return np.exp(self.logM[..., -1])

    def G_T(self) -> np.ndarray:
        return np.exp(self.logG[..., -1])

    def B_T(self) -> float:
        return float(np.exp(self.logB[-1]))


def simulate_measures(model: ModelSpec, base: PathGrid, noise: NoiseGrid) -> MeasurePath:
    """Run the log recursions for M, G and B along a solved path."""
    if model.m != 1:
        raise GridError("measure machinery assumes a single Brownian driver")
    h = base.h
    n_T = base.n_T
    batch = base.values.shape[:-2]
    theta = np.empty(batch + (n_T,))
    logM = np.zeros(batch + (n_T + 1,))
    logG = np.zeros(batch + (n_T + 1,))
    logB = np.zeros(n_T + 1)
    for k in range(n_T):
        t = k * h
        seg = segment_of_path(base, t)
        th = market_price_of_risk(model, t, seg)
        kap = model.rate(t)
        dw = noise.dW[..., k, 0]
        theta[..., k] = th
        logM[..., k + 1] = logM[..., k] - th * dw - 0.5 * th * th * h
        logG[..., k + 1] = logG[..., k] + (kap + 0.5 * th * th) * h + th * dw
        logB[k + 1] = logB[k] + kap * h
    return MeasurePath(logM, logG, logB, theta, h)


def q_drift_model(model: ModelSpec) -> ModelSpec:
    """Shift the drift by -g theta: the same dynamics read under the pricing measure.

    For geometric dynamics this replaces the growth rate of the priced
    component by the short rate.  Used as a cross-check oracle for
    risk-neutral prices; not intended for delta estimation.
    """
    if not model.is_geometric or model.m != 1:
        raise GridError("drift-shifted twin only defined for scalar geometric models")

    inner = model

    def drift(t, seg):
        th = market_price_of_risk(inner, t, seg)
        g = np.asarray(inner.diffusion(t, seg))
        return np.asarray(inner.drift(t, seg)) - g[..., :, 0] * th[..., None]

    def ddrift(t, seg, dir):
        th = market_price_of_risk(inner, t, seg)
        dth = dtheta(inner, t, seg, dir)
        g = np.asarray(inner.diffusion(t, seg))
        dg = np.asarray(inner.ddiffusion(t, seg, dir))
        return (np.asarray(inner.ddrift(t, seg, dir))
                - dg[..., :, 0] * th[..., None] - g[..., :, 0] * dth[..., None])

    return replace(
        inner,
        name=inner.name + "_qdrift",
        drift=drift,
        ddrift=ddrift,
        drift_mu=lambda t, seg: np.full(seg.v.shape[:-1], inner.rate(t)),
        dmu=lambda t, seg, dir: np.zeros(seg.v.shape[:-1]),
        dsigma=inner.dsigma,
        dtheta_zero=True,
        theta_tangent_profile=None,
        params={**inner.params, "drift": "risk_neutralized"},
    )


def benchmarked_martingale_diag(model: ModelSpec, base: PathGrid, measures: MeasurePath,
                                probe_times: list[float]) -> dict:
    """Check that the benchmarked price S/G keeps its initial mean.

    Returns per-time mean, standard error and a violation flag at three
    standard errors.  At t = 0 the statistic is exact by construction.
    """
    row = model.price_row
    s0 = np.mean(base.value_at(0.0)[..., row])
    out = {"initial": float(s0), "times": [], "mean": [], "stderr": [], "violation": []}
    n_r = base.n_r
    for t in probe_times:
        k = base.index_of(t) - n_r
        ratio = base.value_at(t)[..., row] * np.exp(-measures.logG[..., k])
        mean = float(np.mean(ratio))
        se = float(np.std(ratio, ddof=1) / np.sqrt(ratio.size)) if ratio.size > 1 else 0.0
        out["times"].append(float(t))
        out["mean"].append(mean)
        out["stderr"].append(se)
        out["violation"].append(bool(abs(mean - s0) > 3.0 * se) if se > 0 else bool(mean != s0))
    return out
