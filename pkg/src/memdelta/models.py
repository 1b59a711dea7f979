"""Built-in model specifications.

Three concrete markets plus a generic geometric constructor:

* ``bs_model`` -- geometric dynamics dS = mu S dt + sigma S dW; the past
  window is carried but never read.
* ``kp_model`` -- commodity model S(t) = a1 exp(a2 Y(t) + a3 t) driven by a
  delayed Ornstein-Uhlenbeck-type factor dY = -mu Y(t-r) dt + sigma dW,
  represented as the pair (S, Y) with a single Brownian driver.
* ``ahmp_model`` -- delayed-drift stock dS/S = mu(t) S(t-r) dt + sigma(t) dW
  with a closed-form solution on the first delay interval.

Time-dependent inputs (short rate, mu(t), sigma(t)) are supplied as named
closed forms so runs are reproducible from their config alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import ModelSpec
from .segment import GridError, PathGrid, SegmentGrid, rho, steps_in


def as_time_function(spec) -> Callable[[float], float]:
    """Named closed forms for scalar functions of time.

    Accepts a number (constant), a callable, or a dict:
    {"form": "constant", "value": c} or
    {"form": "piecewise", "times": [t0, t1, ...], "values": [v0, v1, ...]}
    with value v_i on [t_i, t_{i+1}).
    """
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        c = float(spec)
        return lambda t: c
    if isinstance(spec, dict):
        form = spec.get("form")
        if form == "constant":
            c = float(spec["value"])
            return lambda t: c
        if form == "piecewise":
            times = np.asarray(spec["times"], dtype=np.float64)
            values = np.asarray(spec["values"], dtype=np.float64)
            if len(times) != len(values) or len(times) == 0 or times[0] > 0.0:
                raise GridError("piecewise time function needs times starting at 0 with matching values")
            def fn(t, times=times, values=values):
                return float(values[np.searchsorted(times, t, side="right") - 1])
            return fn
    raise GridError(f"cannot interpret time function spec {spec!r}")


# ---------------------------------------------------------------------------
# Black-Scholes


def bs_model(mu: float, sigma: float, r: float = 0.0, rate=0.0) -> ModelSpec:
    """Classical geometric model; delay window r is carried but unused."""
    if sigma <= 0.0:
        raise GridError(f"sigma must be positive, got {sigma}")
    mu, sigma = float(mu), float(sigma)

    def drift(t, seg):
        return mu * seg.v

    def diffusion(t, seg):
        return sigma * seg.v[..., :, None]

    def ddrift(t, seg, dir):
        return mu * dir.v

    def ddiffusion(t, seg, dir):
        return sigma * dir.v[..., :, None]

    def right_inverse(t, seg):
        return (1.0 / (sigma * seg.v))[..., None, :]

    zero_dir = lambda t, seg, dir: np.zeros(seg.v.shape[:-1])
    return ModelSpec(
        name="bs", d=1, m=1, r=float(r),
        drift=drift, diffusion=diffusion, ddrift=ddrift, ddiffusion=ddiffusion,
        diffusion_right_inverse=right_inverse, rate=_as_rate_fn(rate),
        params={"mu": mu, "sigma": sigma, "r": float(r)},
        drift_mu=lambda t, seg: np.full(seg.v.shape[:-1], mu),
        vol_sigma=lambda t, seg: np.full(seg.v.shape[:-1], sigma),
        dmu=zero_dir, dsigma=zero_dir,
        dtheta_zero=True,
    )


def _as_rate_fn(rate) -> Callable[[float], float]:
    return as_time_function(rate)


# ---------------------------------------------------------------------------
# Kuechler-Platen style two-factor model


@dataclass(frozen=True)
class KPParams:
    """Parameters of the delayed commodity model and its derived constants.

    The price link S(t) = a1 exp(a2 Y(t) + a3 t) forces, by the Ito formula,
    dS/S = (-c1 Y(t-r) + c2) dt + c3 dW with c1 = a2 mu, c2 = a3 + a2^2 sigma^2 / 2,
    c3 = a2 sigma.  c3 must be nonzero for the price equation to be invertible.
    """

    alpha1: float
    alpha2: float
    alpha3: float
    mu: float
    sigma: float
    r: float

    @property
    def c1(self) -> float:
        return self.alpha2 * self.mu

    @property
    def c2(self) -> float:
        return self.alpha3 + 0.5 * self.alpha2 ** 2 * self.sigma ** 2

    @property
    def c3(self) -> float:
        return self.alpha2 * self.sigma

    def price_of_factor(self, y, t):
        return self.alpha1 * np.exp(self.alpha2 * y + self.alpha3 * t)


def kp_model(alpha1: float, alpha2: float, alpha3: float, mu: float, sigma: float,
             r: float, rate=0.0) -> ModelSpec:
    """Pair (S, Y): delayed factor Y and the geometric price it drives."""
    p = KPParams(float(alpha1), float(alpha2), float(alpha3), float(mu), float(sigma), float(r))
    if p.c3 == 0.0 or r <= 0.0:
        raise GridError("kp model needs alpha2*sigma != 0 and r > 0")
    c1, c2, c3 = p.c1, p.c2, p.c3

    def drift(t, seg):
        past = rho(seg, -p.r)
        s, y_d = seg.v[..., 0], past[..., 1]
        return np.stack([(-c1 * y_d + c2) * s, -p.mu * y_d], axis=-1)

    def diffusion(t, seg):
        s = seg.v[..., 0]
        g = np.empty(s.shape + (2, 1))
        g[..., 0, 0] = c3 * s
        g[..., 1, 0] = p.sigma
        return g

    def ddrift(t, seg, dir):
        past = rho(seg, -p.r)
        dpast = rho(dir, -p.r)
        s, y_d = seg.v[..., 0], past[..., 1]
        ds, dy_d = dir.v[..., 0], dpast[..., 1]
        return np.stack([(-c1 * y_d + c2) * ds - c1 * dy_d * s, -p.mu * dy_d], axis=-1)

    def ddiffusion(t, seg, dir):
        ds = dir.v[..., 0]
        g = np.zeros(ds.shape + (2, 1))
        g[..., 0, 0] = c3 * ds
        return g

    def right_inverse(t, seg):
        # one-sided inverse acting through the priced row only
        s = seg.v[..., 0]
        ri = np.zeros(s.shape + (1, 2))
        ri[..., 0, 0] = 1.0 / (c3 * s)
        return ri

    def drift_mu(t, seg):
        return -c1 * rho(seg, -p.r)[..., 1] + c2

    def dmu(t, seg, dir):
        return -c1 * rho(dir, -p.r)[..., 1]

    def theta_tangent_profile(n_T: int, h: float) -> np.ndarray:
        """Sensitivity of theta(t_j) to the step-l increment as a function of j - l.

        The factor's response to an increment is deterministic, so one lag
        profile covers every step and path: profile[j - l] multiplied into
        the trace sums.  Matches the generic tangent recursion exactly.
        """
        n_r = steps_in(p.r, h, "delay r")
        y = np.zeros(n_T + 1)
        if n_T >= 0:
            y[0] = 1.0
        for i in range(n_T):
            y[i + 1] = y[i] - p.mu * h * (y[i - n_r] if i - n_r >= 0 else 0.0)
        prof = np.zeros(n_T + 1)
        for lag in range(n_r + 1, n_T + 1):
            prof[lag] = -(c1 / c3) * p.sigma * y[lag - n_r - 1]
        return prof

    return ModelSpec(
        name="kp", d=2, m=1, r=p.r,
        drift=drift, diffusion=diffusion, ddrift=ddrift, ddiffusion=ddiffusion,
        diffusion_right_inverse=right_inverse, rate=_as_rate_fn(rate),
        params={"alpha1": p.alpha1, "alpha2": p.alpha2, "alpha3": p.alpha3,
                "mu": p.mu, "sigma": p.sigma, "r": p.r},
        drift_mu=drift_mu,
        vol_sigma=lambda t, seg: np.full(seg.v.shape[:-1], c3),
        dmu=dmu,
        dsigma=lambda t, seg, dir: np.zeros(seg.v.shape[:-1]),
        theta_tangent_profile=theta_tangent_profile,
    )


def kp_params(model: ModelSpec) -> KPParams:
    q = model.params
    return KPParams(q["alpha1"], q["alpha2"], q["alpha3"], q["mu"], q["sigma"], q["r"])


def kp_initial_segment(model: ModelSpec, eta_y: SegmentGrid) -> SegmentGrid:
    """Lift a factor history to the pair state, deriving the price window."""
    p = kp_params(model)
    if eta_y.d != 1:
        raise GridError("factor history must be one-dimensional")
    t_hist = -p.r + eta_y.h * np.arange(eta_y.n_r)
    s_hist = p.price_of_factor(eta_y.phi[..., 0], t_hist)
    s_now = p.price_of_factor(eta_y.v[..., 0], 0.0)
    v = np.stack([s_now, eta_y.v[..., 0]], axis=-1)
    phi = np.stack([s_hist, eta_y.phi[..., 0]], axis=-1)
    return SegmentGrid(v, phi, eta_y.h, eta_y.r)


# ---------------------------------------------------------------------------
# delayed-drift stock model


def ahmp_model(mu, sigma, r: float, rate=0.0) -> ModelSpec:
    """Stock with delayed level feedback in the drift.

    dS/S = mu(t) S(t - r) dt + sigma(t) dW, sigma(t) > 0.  mu and sigma are
    time functions (see ``as_time_function``).  Feasibility requires a
    positive initial window.
    """
    mu_t = as_time_function(mu)
    sig_t = as_time_function(sigma)
    r = float(r)
    if r <= 0.0:
        raise GridError("delayed-drift model needs r > 0")

    def drift(t, seg):
        return mu_t(t) * rho(seg, -r) * seg.v

    def diffusion(t, seg):
        return sig_t(t) * seg.v[..., :, None]

    def ddrift(t, seg, dir):
        return mu_t(t) * (rho(dir, -r) * seg.v + rho(seg, -r) * dir.v)

    def ddiffusion(t, seg, dir):
        return sig_t(t) * dir.v[..., :, None]

    def right_inverse(t, seg):
        s = sig_t(t)
        if s <= 0.0:
            raise GridError(f"sigma(t) must stay positive, got {s} at t={t}")
        return (1.0 / (s * seg.v))[..., None, :]

    return ModelSpec(
        name="ahmp", d=1, m=1, r=r,
        drift=drift, diffusion=diffusion, ddrift=ddrift, ddiffusion=ddiffusion,
        diffusion_right_inverse=right_inverse, rate=_as_rate_fn(rate),
        params={"mu": _tf_repr(mu), "sigma": _tf_repr(sigma), "r": r},
        drift_mu=lambda t, seg: mu_t(t) * rho(seg, -r)[..., 0],
        vol_sigma=lambda t, seg: np.full(seg.v.shape[:-1], sig_t(t)),
        dmu=lambda t, seg, dir: mu_t(t) * rho(dir, -r)[..., 0],
        dsigma=lambda t, seg, dir: np.zeros(seg.v.shape[:-1]),
    )


def _tf_repr(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict):
        return dict(spec)
    return getattr(spec, "__name__", "callable")


def ahmp_closed_path(model: ModelSpec, eta: SegmentGrid, T: float, noise) -> PathGrid:
    """Exact solution of the delayed-drift model on the first delay interval.

    S(t) = eta(0) exp( sum_{t_j < t} (mu(t_j) eta(t_j - r) - sigma(t_j)^2 / 2) h
                       + sum sigma(t_j) dW_j ),  valid for T <= r,
    with the time integral taken by the same left-endpoint rule as the solver.
    """
    r, h = model.r, eta.h
    if T > r + 1e-12:
        raise GridError("closed form only valid up to the delay horizon")
    mu_t = as_time_function(model.params["mu"])
    sig_t = as_time_function(model.params["sigma"])
    n_T = steps_in(T, h, "horizon T")
    n_r = eta.n_r
    t_steps = h * np.arange(n_T)
    mu_vals = np.array([mu_t(t) for t in t_steps])
    sig_vals = np.array([sig_t(t) for t in t_steps])
    window = np.concatenate([eta.phi[..., 0], eta.v[..., 0:1]], axis=-1)  # values at -r..0
    eta_delayed = window[..., :n_T] if n_T <= n_r else None
    if eta_delayed is None:
        raise GridError("closed form needs T <= r")
    dW = noise.dW[..., :n_T, 0]
    log_incr = (mu_vals * eta_delayed - 0.5 * sig_vals ** 2) * h + sig_vals * dW
    log_s = np.concatenate([np.zeros(log_incr.shape[:-1] + (1,)), np.cumsum(log_incr, axis=-1)], axis=-1)
    s = eta.v[..., 0:1] * np.exp(log_s)
    vals = np.concatenate([np.broadcast_to(eta.phi[..., 0], s.shape[:-1] + (n_r,)), s], axis=-1)
    return PathGrid(vals[..., None], h, r, T)


def ahmp_variation_closed(model: ModelSpec, eta: SegmentGrid, psi: SegmentGrid,
                          base: PathGrid) -> np.ndarray:
    """Directional derivative of the closed-form solution, on [0, min(T, r)].

    d/de S^(eta + e psi)(t) = S(t) (psi(0)/eta(0) + sum_{t_j < t} mu(t_j) psi(t_j - r) h).
    Returns the array of derivative values at grid times 0..T.
    """
    r, h = model.r, eta.h
    T = base.T
    if T > r + 1e-12:
        raise GridError("closed variation only valid up to the delay horizon")
    mu_t = as_time_function(model.params["mu"])
    n_T = base.n_T
    psi_window = np.concatenate([psi.phi[..., 0], psi.v[..., 0:1]], axis=-1)
    mu_vals = np.array([mu_t(k * h) for k in range(n_T)])
    incr = mu_vals * psi_window[..., :n_T] * h
    load = np.concatenate([np.zeros(incr.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)], axis=-1)
    s_path = base.values[..., base.n_r:, 0]
    return s_path * (psi.v[..., 0:1] / eta.v[..., 0:1] + load)


# ---------------------------------------------------------------------------
# generic geometric model (no memory read; named time functions)


def geometric_model(mu, sigma, r: float = 0.0, rate=0.0) -> ModelSpec:
    """dS/S = mu(t) dt + sigma(t) dW with named time functions."""
    mu_t = as_time_function(mu)
    sig_t = as_time_function(sigma)

    def drift(t, seg):
        return mu_t(t) * seg.v

    def diffusion(t, seg):
        return sig_t(t) * seg.v[..., :, None]

    def ddrift(t, seg, dir):
        return mu_t(t) * dir.v

    def ddiffusion(t, seg, dir):
        return sig_t(t) * dir.v[..., :, None]

    def right_inverse(t, seg):
        return (1.0 / (sig_t(t) * seg.v))[..., None, :]

    zero_dir = lambda t, seg, dir: np.zeros(seg.v.shape[:-1])
    return ModelSpec(
        name="custom_geometric", d=1, m=1, r=float(r),
        drift=drift, diffusion=diffusion, ddrift=ddrift, ddiffusion=ddiffusion,
        diffusion_right_inverse=right_inverse, rate=_as_rate_fn(rate),
        params={"mu": _tf_repr(mu), "sigma": _tf_repr(sigma), "r": float(r)},
        drift_mu=lambda t, seg: np.full(seg.v.shape[:-1], mu_t(t)),
        vol_sigma=lambda t, seg: np.full(seg.v.shape[:-1], sig_t(t)),
        dmu=zero_dir, dsigma=zero_dir,
        dtheta_zero=True,
    )


MODEL_BUILDERS = {
    "bs": bs_model,
    "kp": kp_model,
    "ahmp": ahmp_model,
    "custom_geometric": geometric_model,
}
