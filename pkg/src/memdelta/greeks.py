"""Price and initial-path delta estimators.

The delta of a payoff with respect to the initial segment is a linear
functional on the state space.  Three estimator families are provided:

* weight estimators: E[payoff * w(psi)], where the random weight w(psi) is
  an Ito sum assembled from the first-variation flow, the diffusion
  right-inverse and, under the risk-neutral and benchmark valuations, the
  derivative and increment-sensitivities of the measure density;
* a central finite-difference oracle on common random numbers;
* the delta-index: the norm of the Riesz representative of the delta
  functional over an orthonormal direction family.

The weight carries two streams.  The main stream is the classical
a-weighted term a(t) g_R^{-1} alpha(t) dW(t).  The second stream re-injects,
through the drift derivative, the part of the variation's history that the
point-mass calculus of the main stream cannot see: at step l it reads the
still-visible history values alpha(v), v < t_l, weighted by how much of the
a-schedule was spent after v.  For models whose coefficients never read the
past the second stream vanishes identically and the weight reduces to the
classical one.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import ModelSpec, NoiseGrid, euler_solve, generate_noise_block
from .measures import MeasurePath, dtheta, q_drift_model, simulate_measures
from .segment import (
    GridError,
    PathGrid,
    SegmentGrid,
    m2_inner,
    segment_of_path,
    steps_in,
)
from .variation import TangentMatrix, malliavin_tangent, variation_flow

MAX_BLOWUP_FRACTION = 1e-3


class SimulationError(RuntimeError):
    """Too many paths blew up for the run to be trustworthy."""


# ---------------------------------------------------------------------------
# payoffs and estimates


@dataclass(frozen=True)
class Payoff:
    """Nonnegative measurable function of the terminal segment.

    european_call reads only the terminal value; asian_call averages the
    terminal window of length ``window`` (left-endpoint rule, excludes the
    endpoint itself); lookback_call takes the running maximum over the
    whole window including the endpoint.
    """

    kind: str
    strike: float
    window: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("european_call", "asian_call", "lookback_call", "constant"):
            raise GridError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "asian_call" and (self.window is None or self.window <= 0.0):
            raise GridError("asian_call needs a positive averaging window")

    @property
    def segment_dependent(self) -> bool:
        return self.kind in ("asian_call", "lookback_call")

    def window_reach(self, r: float) -> float:
        """How far back into the terminal window the payoff reads."""
        if self.kind == "asian_call":
            return min(float(self.window), r)
        if self.kind == "lookback_call":
            return r
        return 0.0

    def evaluate(self, seg: SegmentGrid, row: int = 0) -> np.ndarray:
        if self.kind == "constant":
            return np.full(seg.v.shape[:-1], self.strike)
        if self.kind == "european_call":
            return np.maximum(seg.v[..., row] - self.strike, 0.0)
        if self.kind == "asian_call":
            n_w = steps_in(min(self.window, seg.r), seg.h, "averaging window")
            if n_w < 1:
                raise GridError("averaging window shorter than one step")
            avg = np.mean(seg.phi[..., seg.n_r - n_w:, row], axis=-1)
            return np.maximum(avg - self.strike, 0.0)
        running = np.concatenate([seg.phi[..., row], seg.v[..., row:row + 1]], axis=-1)
        return np.maximum(np.max(running, axis=-1) - self.strike, 0.0)


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with its sampling error."""

    mean: float
    stderr: float
    n_paths: int

    @property
    def ci95(self) -> float:
        return 1.96 * self.stderr

    @staticmethod
    def from_samples(x: np.ndarray) -> "Estimate":
        x = np.asarray(x, dtype=np.float64)
        n = x.size
        se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        return Estimate(float(np.mean(x)), se, n)


@dataclass(frozen=True)
class McParams:
    """Run controls shared by every estimator: path count, horizon, step, seed."""

    n_paths: int
    T: float
    h: float
    seed: int
    batch_size: int = 8192

    def __post_init__(self):
        steps_in(self.T, self.h, "horizon T")
        if self.n_paths < 1:
            raise GridError("n_paths must be positive")

    @property
    def n_T(self) -> int:
        return steps_in(self.T, self.h, "horizon T")


@dataclass
class DeltaEntry:
    direction_id: str
    estimate: Estimate
    weight_mean: float
    weight_stderr: float


@dataclass
class DeltaReport:
    """Per-direction delta estimates plus the operator-norm summary."""

    estimator: str
    valuation: str
    entries: list[DeltaEntry] = field(default_factory=list)
    delta_index: Optional[float] = None
    delta_index_stderr: Optional[float] = None
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# a-schedules


def a_weights(name: str, mc: McParams, r: float, cutoff: Optional[float] = None) -> np.ndarray:
    """Discrete a-schedule a_k at the left step endpoints, normalized so
    sum a_k h = 1 exactly.

    uniform: constant on [0, T); early: constant on [0, cutoff) with
    cutoff defaulting to T - r (needed when the payoff reads the terminal
    window); ramp: proportional to t.
    """
    n_T, h, T = mc.n_T, mc.h, mc.T
    t = h * np.arange(n_T)
    if name == "uniform":
        raw = np.ones(n_T)
    elif name == "early":
        c = T - r if cutoff is None else cutoff
        if c <= 0.0:
            raise GridError("early a-schedule needs T > r (no room before the terminal window)")
        raw = (t < c - 0.5 * h).astype(np.float64)
        if not raw.any():
            raw[0] = 1.0
    elif name == "ramp":
        raw = t.copy()
        raw[0] = 0.0
    else:
        raise GridError(f"unknown a-schedule {name!r}")
    total = raw.sum() * h
    if total == 0.0:
        raise GridError(f"a-schedule {name!r} has no mass")
    return raw / total


def _auto_a_name(payoff: Payoff) -> str:
    return "early" if payoff.segment_dependent else "uniform"


def _check_a_support(a: np.ndarray, payoff: Payoff, mc: McParams, r: float) -> None:
    reach = payoff.window_reach(r)
    if reach <= 0.0:
        return
    n_keep = mc.n_T - steps_in(reach, mc.h, "payoff window")
    if np.any(a[max(n_keep, 0):] != 0.0):
        raise GridError(
            "the payoff reads the terminal window, so the a-schedule must be supported "
            "before it (use the 'early' schedule)")


# ---------------------------------------------------------------------------
# batching


def _worker_count() -> int:
    raw = os.environ.get("MEMDELTA_WORKERS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _batches(n_paths: int, batch_size: int) -> list[tuple[int, int]]:
    out = []
    start = 0
    while start < n_paths:
        out.append((start, min(batch_size, n_paths - start)))
        start += batch_size
    return out


def _map_batches(fn, mc: McParams):
    """Run fn(start, count) over fixed path blocks; result order never depends on workers."""
    jobs = _batches(mc.n_paths, mc.batch_size)
    workers = _worker_count()
    if workers == 1 or len(jobs) == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def _reject_guard(ok_total: int, n_paths: int, context: str) -> None:
    rejects = n_paths - ok_total
    if rejects > MAX_BLOWUP_FRACTION * n_paths:
        raise SimulationError(
            f"{context}: {rejects} of {n_paths} paths rejected for numerical blow-up "
            f"(budget {MAX_BLOWUP_FRACTION:.1%})")


# ---------------------------------------------------------------------------
# pricing


def price(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, valuation: str,
          mc: McParams, stepping: Optional[str] = None) -> Estimate:
    """Monte Carlo price under plain, risk-neutral or benchmark valuation.

    plain: E[payoff]; risk_neutral: E[M(T) payoff] / B(T); benchmark:
    E[payoff / G(T)].  Geometric models price on the log grid by default.
    """
    if valuation not in ("plain", "risk_neutral", "benchmark"):
        raise GridError(f"unknown valuation {valuation!r}")
    if stepping is None:
        stepping = "log_euler" if (model.is_geometric and model.m == 1) else "euler"
    need_measures = valuation != "plain"

    def one(start, count):
        noise = generate_noise_block(mc.seed, start, count, mc.n_T, model.m, mc.h)
        path, ok = euler_solve(model, eta, mc.T, mc.h, noise, stepping=stepping, blowup="mask")
        vals = payoff.evaluate(segment_of_path(path, mc.T), model.price_row)
        if need_measures:
            meas = simulate_measures(model, path, noise)
            if valuation == "risk_neutral":
                vals = vals * meas.M_T() / meas.B_T()
            else:
                vals = vals / meas.G_T()
        return vals[ok]

    chunks = _map_batches(one, mc)
    sample = np.concatenate(chunks)
    _reject_guard(sample.size, mc.n_paths, f"price[{valuation}]")
    return Estimate.from_samples(sample)


def price_risk_neutral_qdrift(model: ModelSpec, eta: SegmentGrid, payoff: Payoff,
                              mc: McParams, stepping: Optional[str] = None) -> Estimate:
    """Risk-neutral price by simulating the drift-shifted twin directly.

    Cross-check oracle for the density-weighted estimator: the increments
    are reinterpreted as pricing-measure increments, so both routes price
    the same claim.
    """
    q_model = q_drift_model(model)
    if stepping is None:
        stepping = "log_euler" if q_model.is_geometric and q_model.m == 1 else "euler"
    disc = None

    def one(start, count):
        noise = generate_noise_block(mc.seed, start, count, mc.n_T, model.m, mc.h)
        path, ok = euler_solve(q_model, eta, mc.T, mc.h, noise, stepping=stepping, blowup="mask")
        return payoff.evaluate(segment_of_path(path, mc.T), model.price_row)[ok]

    sample = np.concatenate(_map_batches(one, mc))
    _reject_guard(sample.size, mc.n_paths, "price[q_drift]")
    n = mc.n_T
    log_b = sum(model.rate(k * mc.h) for k in range(n)) * mc.h
    disc = float(np.exp(-log_b))
    scaled = disc * sample
    return Estimate.from_samples(scaled)


# ---------------------------------------------------------------------------
# weight estimators


def _theta_increment_sensitivity(model: ModelSpec, base: PathGrid, noise: NoiseGrid,
                                 meas: MeasurePath,
                                 tangent: Optional[TangentMatrix]) -> np.ndarray:
    """d log(density at T) / d(increment_l) as an (..., n_T) array.

    Three routes, all agreeing with the dense tangent recursion: identically
    -theta_l when theta has no state dependence; an outer lag profile when
    the model provides one; otherwise assembled from the tangent matrix.
    """
    h = base.h
    n_T = base.n_T
    theta = meas.theta
    dW = noise.dW[..., 0]
    out = -theta.copy()
    if model.dtheta_zero:
        return out
    if model.theta_tangent_profile is not None:
        prof = model.theta_tangent_profile(n_T, h)
        P = np.zeros((n_T, n_T))
        for l in range(n_T):
            lags = np.arange(n_T - l) + 0  # j = l .. n_T-1 -> lag j - l
            P[l, l:] = prof[lags]
        out -= np.einsum("lj,...j->...l", P, theta * h + dW)
        return out
    if tangent is None:
        raise GridError("state-dependent theta needs the tangent matrix")
    dtheta_lj = np.empty(theta.shape[:-1] + (n_T, n_T))
    for j in range(n_T):
        t = j * h
        xseg = segment_of_path(base, t)
        cols = _all_columns_direction(tangent, t)
        xv = np.broadcast_to(xseg.v[..., None, None, :], cols.v.shape)
        xphi = np.broadcast_to(xseg.phi[..., None, None, :, :], cols.phi.shape)
        xbig = SegmentGrid(xv, xphi, base.h, base.r)
        dtheta_lj[..., :, j] = dtheta(model, t, xbig, cols)[..., 0]
    out -= np.einsum("...lj,...j->...l", dtheta_lj, theta * h + dW)
    return out


def _all_columns_direction(tangent: TangentMatrix, t: float) -> SegmentGrid:
    pos = tangent._pos(t)
    n_r = tangent.n_r
    v = np.moveaxis(tangent.values[..., :, pos, :, :], -1, -2)
    phi = np.moveaxis(tangent.values[..., :, pos - n_r:pos, :, :], -1, -3)
    return SegmentGrid(v, phi, tangent.h, tangent.r)


@dataclass
class _BatchWeights:
    """Per-path pieces of the weight for one direction on one path block."""

    w_full: np.ndarray
    w_main: np.ndarray
    dlogM: Optional[np.ndarray]
    trace: Optional[np.ndarray]


def _direction_weights(model: ModelSpec, base: PathGrid, noise: NoiseGrid,
                       psi: SegmentGrid, a: np.ndarray, A_pos: np.ndarray,
                       ri_list, xsegs, meas: Optional[MeasurePath],
                       dlog_dw: Optional[np.ndarray],
                       main_stream: str = "adapted") -> _BatchWeights:
    """Assemble the weight streams for one direction.

    Main stream: a_l g_R^{-1} alpha(t_l) dW_l.  Memory stream: at each step
    the drift derivative is fed the part of the variation the point-mass
    calculus cannot see -- past values weighted by the a-schedule spent
    after them (read off two companion paths, alpha and alpha * A) and,
    when the state has more components than drivers, a ghost path that
    accumulates the point deficits outside the diffusion's range and
    carries them forward until the drift turns them into weight.  Density
    pieces (directional derivative of log M and the increment-trace
    correction) are produced when measures are present.

    main_stream="lookahead" reads the variation one step ahead and adds the
    matching Gaussian trace, which removes the O(h) remainder entirely (the
    estimator becomes exactly unbiased for the discrete scheme) at the cost
    of the closed pathwise weight forms; validation only.
    """
    h = base.h
    n_T, n_r = base.n_T, base.n_r
    var = variation_flow(model, base, noise, psi)
    al = var.alpha.values
    alA = al * A_pos[:, None]

    batch = al.shape[:-2]
    w_main = np.zeros(batch)
    w_corr = np.zeros(batch)
    dlogM = np.zeros(batch) if meas is not None else None
    u_total = np.empty(batch + (n_T,)) if meas is not None else None
    need_ghost = model.d != model.m
    ghost = np.zeros(batch + (n_r + n_T + 1, model.d)) if need_ghost else None
    if main_stream not in ("adapted", "lookahead"):
        raise GridError(f"unknown main stream {main_stream!r}")
    if main_stream == "lookahead" and (meas is not None or need_ghost):
        raise GridError("lookahead main stream is a plain-valuation, d == m diagnostic")

    for k in range(n_T):
        t = k * h
        xseg = xsegs[k]
        ri = ri_list[k]  # (..., m, d)
        dw = noise.dW[..., k, :]
        aseg = SegmentGrid(al[..., n_r + k, :], al[..., k:n_r + k, :], h, base.r)
        if main_stream == "lookahead":
            u_k = np.einsum("...md,...d->...m", ri, al[..., n_r + k + 1, :]) * a[k]
            dg = np.asarray(model.ddiffusion(t, xseg, aseg))
            w_main -= h * a[k] * np.einsum("...md,...dm->...", ri, dg)
        else:
            u_k = np.einsum("...md,...d->...m", ri, aseg.v) * a[k]
        mem_dir = None
        if n_r:
            hist_a = SegmentGrid(np.zeros_like(aseg.v), aseg.phi, h, base.r)
            hist_aA = SegmentGrid(np.zeros_like(aseg.v), alA[..., k:n_r + k, :], h, base.r)
            mem_dir = (A_pos[n_r + k] * np.asarray(model.ddrift(t, xseg, hist_a))
                       - np.asarray(model.ddrift(t, xseg, hist_aA)))
        if need_ghost:
            gseg = SegmentGrid(ghost[..., n_r + k, :], ghost[..., k:n_r + k, :], h, base.r)
            ghost_read = np.asarray(model.ddrift(t, xseg, gseg))
            mem_dir = ghost_read if mem_dir is None else mem_dir + ghost_read
        if mem_dir is not None:
            c_k = np.einsum("...md,...d->...m", ri, mem_dir)
        else:
            c_k = np.zeros_like(u_k)
        w_main += np.einsum("...m,...m->...", u_k, dw)
        w_corr += np.einsum("...m,...m->...", c_k, dw)
        if need_ghost:
            g_k = np.asarray(model.diffusion(t, xseg))
            # parts of the drift read and of the a-scheduled point that the
            # driver cannot inject stay on the ghost path
            drift_leftover = mem_dir - np.einsum("...dm,...m->...d", g_k, c_k)
            point_leftover = aseg.v - np.einsum("...dm,...m->...d", g_k,
                                                np.einsum("...md,...d->...m", ri, aseg.v))
            ghost[..., n_r + k + 1, :] = (ghost[..., n_r + k, :]
                                          + drift_leftover * h + a[k] * h * point_leftover)
        if meas is not None:
            dth = dtheta(model, t, xseg, aseg)
            dlogM -= dth * dw[..., 0] + meas.theta[..., k] * dth * h
            u_total[..., k] = (u_k + c_k)[..., 0]

    trace = None
    if meas is not None:
        trace = np.einsum("...k,...k->...", u_total, dlog_dw) * h
    return _BatchWeights(w_full=w_main + w_corr, w_main=w_main, dlogM=dlogM, trace=trace)


def _weighted_multipliers(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, valuation: str,
                          T: float, h: float, noise: NoiseGrid, psis: list[SegmentGrid],
                          a: np.ndarray, A_pos: np.ndarray, mode: str,
                          main_stream: str = "adapted"):
    """Per-path payoff values and weight multipliers on supplied increments.

    The delta estimate along psi is mean(payoff * multiplier); exposing the
    pieces on explicit noise lets validation code drive the estimator with
    quadrature nodes or compare per-path weights against closed forms.
    """
    n_T = steps_in(T, h, "horizon T")
    need_measures = valuation != "plain"
    need_tangent = (need_measures and not model.dtheta_zero
                    and model.theta_tangent_profile is None)
    path, ok = euler_solve(model, eta, T, h, noise, stepping="euler", blowup="mask")
    phi_vals = payoff.evaluate(segment_of_path(path, T), model.price_row)
    xsegs = [segment_of_path(path, k * h) for k in range(n_T)]
    ri_list = [np.asarray(model.diffusion_right_inverse(k * h, xsegs[k])) for k in range(n_T)]
    meas = simulate_measures(model, path, noise) if need_measures else None
    dlog_dw = None
    if need_measures:
        tangent = malliavin_tangent(model, path, noise) if need_tangent else None
        dlog_dw = _theta_increment_sensitivity(model, path, noise, meas, tangent)
    mults = []
    for psi in psis:
        wts = _direction_weights(model, path, noise, psi, a, A_pos, ri_list, xsegs, meas, dlog_dw,
                                 main_stream=main_stream)
        if valuation == "plain":
            mult = wts.w_full
        elif valuation == "risk_neutral":
            m_t = meas.M_T()
            if mode == "consistent":
                mult = (m_t / meas.B_T()) * (wts.dlogM + wts.w_full - wts.trace)
            else:
                mult = (m_t / meas.B_T()) * (wts.dlogM + m_t * wts.w_main)
        else:
            dlogG = -wts.dlogM
            trace_g = -wts.trace
            mult = (wts.w_full + trace_g - dlogG) / meas.G_T()
        mults.append(mult)
    return ok, phi_vals, mults


def weight_multipliers(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, valuation: str,
                       T: float, h: float, noise: NoiseGrid, psis: list[SegmentGrid],
                       a_name: Optional[str] = None, mode: str = "consistent",
                       main_stream: str = "adapted"):
    """Public wrapper of the per-path weight computation on explicit noise."""
    if a_name is None:
        a_name = _auto_a_name(payoff)
    n_T = steps_in(T, h, "horizon T")
    n_r = steps_in(model.r, h, "delay r")
    mc_like = McParams(n_paths=max(noise.n_paths, 1), T=T, h=h, seed=noise.seed)
    a = a_weights(a_name, mc_like, payoff.window_reach(model.r))
    _check_a_support(a, payoff, mc_like, model.r)
    A_pos = np.zeros(n_r + n_T + 1)
    A_pos[n_r + 1:] = np.cumsum(a * h)
    return _weighted_multipliers(model, eta, payoff, valuation, T, h, noise, psis, a, A_pos, mode,
                                 main_stream=main_stream)


def malliavin_deltas(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, valuation: str,
                     mc: McParams, psis: list[SegmentGrid],
                     direction_ids: Optional[list[str]] = None,
                     a_name: Optional[str] = None, mode: str = "consistent",
                     return_paths: bool = False):
    """Weight-based delta estimates for several directions on one noise ensemble.

    All directions share the paths, the measure simulation and (when theta
    is state-dependent) the tangent matrix, so the per-direction estimates
    are directly comparable.  mode="paper_literal" evaluates the plain
    product form of the density derivative instead of the integration-by-
    parts-consistent default; it is kept for comparison runs.
    """
    if valuation not in ("plain", "risk_neutral", "benchmark"):
        raise GridError(f"unknown valuation {valuation!r}")
    if mode not in ("consistent", "paper_literal"):
        raise GridError(f"unknown estimator mode {mode!r}")
    if payoff.segment_dependent and mc.T < model.r - 1e-12:
        raise GridError("window payoffs with T < r read the initial segment directly; "
                        "use the finite-difference estimator")
    if not model.diffusion_memoryless:
        raise GridError("weight estimators require a diffusion that reads only the present value")
    if a_name is None:
        a_name = _auto_a_name(payoff)
    a = a_weights(a_name, mc, payoff.window_reach(model.r))
    _check_a_support(a, payoff, mc, model.r)

    n_T = mc.n_T
    n_r = steps_in(model.r, mc.h, "delay r")
    # A at the position of t_k is the schedule mass spent strictly before t_k
    A_pos = np.zeros(n_r + n_T + 1)
    A_pos[n_r + 1:] = np.cumsum(a * mc.h)

    def one(start, count):
        noise = generate_noise_block(mc.seed, start, count, n_T, model.m, mc.h)
        ok, phi_vals, mults = _weighted_multipliers(model, eta, payoff, valuation,
                                                    mc.T, mc.h, noise, psis, a, A_pos, mode)
        return ok, [(phi_vals * m, m) for m in mults]

    results = _map_batches(one, mc)
    n_dirs = len(psis)
    oks = np.concatenate([np.atleast_1d(ok) for ok, _ in results])
    _reject_guard(int(oks.sum()), mc.n_paths, f"delta[{valuation}]")
    estimates, diags, raw = [], [], []
    for i in range(n_dirs):
        vals = np.concatenate([res[1][i][0] for res in results])[oks]
        mults = np.concatenate([res[1][i][1] for res in results])[oks]
        estimates.append(Estimate.from_samples(vals))
        diags.append(Estimate.from_samples(mults))
        if return_paths:
            raw.append(vals)
    ids = direction_ids or [f"dir{i}" for i in range(n_dirs)]
    report = DeltaReport(
        estimator=f"delta_malliavin[{mode}]", valuation=valuation,
        entries=[DeltaEntry(ids[i], estimates[i], diags[i].mean, diags[i].stderr)
                 for i in range(n_dirs)],
        metadata={"a_function": a_name, "mode": mode, "m2_weighting": "equal",
                  "n_rejected": int(mc.n_paths - oks.sum())},
    )
    if return_paths:
        return report, raw
    return report


def _single(model, eta, payoff, valuation, mc, psi, a_name, mode) -> Estimate:
    report = malliavin_deltas(model, eta, payoff, valuation, mc, [psi], a_name=a_name, mode=mode)
    return report.entries[0].estimate


def delta_plain(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, psi: SegmentGrid,
                mc: McParams, a_name: Optional[str] = None) -> Estimate:
    """E[payoff * w(psi)] under the real-world measure, no numeraire."""
    return _single(model, eta, payoff, "plain", mc, psi, a_name, "consistent")


def delta_risk_neutral(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, psi: SegmentGrid,
                       mc: McParams, mode: str = "consistent",
                       a_name: Optional[str] = None) -> Estimate:
    """Delta of the discounted density-weighted price (the measure moves with eta)."""
    return _single(model, eta, payoff, "risk_neutral", mc, psi, a_name, mode)


def delta_benchmark(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, psi: SegmentGrid,
                    mc: McParams, a_name: Optional[str] = None) -> Estimate:
    """Delta of the growth-portfolio-denominated price under the real-world measure."""
    return _single(model, eta, payoff, "benchmark", mc, psi, a_name, "consistent")


# ---------------------------------------------------------------------------
# finite-difference oracle


def delta_fd(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, psi: SegmentGrid,
             eps: float, valuation: str, mc: McParams) -> Estimate:
    """Central difference (p(eta + eps psi) - p(eta - eps psi)) / (2 eps).

    Both bumps ride the same increments and are differenced per path before
    averaging; under the risk-neutral and benchmark valuations the density
    and the growth portfolio are re-simulated with the bumped history, since
    both depend on it.
    """
    if eps <= 0.0:
        raise GridError("fd bump size must be positive")
    up = SegmentGrid(eta.v + eps * psi.v, eta.phi + eps * psi.phi, eta.h, eta.r)
    dn = SegmentGrid(eta.v - eps * psi.v, eta.phi - eps * psi.phi, eta.h, eta.r)
    need_measures = valuation != "plain"

    def value_paths(seg, noise):
        path, ok = euler_solve(model, seg, mc.T, mc.h, noise, stepping="euler", blowup="mask")
        vals = payoff.evaluate(segment_of_path(path, mc.T), model.price_row)
        if need_measures:
            meas = simulate_measures(model, path, noise)
            if valuation == "risk_neutral":
                vals = vals * meas.M_T() / meas.B_T()
            else:
                vals = vals / meas.G_T()
        return vals, ok

    def one(start, count):
        noise = generate_noise_block(mc.seed, start, count, mc.n_T, model.m, mc.h)
        v_up, ok_up = value_paths(up, noise)
        v_dn, ok_dn = value_paths(dn, noise)
        ok = np.atleast_1d(ok_up & ok_dn)
        return (v_up - v_dn)[ok] / (2.0 * eps), np.abs(v_up)[ok]

    results = _map_batches(one, mc)
    diffs = np.concatenate([r[0] for r in results])
    scale = np.concatenate([r[1] for r in results])
    _reject_guard(diffs.size, mc.n_paths, f"delta_fd[{valuation}]")
    est = Estimate.from_samples(diffs)
    noise_floor = 1e-14 * float(np.mean(scale)) / (2.0 * eps)
    if est.stderr > 0 and noise_floor > 0.1 * est.stderr:
        warnings.warn(
            f"fd bump eps={eps:.3g} is near the solver noise floor "
            f"(~{noise_floor:.3g} vs stderr {est.stderr:.3g}); increase eps",
            RuntimeWarning)
    return est


# ---------------------------------------------------------------------------
# delta index


def delta_index(model: ModelSpec, eta: SegmentGrid, payoff: Payoff, valuation: str,
                mc: McParams, dictionary: list[SegmentGrid],
                direction_ids: Optional[list[str]] = None,
                a_name: Optional[str] = None, mode: str = "consistent") -> DeltaReport:
    """Operator norm of the delta over the span of an orthonormal family.

    The Riesz representative sum_i Dp(psi_i) psi_i is assembled over the
    family and its norm reported; with the grid basis this is the exact
    operator norm of the discretized functional.  All directions share one
    noise ensemble.
    """
    k = len(dictionary)
    gram = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            gram[i, j] = m2_inner(dictionary[i], dictionary[j])
    if np.max(np.abs(gram - np.eye(k))) > 1e-8:
        raise GridError("delta_index needs an orthonormal direction family")
    report = malliavin_deltas(model, eta, payoff, valuation, mc, dictionary,
                              direction_ids=direction_ids, a_name=a_name, mode=mode)
    means = np.array([e.estimate.mean for e in report.entries])
    ses = np.array([e.estimate.stderr for e in report.entries])
    idx = float(np.sqrt(np.sum(means ** 2)))
    if idx > 0.0:
        idx_se = float(np.sqrt(np.sum((means * ses) ** 2)) / idx)
    else:
        idx_se = float(np.max(ses)) if ses.size else 0.0
    report.estimator = f"delta_index[{mode}]"
    report.delta_index = idx
    report.delta_index_stderr = idx_se
    return report
