"""Euler scheme for dynamics whose coefficients read the recent path segment.

The solver advances x(t+h) = x(t) + f(t, x_t) h + g(t, x_t) dW with the
segment x_t frozen at the left endpoint of each step, can restart from an
arbitrary grid time with a supplied segment, and consumes reproducible
seeded noise.  Everything is vectorized over a leading path axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .segment import (
    GridError,
    GridMismatchError,
    PathGrid,
    SegmentGrid,
    steps_in,
)

# Noise is drawn in fixed blocks of this many paths from one counter-based
# stream keyed by (seed, block index).  The constant is part of the noise
# contract: a path's increments depend only on (seed, path_id, n_T, m).
NOISE_BLOCK = 4096

_MASK64 = (1 << 64) - 1


class NumericalBlowupError(RuntimeError):
    """The recursion produced a non-finite value; carries the failing step."""

    def __init__(self, step: int, t: float, n_bad: int):
        self.step = step
        self.t = t
        self.n_bad = n_bad
        super().__init__(f"non-finite solver values at step {step} (t={t:.6g}) on {n_bad} path(s)")


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments dW[k] ~ N(0, h I_m) for one path or a batch.

    dW has shape (n_T, m) for a single path or (n_paths, n_T, m) for a
    contiguous batch starting at ``path_id``.  Regenerating with the same
    (seed, path_id, n_T, m) and h yields bitwise-identical increments,
    independent of scheduling or worker count.
    """

    dW: np.ndarray
    seed: int
    path_id: int
    h: float

    def __post_init__(self):
        dW = np.asarray(self.dW, dtype=np.float64)
        dW.setflags(write=False)
        object.__setattr__(self, "dW", dW)

    @property
    def n_T(self) -> int:
        return self.dW.shape[-2]

    @property
    def m(self) -> int:
        return self.dW.shape[-1]

    @property
    def n_paths(self) -> int:
        return 1 if self.dW.ndim == 2 else self.dW.shape[0]


def _block_normals(seed: int, block: int, n_T: int, m: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed & _MASK64, block & _MASK64], dtype=np.uint64)))
    return rng.standard_normal((NOISE_BLOCK, n_T, m))


def generate_noise_block(seed: int, first_path: int, n_paths: int, n_T: int, m: int, h: float) -> NoiseGrid:
    """Increments for paths first_path .. first_path + n_paths - 1."""
    if n_T < 1:
        raise GridError("noise needs n_T >= 1")
    out = np.empty((n_paths, n_T, m))
    i = 0
    pid = first_path
    sqrt_h = np.sqrt(h)
    while i < n_paths:
        block, offset = divmod(pid, NOISE_BLOCK)
        take = min(NOISE_BLOCK - offset, n_paths - i)
        out[i:i + take] = _block_normals(seed, block, n_T, m)[offset:offset + take]
        i += take
        pid += take
    out *= sqrt_h
    return NoiseGrid(out, seed, first_path, h)


def generate_noise(seed: int, path_id: int, n_T: int, m: int, h: float) -> NoiseGrid:
    """Increments for a single path; a slice of the covering fixed block."""
    block = generate_noise_block(seed, path_id, 1, n_T, m, h)
    return NoiseGrid(block.dW[0], seed, path_id, h)


CoefFn = Callable[[float, SegmentGrid], np.ndarray]
DirCoefFn = Callable[[float, SegmentGrid, SegmentGrid], np.ndarray]
ScalarFn = Callable[[float, SegmentGrid], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient bundle of one market model.

    drift(t, seg) -> (..., d) and diffusion(t, seg) -> (..., d, m) define the
    dynamics; ddrift / ddiffusion are their directional derivatives along a
    segment direction, diffusion_right_inverse(t, seg) -> (..., m, d)
    satisfies diffusion @ right_inverse = I_d when d == m (for d > m it is
    the one-sided inverse acting on the priced row).  rate(t) is the short
    rate.  The optional scalar functionals drift_mu / vol_sigma (and their
    derivatives dmu / dsigma) describe geometric dynamics
    dS/S = mu dt + sigma dW of the priced component and unlock the
    measure-change machinery.
    """

    name: str
    d: int
    m: int
    r: float
    drift: CoefFn
    diffusion: CoefFn
    ddrift: DirCoefFn
    ddiffusion: DirCoefFn
    diffusion_right_inverse: CoefFn
    rate: Callable[[float], float]
    params: dict = field(default_factory=dict)
    drift_mu: Optional[ScalarFn] = None
    vol_sigma: Optional[ScalarFn] = None
    dmu: Optional[DirCoefFn] = None
    dsigma: Optional[DirCoefFn] = None
    price_row: int = 0
    # True when the diffusion reads only the present value of the segment;
    # the weight estimators rely on this.
    diffusion_memoryless: bool = True
    # True when the market price of risk does not depend on the state at
    # all (its derivative vanishes identically); lets estimators skip the
    # tangent-matrix machinery.
    dtheta_zero: bool = False
    # Optional fast tangent profile: dtheta_dw(j_minus_l) giving the
    # sensitivity of theta(t_j) to the increment at step l as a
    # deterministic function of j - l (models with state-free noise
    # propagation in the delayed coordinate).
    theta_tangent_profile: Optional[Callable[[int, float], np.ndarray]] = None

    @property
    def is_geometric(self) -> bool:
        return self.drift_mu is not None and self.vol_sigma is not None


def _as_rate(rate) -> Callable[[float], float]:
    if callable(rate):
        return rate
    r = float(rate)
    return lambda t: r


def probe_model(model: ModelSpec, eta: SegmentGrid, rng: np.random.Generator,
                n_probes: int = 8, fd_eps: float = 1e-6) -> None:
    """Spot-check the coefficient bundle on random segments near eta.

    Verifies the diffusion right-inverse, linearity of the directional
    derivatives, their agreement with central finite differences, and (when
    claimed) that the diffusion ignores the past.  Raises AssertionError on
    the first violation; hypotheses beyond these probes are trusted.
    """
    scale = float(np.max(np.abs(eta.v))) or 1.0
    for _ in range(n_probes):
        t = float(rng.uniform(0.0, 1.0))
        seg = SegmentGrid(eta.v * (1.0 + 0.2 * rng.standard_normal(eta.v.shape)),
                          eta.phi * (1.0 + 0.2 * rng.standard_normal(eta.phi.shape)) if eta.n_r
                          else eta.phi,
                          eta.h, eta.r)
        g = np.asarray(model.diffusion(t, seg))
        g_ri = np.asarray(model.diffusion_right_inverse(t, seg))
        if model.d == model.m:
            err = np.max(np.abs(g @ g_ri - np.eye(model.d)))
        else:
            err = np.max(np.abs(g_ri @ g - np.eye(model.m)))
        assert err < 1e-10, f"{model.name}: diffusion right-inverse off by {err:.2e}"

        d1 = SegmentGrid(rng.standard_normal(eta.v.shape) * scale,
                         rng.standard_normal(eta.phi.shape) * scale, eta.h, eta.r)
        d2 = SegmentGrid(rng.standard_normal(eta.v.shape) * scale,
                         rng.standard_normal(eta.phi.shape) * scale, eta.h, eta.r)
        a, b = rng.standard_normal(2)
        combo = SegmentGrid(a * d1.v + b * d2.v, a * d1.phi + b * d2.phi, eta.h, eta.r)
        for deriv in (model.ddrift, model.ddiffusion):
            lin = np.asarray(deriv(t, seg, combo)) - a * np.asarray(deriv(t, seg, d1)) - b * np.asarray(deriv(t, seg, d2))
            assert np.max(np.abs(lin)) < 1e-10 * scale, f"{model.name}: directional derivative not linear"

        eps = fd_eps * scale
        up = SegmentGrid(seg.v + eps * d1.v, seg.phi + eps * d1.phi, eta.h, eta.r)
        dn = SegmentGrid(seg.v - eps * d1.v, seg.phi - eps * d1.phi, eta.h, eta.r)
        fd = (np.asarray(model.drift(t, up)) - np.asarray(model.drift(t, dn))) / (2 * eps)
        an = np.asarray(model.ddrift(t, seg, d1))
        assert np.max(np.abs(fd - an)) < 1e-5 * scale * (1.0 + np.max(np.abs(an))), \
            f"{model.name}: ddrift disagrees with finite differences"
        fd_g = (np.asarray(model.diffusion(t, up)) - np.asarray(model.diffusion(t, dn))) / (2 * eps)
        an_g = np.asarray(model.ddiffusion(t, seg, d1))
        assert np.max(np.abs(fd_g - an_g)) < 1e-5 * scale * (1.0 + np.max(np.abs(an_g))), \
            f"{model.name}: ddiffusion disagrees with finite differences"

        if model.diffusion_memoryless and eta.n_r:
            hist_only = SegmentGrid(np.zeros_like(d1.v), d1.phi, eta.h, eta.r)
            leak = np.asarray(model.ddiffusion(t, seg, hist_only))
            assert np.max(np.abs(leak)) < 1e-12 * scale, \
                f"{model.name}: diffusion claimed memoryless but reads the past"


def _check_noise(model: ModelSpec, noise: NoiseGrid, n_steps_needed: int) -> None:
    if noise.m != model.m:
        raise GridMismatchError(f"noise has m={noise.m}, model needs m={model.m}")
    if noise.n_T < n_steps_needed:
        raise GridError(f"noise provides {noise.n_T} steps, solve needs {n_steps_needed}")


def euler_solve_from(model: ModelSpec, s: float, seg: SegmentGrid, T: float, h: float,
                     noise: NoiseGrid, stepping: str = "euler",
                     blowup: str = "error") -> PathGrid | tuple[PathGrid, np.ndarray]:
    """Solve on [s - r, T] starting from history ``seg`` at time s.

    Noise increments are indexed globally: step k covers [k h, (k+1) h), so
    restarting with the same NoiseGrid reuses the tail of the same draw and
    the restarted path coincides bitwise with the direct solve.

    stepping="log_euler" advances the log of the priced component instead
    (geometric models only); other components always step directly.
    blowup="mask" returns (path, finite_mask) instead of raising.
    """
    if seg.grid_key() != (round(h, 15), round(model.r, 15), model.d):
        raise GridMismatchError(
            f"initial segment grid {seg.grid_key()} does not match (h={h}, r={model.r}, d={model.d})")
    k0 = steps_in(s, h, "restart time s")
    n_T = steps_in(T, h, "horizon T")
    if k0 > n_T:
        raise GridError(f"restart time {s} beyond horizon {T}")
    n_steps = n_T - k0
    if n_steps:
        _check_noise(model, noise, n_T)
    if stepping not in ("euler", "log_euler"):
        raise GridError(f"unknown stepping mode {stepping!r}")
    if stepping == "log_euler" and (not model.is_geometric or model.m != 1):
        raise GridError(f"model {model.name} has no scalar geometric form; log_euler unavailable")

    n_r = seg.n_r
    noise_batch = noise.dW.shape[:-2]
    batch = np.broadcast_shapes(seg.batch_shape, noise_batch) if n_steps else seg.batch_shape
    vals = np.empty(batch + (n_r + n_steps + 1, model.d))
    if n_r:
        vals[..., :n_r, :] = seg.phi
    vals[..., n_r, :] = seg.v
    ok = np.ones(batch if batch else (1,), dtype=bool)

    row = model.price_row
    for i in range(n_steps):
        k = k0 + i
        t = k * h
        cur = SegmentGrid(vals[..., n_r + i, :], vals[..., i:n_r + i, :], h, model.r)
        f = np.asarray(model.drift(t, cur))
        g = np.asarray(model.diffusion(t, cur))
        dw = noise.dW[..., k, :]
        nxt = cur.v + f * h + np.einsum("...ij,...j->...i", g, dw)
        if stepping == "log_euler":
            mu = np.asarray(model.drift_mu(t, cur))
            sig = np.asarray(model.vol_sigma(t, cur))
            log_step = (mu - 0.5 * sig * sig) * h + sig * dw[..., 0]
            nxt = np.array(nxt)
            nxt[..., row] = cur.v[..., row] * np.exp(log_step)
        finite = np.all(np.isfinite(nxt), axis=-1)
        if not np.all(finite):
            if blowup == "error":
                raise NumericalBlowupError(k, t, int(np.sum(~finite)))
            ok = ok & np.atleast_1d(finite)
            # freeze blown paths at their last finite value; callers drop them
            nxt = np.where(np.asarray(finite)[..., None], nxt, vals[..., n_r + i, :])
        vals[..., n_r + i + 1, :] = nxt

    path = PathGrid(vals, h, model.r, T - s)
    if blowup == "mask":
        return path, ok
    return path


def euler_solve(model: ModelSpec, eta: SegmentGrid, T: float, h: float, noise: NoiseGrid,
                stepping: str = "euler", blowup: str = "error"):
    """Solve on [-r, T] from the initial segment eta (restart at s = 0)."""
    return euler_solve_from(model, 0.0, eta, T, h, noise, stepping=stepping, blowup=blowup)
