"""First-variation flows and the increment tangent matrix.

Both objects are forward-mode algorithmic derivatives of the Euler
recursion itself: the variation flow differentiates with respect to the
initial segment along a supplied direction, the tangent matrix with respect
to each Brownian increment.  Because they differentiate the same discrete
recursion, a tangent column equals the variation flow restarted one step
after its increment with the diffusion value as point mass and empty
history; that identity is exact and is exposed as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ModelSpec, NoiseGrid
from .segment import (
    GridError,
    GridMismatchError,
    PathGrid,
    SegmentGrid,
    segment_of_path,
    steps_in,
)


@dataclass(frozen=True)
class VariationPath:
    """Directional derivative of the solution along psi, as a path.

    alpha(t) for t >= 0 solves the linearized recursion; on [-r, 0] it
    equals psi itself.  Linear in psi by construction.
    """

    alpha: PathGrid
    psi: SegmentGrid


def variation_flow_from(model: ModelSpec, base: PathGrid, noise: NoiseGrid, s: float,
                        init: SegmentGrid) -> VariationPath:
    """Propagate a direction from time s >= 0 along the linearized recursion.

    ``base`` must be the solver output for the same noise.  The returned
    path lives on [s - r, T] with its own time origin at s.
    """
    h, r = base.h, base.r
    if init.grid_key() != (round(h, 15), round(r, 15), base.d):
        raise GridMismatchError("direction grid does not match the base path")
    k0 = steps_in(s, h, "restart time s")
    n_T = base.n_T
    if k0 > n_T:
        raise GridError(f"restart time {s} beyond horizon")
    n_r = base.n_r
    batch = np.broadcast_shapes(base.values.shape[:-2], init.batch_shape)
    vals = np.empty(batch + (n_r + (n_T - k0) + 1, base.d))
    if n_r:
        vals[..., :n_r, :] = init.phi
    vals[..., n_r, :] = init.v

    for i in range(n_T - k0):
        k = k0 + i
        t = k * h
        xseg = segment_of_path(base, t)
        aseg = SegmentGrid(vals[..., n_r + i, :], vals[..., i:n_r + i, :], h, r)
        df = np.asarray(model.ddrift(t, xseg, aseg))
        dg = np.asarray(model.ddiffusion(t, xseg, aseg))
        dw = noise.dW[..., k, :]
        vals[..., n_r + i + 1, :] = vals[..., n_r + i, :] + df * h + np.einsum("...ij,...j->...i", dg, dw)

    return VariationPath(PathGrid(vals, h, r, (n_T - k0) * h), init)


def variation_flow(model: ModelSpec, base: PathGrid, noise: NoiseGrid,
                   psi: SegmentGrid) -> VariationPath:
    """Directional derivative of the solution with respect to its initial segment."""
    return variation_flow_from(model, base, noise, 0.0, psi)


@dataclass(frozen=True)
class TangentMatrix:
    """Derivatives of the path with respect to each Brownian increment.

    values[..., j, pos, :, :] is the (d, m) sensitivity of x at grid
    position ``pos`` (position 0 is time -r) to the increment of step j.
    Column j vanishes up to and including time t_j and starts from the
    diffusion matrix at t_{j+1}.  Storage is O(n_T^2) per path; intended
    for moderate step counts.
    """

    values: np.ndarray
    h: float
    r: float
    T: float

    @property
    def n_T(self) -> int:
        return self.values.shape[-4]

    @property
    def n_r(self) -> int:
        return steps_in(self.r, self.h, "delay r")

    def _pos(self, t: float) -> int:
        k = int(round((t + self.r) / self.h))
        if abs(t - (-self.r + k * self.h)) > 1e-9 * max(self.h, 1.0):
            raise GridError(f"time {t} not on the tangent grid")
        return k

    def column_value(self, j: int, t: float) -> np.ndarray:
        """(..., d, m) sensitivity of x(t) to increment j."""
        return self.values[..., j, self._pos(t), :, :]

    def column_direction(self, j: int, t: float) -> SegmentGrid:
        """Column j's segment at time t as a direction batched over the m axis."""
        pos = self._pos(t)
        n_r = self.n_r
        col = self.values[..., j, :, :, :]
        v = np.moveaxis(col[..., pos, :, :], -1, -2)  # (..., m, d)
        phi = np.moveaxis(col[..., pos - n_r:pos, :, :], -1, -3)  # (..., m, n_r, d)
        return SegmentGrid(v, phi, self.h, self.r)


def malliavin_tangent(model: ModelSpec, base: PathGrid, noise: NoiseGrid) -> TangentMatrix:
    """Differentiate the Euler recursion with respect to every increment.

    All columns are propagated together through one pass of the linearized
    recursion; column j is seeded with diffusion(t_j, x_{t_j}) at t_{j+1}
    and zero history.
    """
    h, r = base.h, base.r
    n_T, n_r, d, m = base.n_T, base.n_r, base.d, model.m
    batch = base.values.shape[:-2]
    vals = np.zeros(batch + (n_T, n_r + n_T + 1, d, m))

    for k in range(n_T):
        t = k * h
        xseg = segment_of_path(base, t)
        if k > 0:
            pos = n_r + k
            # directions: columns j < k, batched over (j, m)
            v = np.moveaxis(vals[..., :k, pos, :, :], -1, -2)
            phi = np.moveaxis(vals[..., :k, pos - n_r:pos, :, :], -1, -3)
            dirs = SegmentGrid(v, phi, h, r)
            xv = xseg.v[..., None, None, :]
            xphi = xseg.phi[..., None, None, :, :]
            xbig = SegmentGrid(np.broadcast_to(xv, v.shape), np.broadcast_to(xphi, phi.shape), h, r)
            df = np.asarray(model.ddrift(t, xbig, dirs))
            dg = np.asarray(model.ddiffusion(t, xbig, dirs))
            dw = noise.dW[..., k, :]
            step = df * h + np.einsum("...ij,...j->...i", dg, dw[..., None, None, :])
            vals[..., :k, pos + 1, :, :] = vals[..., :k, pos, :, :] + np.moveaxis(step, -2, -1)
        vals[..., k, n_r + k + 1, :, :] = np.asarray(model.diffusion(t, xseg))

    return TangentMatrix(vals, h, r, base.T)


@dataclass(frozen=True)
class BridgeReport:
    """Residuals of the two exact discrete identities tying flows to tangents."""

    column_residual: float
    semigroup_residual: float


def check_flow_malliavin_bridge(model: ModelSpec, base: PathGrid, noise: NoiseGrid,
                                j: int, psi: SegmentGrid | None = None,
                                s: float | None = None,
                                tangent: TangentMatrix | None = None) -> BridgeReport:
    """Diagnostic for the bridge between increment tangents and variation flows.

    Column check: tangent column j must equal the variation flow restarted
    at t_{j+1} from the point mass diffusion(t_j, x_{t_j}) e_i with empty
    history, for every driver coordinate i.

    Semigroup check: pushing psi to time s and restarting from the full
    segment of the variation there must reproduce the direct variation on
    [s, T].  Both identities hold exactly for the discrete recursion.
    """
    h, r = base.h, base.r
    n_T, n_r = base.n_T, base.n_r
    if not 0 <= j < n_T:
        raise GridError(f"step index {j} out of range")
    if tangent is None:
        tangent = malliavin_tangent(model, base, noise)

    t_j = j * h
    g_j = np.asarray(model.diffusion(t_j, segment_of_path(base, t_j)))  # (..., d, m)
    col_res = 0.0
    scale = float(np.max(np.abs(tangent.values[..., j, :, :, :]))) or 1.0
    for i in range(model.m):
        init = SegmentGrid(g_j[..., :, i], np.zeros(g_j.shape[:-2] + (n_r, base.d)), h, r)
        restarted = variation_flow_from(model, base, noise, (j + 1) * h, init)
        rest_vals = restarted.alpha.values[..., n_r:, :]  # times t_{j+1}..T
        stored = tangent.values[..., j, n_r + j + 1:, :, i]
        col_res = max(col_res, float(np.max(np.abs(rest_vals - stored))) / scale)

    semi_res = 0.0
    if psi is not None:
        if s is None:
            s = (n_T // 2) * h
        direct = variation_flow(model, base, noise, psi)
        k_s = steps_in(s, h, "restart time s")
        mid = SegmentGrid(direct.alpha.values[..., n_r + k_s, :],
                          direct.alpha.values[..., k_s:n_r + k_s, :], h, r)
        restarted = variation_flow_from(model, base, noise, s, mid)
        tail_direct = direct.alpha.values[..., n_r + k_s:, :]
        tail_restart = restarted.alpha.values[..., n_r:, :]
        denom = float(np.max(np.abs(tail_direct))) or 1.0
        semi_res = float(np.max(np.abs(tail_direct - tail_restart))) / denom

    return BridgeReport(column_residual=col_res, semigroup_residual=semi_res)
