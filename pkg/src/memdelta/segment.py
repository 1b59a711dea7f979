"""Discretized state space for path-dependent dynamics.

The state carried by a process with memory is a pair (v, phi): the present
value v in R^d and the recent past phi, a function on [-r, 0] sampled on a
uniform grid of step h.  The pair lives in the product space
R^d x L2([-r, 0], R^d), with the L2 part represented by its values at
{-r, -r+h, ..., -h} and integrated by left-endpoint quadrature.

All containers are immutable after construction and may carry leading batch
dimensions (one segment per Monte Carlo path); every operation broadcasts
over those dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative slack used to decide whether a time sits on the grid.  Grid times
# are integer multiples of h; anything farther off than this is rejected
# rather than interpolated.
_GRID_RTOL = 1e-9


class GridError(ValueError):
    """Base class for grid construction and lookup failures."""


class GridMismatchError(GridError):
    """Two objects do not share the same (h, r, d) discretization."""


class OffGridError(GridError):
    """A requested evaluation time does not sit on the grid."""


def steps_in(interval: float, h: float, what: str = "interval") -> int:
    """Number of grid steps in ``interval``, requiring exact divisibility by h."""
    if h <= 0.0:
        raise GridError(f"step h must be positive, got {h}")
    if interval < 0.0:
        raise GridError(f"{what} must be nonnegative, got {interval}")
    n = int(round(interval / h))
    if abs(interval - n * h) > _GRID_RTOL * max(h, abs(interval)):
        raise GridError(f"h={h} does not divide {what}={interval} exactly")
    return n


@dataclass(frozen=True)
class SegmentGrid:
    """One element (v, phi) of the discretized state space.

    v has shape (..., d); phi has shape (..., n_r, d) and holds the past
    values at times -r, -r+h, ..., -h.  n_r * h must equal r exactly;
    r = 0 degenerates to a point state with empty phi.
    """

    v: np.ndarray
    phi: np.ndarray
    h: float
    r: float

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v, dtype=np.float64))
        phi = np.asarray(self.phi, dtype=np.float64)
        n_r = steps_in(self.r, self.h, "delay r")
        if phi.ndim < 2:
            phi = phi.reshape(phi.shape + (1,) * (2 - phi.ndim)) if phi.size else phi.reshape((0, v.shape[-1]))
        if phi.shape[-2] != n_r:
            raise GridError(f"phi has {phi.shape[-2]} rows, expected n_r={n_r} for r={self.r}, h={self.h}")
        if n_r and phi.shape[-1] != v.shape[-1]:
            raise GridMismatchError(f"phi dimension {phi.shape[-1]} != v dimension {v.shape[-1]}")
        v.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "phi", phi)

    @property
    def d(self) -> int:
        return self.v.shape[-1]

    @property
    def n_r(self) -> int:
        return self.phi.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.v.shape[:-1]

    def grid_key(self) -> tuple:
        return (round(self.h, 15), round(self.r, 15), self.d)

    def scaled(self, c: float) -> "SegmentGrid":
        return SegmentGrid(c * self.v, c * self.phi, self.h, self.r)

    def __add__(self, other: "SegmentGrid") -> "SegmentGrid":
        _check_compatible(self, other)
        return SegmentGrid(self.v + other.v, self.phi + other.phi, self.h, self.r)

    def __sub__(self, other: "SegmentGrid") -> "SegmentGrid":
        _check_compatible(self, other)
        return SegmentGrid(self.v - other.v, self.phi - other.phi, self.h, self.r)


def zero_segment(h: float, r: float, d: int, batch_shape: tuple = ()) -> SegmentGrid:
    n_r = steps_in(r, h, "delay r")
    return SegmentGrid(np.zeros(batch_shape + (d,)), np.zeros(batch_shape + (n_r, d)), h, r)


def _check_compatible(a: SegmentGrid, b: SegmentGrid) -> None:
    if a.grid_key() != b.grid_key():
        raise GridMismatchError(f"segments live on different grids: {a.grid_key()} vs {b.grid_key()}")


def m2_inner(a: SegmentGrid, b: SegmentGrid) -> np.ndarray | float:
    """Inner product v_a.v_b + h * sum_k phi_a[k].phi_b[k] (left-endpoint rule)."""
    _check_compatible(a, b)
    point = np.einsum("...i,...i->...", a.v, b.v)
    if a.n_r:
        point = point + a.h * np.einsum("...ki,...ki->...", a.phi, b.phi)
    return point if point.ndim else float(point)


def m2_norm(a: SegmentGrid) -> np.ndarray | float:
    return np.sqrt(m2_inner(a, a))


def rho(seg: SegmentGrid, u: float) -> np.ndarray:
    """Evaluate the segment at a time u in [-r, 0].

    u = 0 returns the present value; otherwise u must fall within h/2 of one
    of the past grid points -r, ..., -h and the stored value there is
    returned.  Anything else is an error: evaluation never interpolates.
    """
    h, r = seg.h, seg.r
    tol0 = _GRID_RTOL * max(h, 1.0)
    if abs(u) <= tol0:
        return seg.v
    if u > tol0 or u < -r - tol0:
        raise OffGridError(f"evaluation time {u} outside [-{r}, 0]")
    if seg.n_r == 0:
        raise OffGridError(f"segment has no past component (r=0), cannot evaluate at {u}")
    slot = int(round((u + r) / h))
    slot = min(max(slot, 0), seg.n_r - 1)
    if abs(u - (-r + slot * h)) > 0.5 * h * (1.0 + _GRID_RTOL):
        raise OffGridError(f"evaluation time {u} is farther than h/2 from every past grid point")
    return seg.phi[..., slot, :]


@dataclass(frozen=True)
class PathGrid:
    """Trajectory on the uniform grid {-r, -r+h, ..., T}.

    values has shape (..., n_r + n_T + 1, d).  Segments taken at grid times
    are views into this array.
    """

    values: np.ndarray
    h: float
    r: float
    T: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim < 2:
            raise GridError("path values must have shape (..., n_points, d)")
        n = steps_in(self.r, self.h, "delay r") + steps_in(self.T, self.h, "horizon T") + 1
        if vals.shape[-2] != n:
            raise GridError(f"path has {vals.shape[-2]} points, expected {n}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def n_r(self) -> int:
        return steps_in(self.r, self.h, "delay r")

    @property
    def n_T(self) -> int:
        return steps_in(self.T, self.h, "horizon T")

    @property
    def times(self) -> np.ndarray:
        return -self.r + self.h * np.arange(self.n_r + self.n_T + 1)

    def index_of(self, t: float) -> int:
        """Index of grid time t in values; t must sit on the grid."""
        k = int(round((t + self.r) / self.h))
        if abs(t - (-self.r + k * self.h)) > _GRID_RTOL * max(self.h, abs(t), 1.0):
            raise OffGridError(f"time {t} is not on the grid")
        if k < 0 or k >= self.values.shape[-2]:
            raise OffGridError(f"time {t} outside [-{self.r}, {self.T}]")
        return k

    def value_at(self, t: float) -> np.ndarray:
        return self.values[..., self.index_of(t), :]


def segment_of_path(path: PathGrid, t: float) -> SegmentGrid:
    """Segment (x(t), x(t-r..t-h)) read out of a path at grid time t in [0, T]."""
    if t < -_GRID_RTOL:
        raise OffGridError(f"segment time {t} must lie in [0, T]")
    k = path.index_of(t)
    n_r = path.n_r
    if k < n_r:
        raise OffGridError(f"segment at {t} would reach before -r")
    return SegmentGrid(path.values[..., k, :], path.values[..., k - n_r:k, :], path.h, path.r)


def path_from_segment(seg: SegmentGrid, T: float, fill: float = np.nan) -> PathGrid:
    """Path on [-r, T] whose initial window equals ``seg`` and whose future is ``fill``.

    Useful for round-trip checks; solvers overwrite the future part.
    """
    n_T = steps_in(T, seg.h, "horizon T")
    shape = seg.batch_shape + (seg.n_r + n_T + 1, seg.d)
    vals = np.full(shape, fill)
    if seg.n_r:
        vals[..., :seg.n_r, :] = seg.phi
    vals[..., seg.n_r, :] = seg.v
    return PathGrid(vals, seg.h, seg.r, T)


# ---------------------------------------------------------------------------
# direction dictionaries


def _normalized(seg: SegmentGrid) -> SegmentGrid:
    n = m2_norm(seg)
    if n == 0.0:
        raise GridError("cannot normalize the zero segment")
    return seg.scaled(1.0 / float(n))


def point_direction(h: float, r: float, d: int, component: int = 0) -> SegmentGrid:
    """Unit direction bumping the present value of one component, zero past."""
    seg = zero_segment(h, r, d)
    v = seg.v.copy()
    v[component] = 1.0
    return SegmentGrid(v, seg.phi, h, r)


def constant_direction(h: float, r: float, d: int, component: int = 0) -> SegmentGrid:
    """Normalized direction that is 1 on the whole window in one component."""
    n_r = steps_in(r, h, "delay r")
    v = np.zeros(d)
    v[component] = 1.0
    phi = np.zeros((n_r, d))
    phi[:, component] = 1.0
    return _normalized(SegmentGrid(v, phi, h, r))


def ramp_direction(h: float, r: float, d: int, component: int = 0) -> SegmentGrid:
    """Normalized linear ramp u -> u on [-r, 0] in one component (0 at u=0)."""
    n_r = steps_in(r, h, "delay r")
    if n_r == 0:
        raise GridError("ramp direction needs r > 0")
    phi = np.zeros((n_r, d))
    phi[:, component] = -r + h * np.arange(n_r)
    return _normalized(SegmentGrid(np.zeros(d), phi, h, r))


def direction_dictionary(kind: str, h: float, r: float, d: int) -> list[SegmentGrid]:
    """Families of unit directions used to probe the price derivative.

    grid_basis: the point direction plus one single-bin indicator per past
    slot and component; pairwise orthogonal and spanning the discrete space.
    canonical: point, constant and ramp per component.
    fourier: point direction plus the first cosine/sine modes on [-r, 0].
    """
    n_r = steps_in(r, h, "delay r")
    dirs: list[SegmentGrid] = []
    if kind == "grid_basis":
        for c in range(d):
            dirs.append(point_direction(h, r, d, c))
        for c in range(d):
            for k in range(n_r):
                phi = np.zeros((n_r, d))
                phi[k, c] = 1.0 / np.sqrt(h)
                dirs.append(SegmentGrid(np.zeros(d), phi, h, r))
    elif kind == "canonical":
        for c in range(d):
            dirs.append(point_direction(h, r, d, c))
            if n_r:
                dirs.append(constant_direction(h, r, d, c))
                dirs.append(ramp_direction(h, r, d, c))
    elif kind == "fourier":
        for c in range(d):
            dirs.append(point_direction(h, r, d, c))
            if n_r == 0:
                continue
            u = -r + h * np.arange(n_r)
            for k in (1, 2):
                cos_phi = np.zeros((n_r, d))
                cos_phi[:, c] = np.cos(2.0 * np.pi * k * u / r)
                v = np.zeros(d)
                v[c] = 1.0  # cos mode continues to 1 at u = 0
                dirs.append(_normalized(SegmentGrid(v, cos_phi, h, r)))
                sin_phi = np.zeros((n_r, d))
                sin_phi[:, c] = np.sin(2.0 * np.pi * k * u / r)
                dirs.append(_normalized(SegmentGrid(np.zeros(d), sin_phi, h, r)))
    else:
        raise GridError(f"unknown direction dictionary kind: {kind!r}")
    return dirs


# ---------------------------------------------------------------------------
# initial-segment sources


def segment_from_closed_form(form: str, params: dict, h: float, r: float, d: int = 1) -> SegmentGrid:
    """Initial segment from a named closed form on [-r, 0].

    constant: value; linear: value + slope*t; sine: value + amp*sin(2*pi*freq*t + phase).
    For d > 1, per-component parameter sequences are accepted.
    """
    n_r = steps_in(r, h, "delay r")
    t = -r + h * np.arange(n_r + 1)  # includes 0

    def per_component(key, default=None):
        if key not in params:
            if default is None:
                raise GridError(f"closed form {form!r} needs parameter {key!r}")
            raw = default
        else:
            raw = params[key]
        arr = np.broadcast_to(np.asarray(raw, dtype=np.float64), (d,))
        return arr

    if form == "constant":
        vals = np.tile(per_component("value"), (n_r + 1, 1))
    elif form == "linear":
        vals = per_component("value")[None, :] + t[:, None] * per_component("slope")[None, :]
    elif form == "sine":
        vals = (per_component("value")[None, :]
                + per_component("amp")[None, :]
                * np.sin(2.0 * np.pi * per_component("freq", 1.0)[None, :] * t[:, None]
                         + per_component("phase", 0.0)[None, :]))
    else:
        raise GridError(f"unknown initial-segment form: {form!r}")
    return SegmentGrid(vals[-1], vals[:-1], h, r)


def segment_from_file(path: str, h: float, r: float, d: int = 1) -> SegmentGrid:
    """Initial segment from a whitespace-separated text file.

    One row per grid time from -r to 0 inclusive: time followed by d values.
    Times must sit on the grid; files are rejected otherwise.
    """
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    n_r = steps_in(r, h, "delay r")
    if data.shape != (n_r + 1, d + 1):
        raise GridError(f"segment file {path}: expected {n_r + 1} rows x {d + 1} columns, got {data.shape}")
    expected_t = -r + h * np.arange(n_r + 1)
    if np.max(np.abs(data[:, 0] - expected_t)) > _GRID_RTOL * max(h, r, 1.0):
        raise OffGridError(f"segment file {path}: times do not sit on the grid with h={h}, r={r}")
    vals = data[:, 1:]
    return SegmentGrid(vals[-1], vals[:-1], h, r)
