"""State-space container and inner-product tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdelta.segment import (
    GridError,
    GridMismatchError,
    OffGridError,
    PathGrid,
    SegmentGrid,
    constant_direction,
    direction_dictionary,
    m2_inner,
    m2_norm,
    path_from_segment,
    point_direction,
    ramp_direction,
    rho,
    segment_from_closed_form,
    segment_from_file,
    segment_of_path,
)


def seg_of(v, phi, h, r):
    return SegmentGrid(np.atleast_1d(np.asarray(v, float)), np.asarray(phi, float).reshape(-1, 1), h, r)


def test_point_mass_inner_product():
    a = seg_of(1.0, np.zeros(8), 0.125, 1.0)
    assert m2_inner(a, a) == 1.0


def test_constant_segment_norm_exact():
    h, r, c = 0.125, 1.0, 3.0
    n_r = 8
    a = seg_of(c, np.full(n_r, c), h, r)
    assert m2_norm(a) == pytest.approx(np.sqrt(c * c + c * c * n_r * h), abs=1e-14)


def test_ramp_norm_squared_converges_to_third():
    # analytic: integral of u^2 over [-1, 0] equals 1/3
    h, r = 2.0 ** -10, 1.0
    u = -r + h * np.arange(int(r / h))
    a = seg_of(0.0, u, h, r)
    assert abs(m2_inner(a, a) - 1.0 / 3.0) < 2.0 * h


def test_ramp_norm_error_scales_linearly_in_h():
    errs = []
    for h in (2.0 ** -6, 2.0 ** -7, 2.0 ** -8):
        u = -1.0 + h * np.arange(int(1.0 / h))
        a = seg_of(0.0, u, h, 1.0)
        errs.append(abs(m2_inner(a, a) - 1.0 / 3.0))
    assert 1.5 < errs[0] / errs[1] < 2.5
    assert 1.5 < errs[1] / errs[2] < 2.5


segments = st.integers(min_value=0, max_value=10 ** 6)


@settings(max_examples=25, deadline=None)
@given(seed=segments)
def test_inner_product_bilinear_symmetric_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    h, r, n_r = 0.25, 1.0, 4
    mk = lambda: seg_of(rng.standard_normal(), rng.standard_normal(n_r), h, r)
    a, b, c = mk(), mk(), mk()
    lam = float(rng.standard_normal())
    assert m2_inner(a, b) == pytest.approx(m2_inner(b, a), rel=1e-12)
    lhs = m2_inner(SegmentGrid(a.v + lam * b.v, a.phi + lam * b.phi, h, r), c)
    assert lhs == pytest.approx(m2_inner(a, c) + lam * m2_inner(b, c), rel=1e-10, abs=1e-12)
    assert abs(m2_inner(a, b)) <= m2_norm(a) * m2_norm(b) + 1e-12


def test_inner_product_rejects_mismatched_grids():
    a = seg_of(1.0, np.zeros(4), 0.25, 1.0)
    b = seg_of(1.0, np.zeros(8), 0.125, 1.0)
    with pytest.raises(GridMismatchError):
        m2_inner(a, b)


class TestRho:
    def test_at_zero_returns_present_value(self):
        seg = seg_of(5.0, np.arange(4), 0.25, 1.0)
        assert rho(seg, 0.0)[0] == 5.0

    def test_left_endpoint(self):
        seg = seg_of(5.0, np.arange(4), 0.25, 1.0)
        assert rho(seg, -1.0)[0] == 0.0

    def test_snaps_within_half_step_of_past_point(self):
        h = 0.25
        seg = seg_of(5.0, np.arange(4), h, 1.0)
        assert rho(seg, -h + h / 3.0)[0] == 3.0

    def test_off_grid_between_last_point_and_zero_rejected(self):
        h = 0.25
        seg = seg_of(5.0, np.arange(4), h, 1.0)
        with pytest.raises(OffGridError):
            rho(seg, -h / 3.0)

    def test_outside_window_rejected(self):
        seg = seg_of(5.0, np.arange(4), 0.25, 1.0)
        for u in (0.1, -1.2):
            with pytest.raises(OffGridError):
                rho(seg, u)


class TestSegmentOfPath:
    def test_at_zero_recovers_initial_segment(self):
        eta = seg_of(2.0, np.arange(4), 0.25, 1.0)
        path = path_from_segment(eta, 1.0)
        back = segment_of_path(path, 0.0)
        np.testing.assert_array_equal(back.v, eta.v)
        np.testing.assert_array_equal(back.phi, eta.phi)

    def test_constant_path(self):
        h, r, T = 0.25, 1.0, 1.0
        vals = np.full((9, 1), 7.0)
        path = PathGrid(vals, h, r, T)
        seg = segment_of_path(path, 0.5)
        assert np.all(seg.v == 7.0) and np.all(seg.phi == 7.0)

    def test_indices_against_naive_indexer(self):
        # values equal to grid times; frozen oracle is direct index arithmetic
        h, r, T = 0.125, 0.5, 1.0
        times = -r + h * np.arange(int((r + T) / h) + 1)
        path = PathGrid(times[:, None], h, r, T)
        n_r = int(r / h)
        for t in (0.0, 0.5, 1.0):
            seg = segment_of_path(path, t)
            naive_phi = np.array([t - r + k * h for k in range(n_r)])
            assert seg.v[0] == pytest.approx(t, abs=1e-12)
            np.testing.assert_allclose(seg.phi[:, 0], naive_phi, atol=1e-12)

    def test_off_grid_time_rejected(self):
        path = PathGrid(np.zeros((9, 1)), 0.25, 1.0, 1.0)
        with pytest.raises(OffGridError):
            segment_of_path(path, 0.3)

    def test_round_trip_write_read(self):
        rng = np.random.default_rng(3)
        eta = seg_of(rng.standard_normal(), rng.standard_normal(8), 0.125, 1.0)
        path = path_from_segment(eta, 0.5)
        back = segment_of_path(path, 0.0)
        np.testing.assert_array_equal(back.v, eta.v)
        np.testing.assert_array_equal(back.phi, eta.phi)


def test_grid_alignment_enforced():
    with pytest.raises(GridError):
        SegmentGrid(np.ones(1), np.zeros((3, 1)), 0.3, 1.0)


def test_zero_delay_degenerates_to_point():
    seg = SegmentGrid(np.ones(1), np.zeros((0, 1)), 0.25, 0.0)
    assert seg.n_r == 0
    assert m2_norm(seg) == 1.0


class TestDictionaries:
    def test_grid_basis_count_and_orthonormality(self):
        h, r = 0.25, 1.0
        dirs = direction_dictionary("grid_basis", h, r, 1)
        assert len(dirs) == 5
        gram = np.array([[m2_inner(a, b) for b in dirs] for a in dirs])
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-12)

    @pytest.mark.parametrize("kind", ["grid_basis", "canonical", "fourier"])
    def test_all_directions_unit_norm(self, kind):
        dirs = direction_dictionary(kind, 0.125, 0.5, 2)
        for d in dirs:
            assert m2_norm(d) == pytest.approx(1.0, abs=1e-12)

    def test_canonical_constant_matches_hand_normalization(self):
        h, r = 2.0 ** -8, 1.0
        d = constant_direction(h, r, 1)
        n_r = int(r / h)
        raw_norm = np.sqrt(1.0 + n_r * h)
        assert d.v[0] == pytest.approx(1.0 / raw_norm, rel=1e-12)
        assert d.phi[0, 0] == pytest.approx(1.0 / raw_norm, rel=1e-12)

    def test_point_direction_is_pure_present_bump(self):
        d = point_direction(0.25, 1.0, 2, component=1)
        assert d.v[1] == 1.0 and d.v[0] == 0.0 and np.all(d.phi == 0.0)

    def test_ramp_needs_history(self):
        with pytest.raises(GridError):
            ramp_direction(0.25, 0.0, 1)


class TestEtaSources:
    def test_closed_forms(self):
        h, r = 0.25, 1.0
        c = segment_from_closed_form("constant", {"value": 2.0}, h, r)
        assert np.all(c.phi == 2.0) and c.v[0] == 2.0
        lin = segment_from_closed_form("linear", {"value": 1.0, "slope": 2.0}, h, r)
        assert lin.v[0] == pytest.approx(1.0)
        assert lin.phi[0, 0] == pytest.approx(1.0 - 2.0)

    def test_file_round_trip(self, tmp_path):
        h, r = 0.25, 1.0
        t = -r + h * np.arange(5)
        vals = np.sin(t)
        fname = tmp_path / "eta.txt"
        np.savetxt(fname, np.column_stack([t, vals]))
        seg = segment_from_file(str(fname), h, r, 1)
        assert seg.v[0] == pytest.approx(vals[-1])
        np.testing.assert_allclose(seg.phi[:, 0], vals[:-1], atol=1e-12)

    def test_file_off_grid_times_rejected(self, tmp_path):
        h, r = 0.25, 1.0
        t = -r + h * np.arange(5) + 0.01
        fname = tmp_path / "eta.txt"
        np.savetxt(fname, np.column_stack([t, np.ones(5)]))
        with pytest.raises(OffGridError):
            segment_from_file(str(fname), h, r, 1)

    def test_unknown_form_rejected(self):
        with pytest.raises(GridError):
            segment_from_closed_form("cubic", {}, 0.25, 1.0)
