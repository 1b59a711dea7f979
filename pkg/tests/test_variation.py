"""First-variation flow and tangent-matrix tests.

The central assertions: both derivative objects agree with central bumps of
the nonlinear solver at first order, the tangent-column/restarted-flow
identity is exact for the discrete recursion, and the variation restart
reproduces the direct flow exactly.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdelta.engine import NoiseGrid, euler_solve, euler_solve_from, generate_noise, generate_noise_block
from memdelta.segment import SegmentGrid, constant_direction, point_direction, ramp_direction, segment_of_path
from memdelta.variation import (
    check_flow_malliavin_bridge,
    malliavin_tangent,
    variation_flow,
    variation_flow_from,
)


def test_zero_direction_stays_zero(ahmp_setup):
    model, eta, h, r, T = ahmp_setup
    noise = generate_noise(0, 0, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    psi = SegmentGrid(np.zeros(1), np.zeros((eta.n_r, 1)), h, r)
    var = variation_flow(model, base, noise, psi)
    assert np.all(var.alpha.values == 0.0)


def test_bs_variation_closed_form(bs_setup):
    # for geometric dynamics the response to a point bump is the bump carried
    # along the realized growth: alpha(t) = psi(0) x(t) / x(0)
    model, eta, h, r, T = bs_setup
    noise = generate_noise_block(1, 0, 16, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    psi = point_direction(h, r, 1)
    var = variation_flow(model, base, noise, psi)
    expected = base.values[..., base.n_r:, 0] / eta.v[0]
    np.testing.assert_allclose(var.alpha.values[..., base.n_r:, 0], expected, rtol=1e-12)


@pytest.mark.parametrize("which", ["kp", "ahmp"])
def test_variation_matches_central_bump(which, kp_setup, ahmp_setup):
    model, eta, h, r, T = kp_setup if which == "kp" else ahmp_setup
    noise = generate_noise_block(2, 0, 8, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    d = model.d
    for psi in (point_direction(h, r, d), constant_direction(h, r, d, d - 1),
                ramp_direction(h, r, d, d - 1)):
        var = variation_flow(model, base, noise, psi)
        eps = 1e-5
        up = SegmentGrid(eta.v + eps * psi.v, eta.phi + eps * psi.phi, h, r)
        dn = SegmentGrid(eta.v - eps * psi.v, eta.phi - eps * psi.phi, h, r)
        bump = (euler_solve(model, up, T, h, noise).values[..., -1, :]
                - euler_solve(model, dn, T, h, noise).values[..., -1, :]) / (2 * eps)
        got = var.alpha.values[..., -1, :]
        assert np.max(np.abs(bump - got)) <= 1e-6 * (1.0 + np.max(np.abs(got)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_variation_linear_in_direction(seed):
    from memdelta.models import ahmp_model
    from memdelta.segment import segment_from_closed_form
    h, r, T = 2.0 ** -4, 0.25, 0.5
    model = ahmp_model(0.25, 0.3, r)
    eta = segment_from_closed_form("constant", {"value": 1.0}, h, r)
    rng = np.random.default_rng(seed)
    noise = generate_noise(seed, 0, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    n_r = eta.n_r
    p1 = SegmentGrid(rng.standard_normal(1), rng.standard_normal((n_r, 1)), h, r)
    p2 = SegmentGrid(rng.standard_normal(1), rng.standard_normal((n_r, 1)), h, r)
    a, b = rng.standard_normal(2)
    combo = SegmentGrid(a * p1.v + b * p2.v, a * p1.phi + b * p2.phi, h, r)
    v_combo = variation_flow(model, base, noise, combo).alpha.values
    v1 = variation_flow(model, base, noise, p1).alpha.values
    v2 = variation_flow(model, base, noise, p2).alpha.values
    scale = np.max(np.abs(v_combo)) + 1.0
    assert np.max(np.abs(v_combo - a * v1 - b * v2)) < 1e-12 * scale


class TestTangent:
    def test_initial_block_is_diffusion(self, ahmp_setup):
        model, eta, h, r, T = ahmp_setup
        T = 0.25
        noise = generate_noise_block(3, 0, 4, int(T / h), 1, h)
        base = euler_solve(model, eta, T, h, noise)
        tang = malliavin_tangent(model, base, noise)
        for j in (0, 3, 7):
            g = np.asarray(model.diffusion(j * h, segment_of_path(base, j * h)))
            np.testing.assert_array_equal(tang.column_value(j, (j + 1) * h), g)

    def test_deterministic_model_has_zero_tangent(self):
        from memdelta.engine import ModelSpec
        h, T = 0.125, 0.5
        model = ModelSpec(
            name="det", d=1, m=1, r=0.0,
            drift=lambda t, seg: 0.3 * seg.v,
            diffusion=lambda t, seg: np.zeros(seg.v.shape + (1,)),
            ddrift=lambda t, seg, dir: 0.3 * dir.v,
            ddiffusion=lambda t, seg, dir: np.zeros(seg.v.shape + (1,)),
            diffusion_right_inverse=lambda t, seg: np.ones(seg.v.shape[:-1] + (1, 1)),
            rate=lambda t: 0.0,
        )
        eta = SegmentGrid(np.ones(1), np.zeros((0, 1)), h, 0.0)
        noise = generate_noise(0, 0, int(T / h), 1, h)
        base = euler_solve(model, eta, T, h, noise)
        tang = malliavin_tangent(model, base, noise)
        assert np.all(tang.values == 0.0)

    def test_bs_ratio_to_terminal_value_nearly_constant(self, bs_setup):
        # for geometric dynamics every increment moves the endpoint by about
        # sigma x(T); check the spread of the column endpoints
        model, eta, h, r, _ = bs_setup
        h = 2.0 ** -8
        T = 1.0
        from memdelta.segment import segment_from_closed_form
        eta = segment_from_closed_form("constant", {"value": 100.0}, h, r)
        noise = generate_noise_block(4, 0, 4, int(T / h), 1, h)
        base = euler_solve(model, eta, T, h, noise)
        tang = malliavin_tangent(model, base, noise)
        x_T = base.values[..., -1, 0]
        cols = tang.values[..., :, -1, 0, 0]  # every column at T
        sigma = model.params["sigma"]
        dev = cols / x_T[..., None] - sigma
        rms = np.sqrt(np.mean(dev ** 2, axis=-1))
        assert np.max(rms) < 0.05 * sigma

    def test_column_matches_increment_bump(self, kp_setup):
        model, eta, h, r, _ = kp_setup
        T = 0.5
        noise = generate_noise(5, 0, int(T / h), 1, h)
        base = euler_solve(model, eta, T, h, noise)
        tang = malliavin_tangent(model, base, noise)
        eps = 1e-5
        for j in (0, int(T / h) // 2, int(T / h) - 1):
            dW_up = noise.dW.copy()
            dW_up[j, 0] += eps
            dW_dn = noise.dW.copy()
            dW_dn[j, 0] -= eps
            up = euler_solve(model, eta, T, h, NoiseGrid(dW_up, 0, 0, h)).values[-1, :]
            dn = euler_solve(model, eta, T, h, NoiseGrid(dW_dn, 0, 0, h)).values[-1, :]
            bump = (up - dn) / (2 * eps)
            got = tang.column_value(j, T)[:, 0]
            assert np.max(np.abs(bump - got)) <= 1e-6 * (1.0 + np.max(np.abs(got)))


class TestBridge:
    @pytest.mark.parametrize("which", ["bs", "kp", "ahmp"])
    def test_column_and_semigroup_identities_exact(self, which, bs_setup, kp_setup, ahmp_setup):
        model, eta, h, r, T = {"bs": bs_setup, "kp": kp_setup, "ahmp": ahmp_setup}[which]
        h = 2.0 ** -5
        from memdelta.segment import segment_from_closed_form
        from memdelta.models import kp_initial_segment
        if which == "kp":
            eta = kp_initial_segment(model, segment_from_closed_form("linear", {"value": 0.1, "slope": 0.2}, h, r))
        else:
            eta = segment_from_closed_form("constant", {"value": float(eta.v[0])}, h, r)
        noise = generate_noise_block(6, 0, 4, int(T / h), 1, h)
        base = euler_solve(model, eta, T, h, noise)
        psi = constant_direction(h, r, model.d, model.d - 1)
        for j in (0, 7, 20):
            rep = check_flow_malliavin_bridge(model, base, noise, j, psi=psi, s=0.5)
            assert rep.column_residual <= 1e-12
            assert rep.semigroup_residual <= 1e-12

    def test_column_against_independent_bump(self, ahmp_setup):
        model, eta, h, r, _ = ahmp_setup
        T = 0.5
        rng = np.random.default_rng(0)
        for trial in range(10):
            noise = generate_noise(100 + trial, 0, int(T / h), 1, h)
            base = euler_solve(model, eta, T, h, noise)
            tang = malliavin_tangent(model, base, noise)
            j = int(rng.integers(0, int(T / h)))
            eps = 1e-5
            dW_up = noise.dW.copy()
            dW_up[j, 0] += eps
            dW_dn = noise.dW.copy()
            dW_dn[j, 0] -= eps
            bump = (euler_solve(model, eta, T, h, NoiseGrid(dW_up, 0, 0, h)).values[-1, 0]
                    - euler_solve(model, eta, T, h, NoiseGrid(dW_dn, 0, 0, h)).values[-1, 0]) / (2 * eps)
            got = tang.column_value(j, T)[0, 0]
            assert abs(bump - got) <= 1e-5 * (1.0 + abs(got))


def test_restarted_solver_bump_matches_restarted_variation(ahmp_setup):
    # perturb the restart segment of the nonlinear solver and compare the
    # scaled difference against the variation flow started at the same time
    model, eta, h, r, T = ahmp_setup
    noise = generate_noise_block(11, 0, 8, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    s = 0.5
    seg_s = segment_of_path(base, s)
    psi = constant_direction(h, r, 1)
    eps = 1e-5
    up = SegmentGrid(seg_s.v + eps * psi.v, seg_s.phi + eps * psi.phi, h, r)
    dn = SegmentGrid(seg_s.v - eps * psi.v, seg_s.phi - eps * psi.phi, h, r)
    bump = (euler_solve_from(model, s, up, T, h, noise).values[..., -1, :]
            - euler_solve_from(model, s, dn, T, h, noise).values[..., -1, :]) / (2 * eps)
    got = variation_flow_from(model, base, noise, s, psi).alpha.values[..., -1, :]
    assert np.max(np.abs(bump - got)) <= 1e-6 * (1.0 + np.max(np.abs(got)))


def test_variation_restart_with_full_segment_is_exact(ahmp_setup):
    model, eta, h, r, T = ahmp_setup
    noise = generate_noise_block(7, 0, 8, int(T / h), 1, h)
    base = euler_solve(model, eta, T, h, noise)
    psi = ramp_direction(h, r, 1)
    direct = variation_flow(model, base, noise, psi)
    s = 0.5
    k_s = base.index_of(s) - base.n_r
    mid = SegmentGrid(direct.alpha.values[..., base.n_r + k_s, :],
                      direct.alpha.values[..., k_s:base.n_r + k_s, :], h, r)
    restarted = variation_flow_from(model, base, noise, s, mid)
    np.testing.assert_array_equal(restarted.alpha.values[..., restarted.alpha.n_r:, :],
                                  direct.alpha.values[..., base.n_r + k_s:, :])
