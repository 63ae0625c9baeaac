import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convex_mhd import solver
from convex_mhd.harness import random_solenoidal, solver_suite
from convex_mhd.solver import FlowState, ResolutionExceeded, residual_relaxed, rhs, solve_exact
from convex_mhd.spectral import (
    Grid,
    ScalarField,
    VectorField,
    curl_inverse_then_r,
    div,
    frac_laplacian,
    grad,
    helmholtz_inverse_laplacian,
    inverse_divergence,
    leray_project,
)

G = Grid(16)
X1, X2, X3 = G.coords
Z = np.zeros(G.shape)


def vec(*c):
    return VectorField(G, np.stack([np.broadcast_to(x, G.shape) for x in c]))


def test_zero_state_rhs_and_trajectory():
    z = VectorField.zeros(G)
    du, dB = rhs(z, z, 1.2)
    assert du.max_norm() == 0 and dB.max_norm() == 0
    tr = solve_exact(FlowState(z, z, 0.0), 0.3, 1.2, dt_max=0.05)
    assert all(u.max_norm() == 0 and B.max_norm() == 0 for u, B in tr.nodes)


def test_shear_flow_rhs():
    u = vec(np.sin(X2), Z, Z)
    du, dB = rhs(u, VectorField.zeros(G), 1.0)
    assert np.allclose(du.values, vec(-np.sin(X2), Z, Z).values, atol=1e-13)
    assert dB.max_norm() < 1e-14


def test_hall_single_mode_oracle():
    # B = (0, sin x1, sin x2): div(B (x) B) = (0, 0, sin x1 cos x2)
    B = vec(Z, np.sin(X1), np.sin(X2))
    du, dB = rhs(VectorField.zeros(G), B, 1.0)
    s1, c1, s2, c2 = np.sin(X1), np.cos(X1), np.sin(X2), np.cos(X2)
    hall = vec(s1 * s2, c1 * c2, Z)
    expect_B = hall - B
    assert (dB - expect_B).max_norm() <= 1e-8
    assert (du - vec(Z, Z, s1 * c2)).max_norm() <= 1e-8


@pytest.fixture(scope="module")
def suite():
    return solver_suite(1.2, n=16)


def test_energy_identity(suite):
    assert suite["measured"]["energy_defect_max"] <= 1e-6


def test_temporal_order(suite):
    # halving dt shrinks the terminal gap by at least 3.5x
    assert 2 ** suite["measured"]["temporal_order"] >= 3.5


def test_integrators_agree(suite):
    assert suite["measured"]["integrator_gap"] <= 1e-5


def test_divergence_preserved():
    rng = np.random.default_rng(1)
    init = FlowState(random_solenoidal(G, 0.5, 2, rng), random_solenoidal(G, 0.5, 2, rng), 0.0)
    tr = solve_exact(init, 0.1, 1.1, dt_max=0.01)
    for t in (0.0, 0.037, 0.1):
        assert tr.state(t).divergence_error() <= 1e-8
        assert tr.state(t).mean_error() <= 1e-12


def test_exact_solution_residual_small():
    rng = np.random.default_rng(2)
    init = FlowState(random_solenoidal(G, 0.3, 1, rng), random_solenoidal(G, 0.3, 1, rng), 0.0)
    tr = solve_exact(init, 0.2, 1.2, dt_max=0.005)
    t, h = 0.1, 1e-3
    a, b = tr.state(t - h), tr.state(t + h)
    s = tr.state(t)
    du = (b.u - a.u) * (1 / (2 * h))
    dB = (b.B - a.B) * (1 / (2 * h))
    z = inverse_divergence(VectorField.zeros(G))
    res = residual_relaxed(s.u, s.B, solver.pressure(s.u, s.B), z, z, du, dB, 1.2)
    assert res.relative <= 1e-4


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 1.249))
def test_r_closed_residual(seed, alpha):
    rng = np.random.default_rng(seed)
    u, B = random_solenoidal(G, 1.0, 3, rng), random_solenoidal(G, 1.0, 3, rng)
    du, dB = random_solenoidal(G, 1.0, 3, rng), random_solenoidal(G, 1.0, 3, rng)
    f_u = du + frac_laplacian(u, alpha) + div(solver.momentum_flux(u, B))
    p = -helmholtz_inverse_laplacian(div(f_u))
    R_u = inverse_divergence(leray_project(f_u + grad(p)))
    g = dB + frac_laplacian(B, alpha) + solver.induction_flux(u, B) + solver.hall_flux(B)
    R_B = curl_inverse_then_r(g)
    res = residual_relaxed(u, B, p, R_u, R_B, du, dB, alpha)
    assert res.relative <= 1e-8


def test_residual_norms_reported():
    z = VectorField.zeros(G)
    zt = inverse_divergence(z)
    res = residual_relaxed(vec(np.sin(X2), Z, Z), z, ScalarField.zeros(G), zt, zt, z, z, 1.0)
    n = res.norms()
    assert set(n["u"]) == {"L1", "L2", "Linf"}
    assert math.isclose(n["u"]["Linf"], 1.0, rel_tol=1e-12)


def test_cfl_restart_and_failure(monkeypatch):
    rng = np.random.default_rng(5)
    init = FlowState(random_solenoidal(G, 0.5, 1, rng), random_solenoidal(G, 0.5, 1, rng), 0.0)
    calls = {"n": 0}
    real = solver.cfl_dt

    def shrinking(u, B, cfl=0.25):
        calls["n"] += 1
        return real(u, B, cfl) / (1 + calls["n"])

    monkeypatch.setattr(solver, "cfl_dt", shrinking)
    with pytest.raises(ResolutionExceeded):
        solve_exact(init, 0.1, 1.2, dt_max=1.0, max_restarts=0)


def test_tail_growth_raises(monkeypatch):
    rng = np.random.default_rng(5)
    init = FlowState(random_solenoidal(G, 0.5, 1, rng), random_solenoidal(G, 0.5, 1, rng), 0.0)
    values = iter([0.0] + [1e-2] * 100)
    monkeypatch.setattr(solver, "tail_fraction", lambda u, B: next(values))
    with pytest.raises(ResolutionExceeded):
        solve_exact(init, 0.05, 1.2, dt_max=0.01)


def test_cfl_formula():
    u = vec(2 * np.sin(X2), Z, Z)
    B = vec(Z, Z, 3 * np.sin(X1))
    dx = G.dx
    assert math.isclose(solver.cfl_dt(u, B), 0.25 * min(dx / u.max_norm(), dx * dx / B.max_norm()))


def test_smoothing_ratios_bounded():
    rng = np.random.default_rng(7)
    init = FlowState(random_solenoidal(G, 0.3, 5, rng), random_solenoidal(G, 0.3, 5, rng), 0.0)
    tr = solve_exact(init, 0.05, 1.2, dt_max=0.0025)
    rows = solver.smoothing_ratios(tr)
    for N in (1, 2):
        vals = np.array([v for _, v in rows[N]])
        assert np.all(np.isfinite(vals))
        # the weighted norm vanishes at t0 and grows at most polynomially: no blow-up near t0
        assert vals[0] <= vals.max() and vals[0] < 10 * vals[len(vals) // 2]


def test_stability_gap_zero_stress():
    rng = np.random.default_rng(8)
    init = FlowState(random_solenoidal(G, 0.3, 1, rng), random_solenoidal(G, 0.3, 1, rng), 0.0)
    tr = solve_exact(init, 0.1, 1.2, dt_max=0.01)
    rows = solver.stability_gap(lambda t: (tr.state(t).u, tr.state(t).B), tr, [0.0, 0.05, 0.1], 1.0, 1.0)
    assert all(r["gap"] == 0.0 for r in rows)
    assert all(math.isfinite(r["ratio"]) for r in rows)


def test_alpha_range_enforced():
    z = VectorField.zeros(G)
    with pytest.raises(ValueError):
        solve_exact(FlowState(z, z, 0.0), 0.1, 1.3)
