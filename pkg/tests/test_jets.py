import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from convex_mhd import geometry, jets
from convex_mhd.harness import RunConfig
from convex_mhd.jets import JetSpec, PackingInfeasible, ProfileSet, ResolutionError
from convex_mhd.spectral import Grid

PROF = ProfileSet(3.0, 3.0)


def spec(family=0, k=0, cells=2, osc=5.0, shift=(0.0, 0.0, 0.0), prof=PROF):
    tr = geometry.direction_family(family).triples[k]
    return JetSpec(tr, family, shift, cells, prof.ell_perp, prof.ell_par, osc, geometry.family_clearing_factor(family))


def test_profile_normalization_by_quadrature():
    p = ProfileSet(0.5, 0.5)
    psi2, _ = integrate.quad(lambda s: float(p.psi_unit(s)) ** 2, -1, 1, points=[0])
    assert abs(psi2 - 2 * np.pi) < 1e-8
    phi2, _ = integrate.quad(lambda r: float(p.radial_unit(r * r)[2]) ** 2 * r, 0, 1, limit=200)
    assert abs(2 * np.pi * phi2 - 4 * np.pi**2) < 1e-6


def test_profiles_zero_mean():
    p = ProfileSet(0.5, 0.5)
    m_psi, _ = integrate.quad(lambda s: float(p.psi_unit(s)), -1, 1)
    m_phi, _ = integrate.quad(lambda r: float(p.radial_unit(r * r)[2]) * r, 0, 1, limit=200)
    assert abs(m_psi) < 1e-12 and abs(m_phi) < 1e-10


def test_profile_support_in_unit_ball():
    p = ProfileSet(0.5, 0.5)
    u = np.linspace(1.0, 4.0, 50)
    Phi, dPhi, phi, dphi = p.radial_unit(u)
    assert not np.any(Phi) and not np.any(phi)
    assert not np.any(p.psi_unit(np.linspace(1.0, 3.0, 20)))


@pytest.mark.parametrize("family", range(4))
def test_frame_average_is_xi_outer_xi(family):
    sp = spec(family)
    avg = jets.frame_average_outer(sp, PROF, 64)
    assert np.linalg.norm(avg - np.outer(sp.xi, sp.xi)) <= 1e-6


@pytest.mark.parametrize("family", [0, 2])
@pytest.mark.parametrize("cells", [2, 4])
@pytest.mark.parametrize("frac", [0.0, 0.1, 0.7])
def test_frame_identities(family, cells, frac):
    sp = spec(family, cells=cells, osc=5.0 if family < 2 else 7.0)
    period = 2 * np.pi / (sp.K * sp.oscillation)
    r = jets.identity_residuals(sp, PROF, frac * period, 64)
    assert r.curl_curl <= 1e-6
    assert r.divergence <= 1e-6
    assert r.transport <= 1e-6
    assert jets.corrector_from_formula(sp, PROF, frac * period, 64) <= 1e-6


def test_resolved_jet_is_zero_mean_unit_l2():
    prof = ProfileSet(2.0, 2.0)
    sp = spec(0, cells=1, prof=prof)
    g = Grid(jets.required_grid(sp, points_per_radius=12))
    W = jets.make_jet(sp, prof, 0.0, g, require_resolved=False)
    assert np.max(np.abs(W.mean())) <= 1e-10
    assert abs(np.sqrt(np.mean(np.sum(W.values**2, axis=0))) - 1) <= 1e-4
    # pointwise parallel to xi
    perp = W.values - sp.xi[:, None, None, None] * np.einsum("i...,i->...", W.values, sp.xi)[None]
    assert np.max(np.abs(perp)) <= 1e-12 * W.max_norm()


def test_unresolved_grid_raises_with_required_n():
    sp = spec(0, cells=4, prof=ProfileSet(0.125, 1.0))
    with pytest.raises(ResolutionError) as e:
        jets.make_jet(sp, ProfileSet(0.125, 1.0), 0.0, Grid(32))
    assert e.value.required_n > 32


@given(st.floats(-3, 3), st.floats(0, 1), st.integers(0, 2**31))
def test_time_shift_is_translation_along_xi(t, dt, seed):
    sp = spec(1, k=3, cells=2)
    x = np.random.default_rng(seed).uniform(-np.pi, np.pi, size=(3, 200))
    a = jets.sample_at(sp, PROF, *x, t + dt)
    y = x + sp.oscillation * dt * sp.xi[:, None]
    b = jets.sample_at(sp, PROF, *y, t)
    assert np.max(np.abs(a.psi * a.phi - b.psi * b.phi)) <= 1e-8 * max(np.max(np.abs(a.psi * a.phi)), 1.0)


@given(st.integers(0, 2), st.integers(0, 2**31))
def test_cell_periodicity(axis, seed):
    sp = spec(3, k=5, cells=4, shift=(0.3, -0.2, 1.1))
    x = np.random.default_rng(seed).uniform(-np.pi, np.pi, size=(3, 200))
    y = x.copy()
    y[axis] += 2 * np.pi / sp.cells
    a = jets.sample_at(sp, PROF, *x, 0.2)
    b = jets.sample_at(sp, PROF, *y, 0.2)
    w = np.abs(a.psi * a.phi).max()
    assert np.max(np.abs(a.psi * a.phi - b.psi * b.phi)) <= 1e-9 * max(w, 1.0)


def test_cell_periodicity_on_grid():
    lev = RunConfig().param_set().desk_level(0)
    sp = jets.make_specs(lev)[7]
    prof = ProfileSet(lev.ell_perp, lev.ell_par)
    g = Grid(32)
    W = jets.make_jet(sp, prof, 0.0, g, require_resolved=False).values
    step = g.n // sp.cells
    for ax in (1, 2, 3):
        assert np.array_equal(np.roll(W, step, axis=ax), W) or np.max(np.abs(np.roll(W, step, axis=ax) - W)) <= 1e-12 * np.abs(W).max()


@pytest.fixture(scope="module")
def desk_shifts():
    lev = RunConfig().param_set().desk_level(0)
    prof = ProfileSet(lev.ell_perp, lev.ell_par)
    grid = Grid(lev.grid_n)
    choice = jets.choose_grid_shifts(jets.make_specs(lev), prof, grid, seed=0)
    return lev, prof, grid, choice


def test_grid_shifts_disjoint(desk_shifts):
    lev, prof, grid, choice = desk_shifts
    specs = jets.make_specs(lev, choice.shifts)
    rep = jets.disjointness_report(specs, prof, grid)
    assert len(specs) == 24
    assert rep.grid_ok
    assert rep.grid_overlap_points == 0 and rep.max_pair_overlap_integral == 0.0
    assert all(c > 0 for c in rep.grid_support_counts)


def test_grid_shifts_deterministic(desk_shifts):
    lev, prof, grid, choice = desk_shifts
    again = jets.choose_grid_shifts(jets.make_specs(lev), prof, grid, seed=0)
    assert again.shifts == choice.shifts


def test_single_family_certified_disjoint():
    prof = ProfileSet(0.02, 1.0)
    specs = [spec(0, k, cells=4, prof=prof) for k in range(6)]
    choice = jets.choose_shifts(specs, ell_perp=prof.ell_perp, trials=500)
    shifted = [s.with_shift(choice.shifts[(0, k)]) for k, s in enumerate(specs)]
    assert not jets.certify_disjoint(jets.pair_geometry(shifted), choice.sigmas, prof.ell_perp)


def test_packing_infeasible_for_fat_tubes():
    prof = ProfileSet(np.pi, 1.0)
    specs = [spec(a, k, cells=1, prof=prof) for a in range(4) for k in range(6)]
    with pytest.raises(PackingInfeasible):
        jets.choose_grid_shifts(specs, prof, Grid(16), candidates=50)
    with pytest.raises(PackingInfeasible) as e:
        jets.choose_shifts(specs, ell_perp=np.pi, trials=50)
    assert e.value.pair != (-1, -1)


def test_predicted_slopes_match_formula():
    a = 1.2
    e_perp, e_par = -(20 * a - 1) / 24, -(20 * a - 13) / 12
    assert math.isclose(jets.predicted_slope(a, 2, 0, 0), 0.0, abs_tol=1e-15)
    assert math.isclose(jets.predicted_slope(a, 1, 0, 0), e_perp + 0.5 * e_par)
    assert math.isclose(jets.predicted_slope(a, 2, 1, 0), 1.0)


@pytest.mark.parametrize("N", [0, 1])
def test_scaling_slopes(N):
    fits = jets.measure_scaling(0, (1, 1.5, 2), N, 0, (16, 32, 64), 1.2, nq=600)
    for f in fits:
        assert f.error <= 0.1, (f.p, f.N, f.slope, f.predicted)
        assert not f.excluded


def test_corrector_ratio_tracks_length_ratio():
    slope, ref = jets.corrector_ratio_slope((16, 64), 1.2, nq=400)
    assert abs(slope - ref) <= 0.2 * abs(ref)
