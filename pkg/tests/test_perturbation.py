import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convex_mhd import geometry
from convex_mhd.geometry import NotInPositivityRange
from convex_mhd.gluing import GoodBadSets
from convex_mhd.harness import cancellation_suite, identities_on_run, synthetic_stress
from convex_mhd.perturbation import (
    building_block_slopes,
    coefficients,
    dyadic_partition,
    positivity_delta,
    temporal_cutoffs,
)
from convex_mhd.spectral import div

DELTA = positivity_delta()
SCALE = 1e-3


def test_dyadic_at_zero():
    chi = dyadic_partition(0.0, levels=6)
    assert chi[0] == 1.0 and not np.any(chi[1:])


def test_dyadic_at_hundred():
    chi = dyadic_partition(100.0, levels=8)
    assert set(np.nonzero(chi)[0]) == {3, 4}
    assert abs(np.sum(chi**2) - 1) <= 1e-12


@given(st.floats(-6, 12))
def test_dyadic_squares_sum_to_one(logy):
    y = 4.0**logy
    chi = dyadic_partition(y, levels=16)
    assert abs(np.sum(chi**2) - 1) <= 1e-12
    nz = np.nonzero(chi)[0]
    assert len(nz) <= 2 and (len(nz) < 2 or nz[1] - nz[0] == 1)
    for i in nz:
        lo = 0.0 if i == 0 else 4.0 ** (i - 1)
        assert lo <= y <= 4.0 ** (i + 1)


def test_dyadic_rejects_negative():
    with pytest.raises(ValueError):
        dyadic_partition(-1.0)


@given(st.floats(0.05, 9.0))
def test_dyadic_derivative(logy):
    y, h = 4.0**logy, 1e-6 * 4.0**logy
    chi, dchi = dyadic_partition(y, levels=12, derivative=True)
    fd = (dyadic_partition(y + h, levels=12) - dyadic_partition(y - h, levels=12)) / (2 * h)
    assert np.max(np.abs(dchi - fd)) <= 1e-5 * max(1.0, np.max(np.abs(dchi)))


def test_positivity_delta_value():
    assert abs(DELTA - 0.35126) <= 1e-4


def test_zero_stress_gives_constant_coefficients():
    shape = (4, 4, 4)
    z = np.zeros((6,) + shape)
    c = coefficients("magnetic", z, z, 0.7, 0.0, SCALE, DELTA)
    rho0 = 2 / DELTA * 4 * SCALE
    assert c.i_max == 0
    for (fam, _), a in c.a.items():
        want = 0.7 * math.sqrt(rho0) / math.sqrt(2) if fam == 2 else 0.0
        assert np.allclose(a, want, rtol=1e-14, atol=0)
    v = coefficients("velocity", z, z, 1.0, 0.0, SCALE, DELTA)
    assert {k[0] for k, a in v.a.items() if np.any(a)} == {0}


def _exact_averages():
    return {
        (f, k): np.outer(xi, xi)
        for f in range(4)
        for k, xi in enumerate(geometry.direction_family(f).xi_array())
    }


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cancellation_identities_synthetic(seed):
    rep = cancellation_suite(_exact_averages(), SCALE, DELTA, points=8, seed=seed)
    assert rep["pass"]
    for kind in ("magnetic", "velocity"):
        assert rep["measured"][kind]["relative"] <= 1e-8


def test_larger_stress_uses_more_levels():
    rng = np.random.default_rng(4)
    R = synthetic_stress((6, 6, 6), 40 * SCALE, rng)
    c = coefficients("magnetic", R, np.zeros_like(R), 1.0, 0.0, SCALE, DELTA)
    assert c.i_max >= 2
    assert c.identity_residual()["relative"] <= 1e-8
    # chi_i vanishes wherever |R| exceeds 4^(i+1) times the scale
    nrm = np.sqrt(np.sum(R[:3] ** 2, 0) + 2 * np.sum(R[3:] ** 2, 0))
    for i in range(c.chi.shape[0]):
        assert np.all(nrm[c.chi[i] > 0] <= 4.0 ** (i + 1) * SCALE)


def test_coefficient_time_derivative():
    rng = np.random.default_rng(5)
    R0 = synthetic_stress((5, 5, 5), 6 * SCALE, rng)
    R1 = synthetic_stress((5, 5, 5), 6 * SCALE, rng)
    t, h = 0.3, 1e-6

    def at(s):
        return coefficients("velocity", R0 + s * R1, R1, 1.0, 0.0, SCALE, DELTA, levels=6)

    c, cp, cm = at(t), at(t + h), at(t - h)
    for key in c.a:
        fd = (cp.a[key] - cm.a[key]) / (2 * h)
        assert np.max(np.abs(c.da[key] - fd)) <= 1e-5 * max(1.0, np.max(np.abs(c.a[key])))


def test_outside_positivity_range_reported():
    rng = np.random.default_rng(6)
    R = synthetic_stress((4, 4, 4), 200 * SCALE, rng)
    # an inflated radius shrinks rho_i until Id - R / rho_i leaves the certified ball
    with pytest.raises(NotInPositivityRange) as e:
        coefficients("magnetic", R, np.zeros_like(R), 1.0, 0.0, SCALE, 20.0)
    assert "grid point" in str(e.value)


SETS = GoodBadSets(1, 1.0, [(0.4, 0.45)], 0.01)


@pytest.mark.parametrize(
    "dist,tb,tu",
    [(0.5, 0.0, 0.0), (1.0, 0.0, 0.0), (1.5, 0.0, 1.0), (1.6, None, 1.0), (2.0, 1.0, 1.0), (2.5, 1.0, 1.0)],
)
def test_temporal_cutoff_thresholds(dist, tb, tu):
    tau = SETS.tau
    for t in (0.4 + dist * tau, 0.45 - dist * tau):
        cut = temporal_cutoffs(SETS, t)
        if tb is not None:
            assert cut.theta_B == tb
        else:
            assert 0 < cut.theta_B < 1
        assert cut.theta_u == tu


@given(st.floats(0.401, 0.449))
def test_temporal_cutoff_derivative(t):
    h = 1e-7
    c, cp, cm = temporal_cutoffs(SETS, t), temporal_cutoffs(SETS, t + h), temporal_cutoffs(SETS, t - h)
    if abs(t - 0.425) < 2 * h:
        return
    for v, d in (("theta_u", "dtheta_u"), ("theta_B", "dtheta_B")):
        fd = (getattr(cp, v) - getattr(cm, v)) / (2 * h)
        assert abs(getattr(c, d) - fd) <= 1e-3 * max(1.0, abs(fd))


def test_cutoff_kills_magnetic_coefficients():
    rng = np.random.default_rng(7)
    R = synthetic_stress((4, 4, 4), SCALE, rng)
    cut = temporal_cutoffs(SETS, 0.4 + 1.4 * SETS.tau)
    c = coefficients("magnetic", R, R, cut.theta_B, cut.dtheta_B, SCALE, DELTA)
    assert all(not np.any(a) for a in c.a.values())


def test_building_block_slopes():
    rows = building_block_slopes((16, 32, 64), 1.2, nq=600)
    for name, r in rows.items():
        assert r["error"] <= 0.15, (name, r)


# ------------------------------------------------------------ on the desk run


def test_identities_and_disjoint_principal_parts_on_run(desk_run):
    _, st1 = desk_run
    rep = identities_on_run(st1, 1e-8)
    assert rep["identity_max"] <= 1e-8
    assert rep["principal_product_max"] == 0.0


def test_perturbations_divergence_free_and_mean_free(desk_run):
    _, st1 = desk_run
    t = st1.records["times"]["interior"][0]
    parts = st1.stage.parts(t)
    assert not parts.is_zero
    lam = st1.context.level.lam
    for f in (parts.d, parts.w):
        assert div(f).max_norm() <= 1e-6 * lam * max(f.max_norm(), 1e-300)
        assert np.max(np.abs(f.mean())) <= 1e-10


def test_perturbations_vanish_near_good_set(desk_run):
    _, st1 = desk_run
    S = st1.sets
    a, b = S.bad[0]
    for t in (a + 0.3 * S.tau, b - 0.9 * S.tau):
        parts = st1.stage.parts(t)
        assert parts.d.max_norm() == 0.0 and parts.w.max_norm() == 0.0


def test_theta_u_is_one_where_velocity_argument_lives(desk_run):
    _, st1 = desk_run
    for t in st1.records["times"]["interior"]:
        parts = st1.stage.parts(t)
        if parts.is_zero:
            continue
        if np.any(parts.vel.argument):
            assert parts.cut.theta_u == 1.0
