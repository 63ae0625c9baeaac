import numpy as np
import pytest
from hypothesis import given, strategies as st

from convex_mhd.spectral import (
    Grid,
    ParameterDomainError,
    PreconditionViolation,
    ScalarField,
    SymTensorField,
    VectorField,
    curl,
    curl_inverse,
    div,
    frac_laplacian,
    heat_semigroup,
    helmholtz_inverse_laplacian,
    inverse_divergence,
    leray_project,
    read_snapshot,
    sym_outer,
    write_snapshot,
)

from conftest import random_vector

G16 = Grid(16)
X1, X2, X3 = G16.coords


def scalar(values, grid=G16):
    return ScalarField(grid, np.broadcast_to(values, grid.shape))


def vector(*comps, grid=G16):
    return VectorField(grid, np.stack([np.broadcast_to(c, grid.shape) for c in comps]))


def test_grid_rejects_odd_or_small():
    for n in (7, 6, 15):
        with pytest.raises(ValueError):
            Grid(n)


def test_frac_laplacian_unit_mode():
    f = scalar(np.sin(X1))
    assert np.allclose(frac_laplacian(f, 1.0).values, np.sin(X1), atol=1e-13)


def test_frac_laplacian_diagonal_mode():
    f = scalar(np.sin(X1 + X2))
    out = frac_laplacian(f, 1.2).values
    assert np.allclose(out, 2.2974 * np.sin(X1 + X2), atol=1e-4)
    assert np.allclose(out, 2**1.2 * np.sin(X1 + X2), atol=1e-12)


def test_frac_laplacian_kills_constants_and_checks_alpha():
    assert np.max(np.abs(frac_laplacian(scalar(3.0), 1.1).values)) < 1e-14
    with pytest.raises(ParameterDomainError):
        frac_laplacian(scalar(np.sin(X1)), 1.25)


def test_heat_semigroup_values():
    f = scalar(np.cos(X1))
    assert np.allclose(heat_semigroup(f, 0.0, 1.0).values, f.values, atol=1e-14)
    assert np.allclose(heat_semigroup(f, 0.5, 1.0).values, 0.6065 * np.cos(X1), atol=1e-4)
    assert np.allclose(heat_semigroup(f, 0.5, 1.0).values, np.exp(-0.5) * np.cos(X1), atol=1e-13)
    c = scalar(2.5)
    assert np.allclose(heat_semigroup(c, 3.0, 1.1).values, 2.5)


def test_leray_examples():
    grad_field = vector(np.cos(X1), 0 * X1, 0 * X1)
    assert leray_project(grad_field).max_norm() < 1e-14
    shear = vector(np.sin(X2), 0 * X1, 0 * X1)
    assert np.allclose(leray_project(shear).values, shear.values, atol=1e-14)
    v = vector(np.cos(X1), np.cos(X1), 0 * X1)
    assert np.allclose(leray_project(v).values, vector(0 * X1, np.cos(X1), 0 * X1).values, atol=1e-14)


def test_inverse_divergence_closed_form():
    R = inverse_divergence(vector(np.cos(X1), 0 * X1, 0 * X1))
    s = np.sin(X1) * np.ones(G16.shape)
    assert np.allclose(R.entry(0, 0), s, atol=1e-13)
    assert np.allclose(R.entry(1, 1), -0.5 * s, atol=1e-13)
    assert np.allclose(R.entry(2, 2), -0.5 * s, atol=1e-13)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert np.max(np.abs(R.entry(i, j))) < 1e-13
    assert inverse_divergence(vector(1.0, 2.0, 3.0)).max_norm() < 1e-14


def test_curl_inverse_and_laplacian_examples():
    out = curl_inverse(vector(0 * X1, 0 * X1, np.sin(X1)))
    assert np.allclose(out.values, vector(0 * X1, -np.cos(X1), 0 * X1).values, atol=1e-13)
    assert curl_inverse(vector(1.0, 1.0, 1.0)).max_norm() < 1e-14
    lap = helmholtz_inverse_laplacian(scalar(np.sin(2 * X1)))
    assert np.allclose(lap.values, -0.25 * np.sin(2 * X1), atol=1e-13)
    assert np.allclose(helmholtz_inverse_laplacian(scalar(np.sin(X1))).values, -np.sin(X1), atol=1e-13)


def test_curl_inverse_precondition():
    with pytest.raises(PreconditionViolation):
        curl_inverse(vector(np.sin(X1), 0 * X1, 0 * X1), require_divfree=True)


@given(st.integers(0, 2**32 - 1))
def test_inverse_divergence_round_trip(seed):
    g = Grid(32)
    v = random_vector(g, np.random.default_rng(seed), kmax=6)
    R = inverse_divergence(v)
    assert (div(R) - v).max_norm() <= 1e-8 * v.max_norm()
    assert np.max(np.abs(R.trace())) <= 1e-12 * R.max_norm()
    assert R.trace_free


@given(st.integers(0, 2**32 - 1))
def test_leray_idempotent_and_solenoidal(seed):
    v = random_vector(G16, np.random.default_rng(seed), kmax=5)
    P = leray_project(v)
    assert (leray_project(P) - P).max_norm() <= 1e-13 * v.max_norm()
    assert div(P).max_norm() <= 1e-12 * v.max_norm()


@given(st.integers(0, 2**32 - 1))
def test_curl_inverse_round_trip(seed):
    B = leray_project(random_vector(G16, np.random.default_rng(seed), kmax=5))
    back = curl(curl_inverse(B, require_divfree=True))
    assert (back - B).max_norm() <= 1e-8 * B.max_norm()


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(1.0, 1.249))
def test_heat_semigroup_composes(s, t, alpha):
    f = ScalarField(G16, random_vector(G16, np.random.default_rng(0)).values[0])
    lhs = heat_semigroup(heat_semigroup(f, s, alpha), t, alpha)
    rhs = heat_semigroup(f, s + t, alpha)
    assert (lhs - rhs).max_norm() <= 1e-12 * max(f.max_norm(), 1.0)


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    v = random_vector(G16, rng)
    path = write_snapshot(tmp_path / "v", v, 0.25, {"stage": "test"})
    back, meta = read_snapshot(path)
    assert np.array_equal(back.values, v.values)
    assert meta["time"] == 0.25 and meta["provenance"] == {"stage": "test"}
    # x1 runs fastest on disk
    raw = np.fromfile(path, dtype="<f8")
    assert raw[1] == v.values[0, 1, 0, 0]
    R = sym_outer(v).traceless()
    back_R, _ = read_snapshot(write_snapshot(tmp_path / "R", R, 0.0))
    assert isinstance(back_R, SymTensorField) and back_R.trace_free
    assert np.array_equal(back_R.values, R.values)
