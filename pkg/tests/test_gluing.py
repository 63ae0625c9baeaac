import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convex_mhd import gluing
from convex_mhd.gluing import GoodBadSets, SetInvariantViolation, TimePartition, ramp
from convex_mhd.harness import RunConfig
from convex_mhd.solver import residual_relaxed


@given(st.floats(-0.5, 1.5))
def test_ramp_symmetry(x):
    assert abs(float(ramp(x)[0]) + float(ramp(1 - x)[0]) - 1.0) <= 1e-15


@given(st.floats(0.01, 0.99))
def test_ramp_derivatives_match_differences(x):
    h = 1e-5
    v, d1, d2 = (float(c) for c in ramp(x))
    fd1 = (float(ramp(x + h)[0]) - float(ramp(x - h)[0])) / (2 * h)
    fd2 = (float(ramp(x + h)[1]) - float(ramp(x - h)[1])) / (2 * h)
    assert abs(d1 - fd1) <= 1e-6 * max(1.0, abs(d1))
    assert abs(d2 - fd2) <= 1e-5 * max(1.0, abs(d2))


@given(st.floats(-1e-3, 1 + 1e-3))
def test_ramp_finite_near_ends(x):
    assert all(np.isfinite(float(c)) for c in ramp(x))


def test_ramp_flat_outside():
    v, d1, d2 = ramp(np.array([-1.0, 0.0, 1.0, 2.0]))
    assert list(v) == [0.0, 0.0, 1.0, 1.0]
    assert not np.any(d1) and not np.any(d2)


PART = TimePartition(0, 0.02, 2e-3, 1.0)


def test_partition_of_unity_dense():
    ts = np.random.default_rng(0).uniform(1 / 3, 2 / 3, 3000)
    assert PART.pou_residual(ts) <= 1e-12
    assert PART.pou_residual(np.linspace(0, 1, 2001)) <= 1e-12


def test_ramp_interior_strict():
    for i in (1, 10, 30):
        v = PART.eta(i, PART.knot(i) + PART.tau / 2)[0]
        assert 0 < v < 1


def test_derivative_constant():
    K1, K2 = PART.derivative_constants()
    assert K1 <= 4
    assert K2 > 0


@given(st.integers(1, 48), st.floats(-0.5, 1.5))
def test_cutoff_support_and_plateau(i, s):
    t = PART.knot(i) + s * PART.theta
    v = PART.eta(i, t)[0]
    assert 0.0 <= v <= 1.0
    if t <= PART.knot(i) or t >= PART.knot(i + 1) + PART.tau:
        assert v == 0.0
    if PART.knot(i) + PART.tau <= t <= PART.knot(i + 1):
        assert v == 1.0


def test_partition_rejects_wide_ramp():
    with pytest.raises(ValueError):
        TimePartition(0, 0.02, 0.01, 1.0)


def test_interval_helpers():
    assert gluing.merge([(0.3, 0.4), (0.1, 0.2), (0.15, 0.25), (0.5, 0.5)]) == [(0.1, 0.25), (0.3, 0.4)]
    assert math.isclose(gluing.measure([(0.1, 0.2), (0.15, 0.3)]), 0.2)
    assert gluing.contains([(0.0, 1.0)], [(0.2, 0.3), (0.5, 0.9)])
    assert not gluing.contains([(0.0, 0.4), (0.5, 1.0)], [(0.3, 0.6)])
    assert gluing.meets_open(0.2, 0.3, [(0.3 - 1e-9, 0.5)])
    assert not gluing.meets_open(0.2, 0.3, [(0.3, 0.5)])


def test_initial_sets():
    s = gluing.initial_sets(1.0)
    assert s.bad == [(1 / 3, 2 / 3)] and math.isclose(s.measure, 1 / 3)
    assert s.good == [(0.0, 1 / 3), (2 / 3, 1.0)]


def test_cascade_bookkeeping():
    p = RunConfig().param_set()
    rows = gluing.set_cascade(p, 3)
    quotients = [r["dim_quotient"] for r in rows[1:]]
    assert all(a > b for a, b in zip(quotients, quotients[1:]))
    for prev, r in zip(rows, rows[1:]):
        assert r["count"] <= r["measure"] / (5 * r["tau"]) + 1
        assert r["measure_ratio"] <= r["ratio_bound"] + 1e-12
        assert gluing.contains(prev["bad"], r["bad"])
        assert all(abs((b - a) - 5 * r["tau"]) <= 1e-12 for a, b in r["bad"])


def test_containment_violation_detected():
    sets = GoodBadSets(1, 1.0, [(0.5, 0.51)], 2e-3)
    part = TimePartition(1, 0.02, 2e-3, 1.0)
    with pytest.raises(SetInvariantViolation):
        gluing.update_and_measure_sets(sets, part, support=[(0.1, 0.9)])


def test_empty_support_gives_empty_bad_set():
    new, dq, C = gluing.update_and_measure_sets(gluing.initial_sets(1.0), PART, support=[])
    assert C == [] and new.bad == [] and new.count == 0 and dq == 0.0


# ------------------------------------------------------------ on the desk run


def test_glued_closure(desk_run):
    st0, st1 = desk_run
    g = st1.glued
    times = [t for ts in st1.records["times"].values() for t in ts]
    for t in times:
        f = g.at(t)
        assert residual_relaxed(*f.relaxed(), st0.alpha).relative <= 1e-6


def test_glued_stresses_vanish_near_good_set(desk_run):
    _, st1 = desk_run
    g, S = st1.glued, st1.sets
    tau = S.tau
    for a, b in S.bad[:: max(1, len(S.bad) // 5)]:
        for t in (a + 0.5 * tau, a + 1.9 * tau, b - 1.5 * tau, b - 0.2 * tau):
            assert S.dist_to_good(t) <= 2 * tau
            f = g.at(t)
            assert not np.any(f.R_u.values) and not np.any(f.R_B.values)


def test_glued_equals_input_on_previous_good_set(desk_run):
    st0, st1 = desk_run
    for t in (0.1, 0.3, 0.7, 0.95):
        assert not st0.sets.in_bad(t)
        f, f0 = st1.glued.at(t), st0.at(t)
        assert np.array_equal(f.u.values, f0.u.values) and np.array_equal(f.B.values, f0.B.values)


def test_bad_set_contained(desk_run):
    st0, st1 = desk_run
    assert gluing.contains(st0.sets.bad, st1.sets.bad)
    assert st1.sets.measure <= st0.sets.measure * 10 * st1.sets.tau / st1.glued.part.theta


def test_window_handover_uniqueness(desk_run):
    _, st1 = desk_run
    gaps = st1.glued.uniqueness_gaps(2)
    assert gaps and max(r["gap"] for r in gaps) <= 1e-5


@st.composite
def interval_lists(draw):
    pts = sorted(draw(st.lists(st.floats(0, 1), min_size=0, max_size=12)))
    return [(a, b) for a, b in zip(pts[::2], pts[1::2]) if b > a]


@given(interval_lists())
def test_compute_C_matches_pairwise_scan(support):
    brute = [
        i for i in range(PART.n)
        if gluing.meets_open(max(0.0, PART.knot(i - 1)), min(1.0, PART.knot(i + 1) + PART.tau), support)
    ]
    assert gluing.compute_C(PART, support) == brute


@given(interval_lists(), interval_lists())
def test_contains_matches_pairwise_scan(outer, inner):
    m = gluing.merge(outer)
    brute = all(any(a >= c - 1e-12 and b <= d + 1e-12 for c, d in m) for a, b in inner)
    assert gluing.contains(outer, inner) == brute
