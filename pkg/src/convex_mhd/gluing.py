"""Temporal gluing of exact local solutions and the good/bad time-set bookkeeping.

Knots are t_i = i*theta over all of [0, T].  Window i carries the cutoff
eta_i, which ramps up on [t_i, t_i + tau] and down on [t_{i+1}, t_{i+1} + tau];
eta_0 is clamped to 1 near t = 0, so the cutoffs sum to one on [0, T].
Windows whose neighbourhood meets the stress support are replaced by exact
solutions; all others reuse the incoming state, which is already exact there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .solver import (
    FlowState,
    ResolutionExceeded,
    Trajectory,
    induction_flux,
    pressure,
    rhs,
    solve_exact,
)
from .spectral import (
    ScalarField,
    SymTensorField,
    VectorField,
    curl_inverse_then_r,
    inverse_divergence,
    sym_outer,
    traceless_outer,
)

Interval = tuple[float, float]


class GluingError(RuntimeError):
    def __init__(self, window: int, cause: Exception):
        super().__init__(f"local solve for window {window} failed: {cause}")
        self.window = window
        self.cause = cause


class SetInvariantViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- ramp


def _f(x):
    x = np.asarray(x, dtype=float)
    # exp(-1/x) underflows to zero below x ~ 1/745; cut there so derivatives stay finite
    pos = x > 1.0 / 700.0
    safe = np.where(pos, x, 1.0)
    f = np.where(pos, np.exp(-1.0 / safe), 0.0)
    f1 = np.where(pos, f / safe**2, 0.0)
    f2 = np.where(pos, f * (1.0 / safe**4 - 2.0 / safe**3), 0.0)
    return f, f1, f2


def ramp(x):
    """C^infinity step 0 -> 1 on [0, 1] with its first two derivatives."""
    x = np.asarray(x, dtype=float)
    a, a1, a2 = _f(x)
    b, b1, b2 = _f(1.0 - x)
    b1, b2 = -b1, b2
    S = a + b
    S1 = a1 + b1
    N = a1 * b - a * b1
    N1 = a2 * b - a * b2
    v = a / S
    d1 = N / S**2
    d2 = N1 / S**2 - 2 * N * S1 / S**3
    return v, d1, d2


def _scalar(t):
    return tuple(float(np.asarray(c)) for c in t)


# ---------------------------------------------------------------- partition


@dataclass(frozen=True)
class TimePartition:
    q: int
    theta: float
    tau: float
    T: float

    def __post_init__(self):
        if not (0 < self.tau < self.theta / 2):
            raise ValueError(f"need 0 < tau < theta/2, got tau={self.tau}, theta={self.theta}")

    @property
    def n(self) -> int:
        return max(1, math.ceil(self.T / self.theta - 1e-9))

    def knot(self, i: int) -> float:
        return i * self.theta

    def eta(self, i: int, t: float) -> tuple[float, float, float]:
        """(eta_i, eta_i', eta_i'') at t."""
        if i < 0 or i >= self.n:
            return 0.0, 0.0, 0.0
        if i == 0:
            up = (1.0, 0.0, 0.0)
        else:
            v, d1, d2 = _scalar(ramp((t - self.knot(i)) / self.tau))
            up = (v, d1 / self.tau, d2 / self.tau**2)
        if i == self.n - 1:
            down = (1.0, 0.0, 0.0)
        else:
            v, d1, d2 = _scalar(ramp((t - self.knot(i + 1)) / self.tau))
            down = (1.0 - v, -d1 / self.tau, -d2 / self.tau**2)
        return (
            up[0] * down[0],
            up[1] * down[0] + up[0] * down[1],
            up[2] * down[0] + 2 * up[1] * down[1] + up[0] * down[2],
        )

    def active(self, t: float) -> list[int]:
        """Windows with eta_i(t) > 0, in increasing order (at most two)."""
        i = min(max(int(math.floor(t / self.theta + 1e-12)), 0), self.n - 1)
        out = [j for j in (i - 1, i) if j >= 0 and self.eta(j, t)[0] > 0]
        return out or [i]

    def pou_residual(self, ts) -> float:
        # sum over every window that could touch t, not just the active ones
        def total(t):
            i = int(math.floor(t / self.theta))
            return sum(self.eta(j, t)[0] for j in range(i - 2, i + 3))

        return max(abs(total(t) - 1.0) for t in ts)

    def derivative_constants(self, samples: int = 2001) -> tuple[float, float]:
        """Measured max |eta'| tau and max |eta''| tau^2 over one ramp."""
        x = np.linspace(0.0, 1.0, samples)
        _, d1, d2 = ramp(x)
        return float(np.max(np.abs(d1))), float(np.max(np.abs(d2)))


def build_partition(params, q: int) -> TimePartition:
    d = params.desk_level(q)
    return TimePartition(q, d.theta_next, d.tau_next, float(params.T))


# ---------------------------------------------------------------- intervals


def merge(intervals) -> list[Interval]:
    out: list[list[float]] = []
    for a, b in sorted(intervals):
        if b <= a:
            continue
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def measure(intervals) -> float:
    return float(sum(b - a for a, b in merge(intervals)))


def contains(outer, inner, tol: float = 1e-12) -> bool:
    """Every inner interval lies inside a single outer interval."""
    outer = merge(outer)
    if not inner:
        return True
    if not outer:
        return False
    lo = np.array([c for c, _ in outer])
    hi = np.array([d for _, d in outer])
    a = np.array([x for x, _ in inner])
    b = np.array([y for _, y in inner])
    # the only candidate is the last outer interval starting at or before a
    k = np.searchsorted(lo, a + tol, side="right") - 1
    ok = k >= 0
    kk = np.maximum(k, 0)
    return bool(np.all(ok & (a >= lo[kk] - tol) & (b <= hi[kk] + tol)))


def shrink(intervals, r: float) -> list[Interval]:
    return [(a + r, b - r) for a, b in intervals if b - a > 2 * r]


def meets_open(lo: float, hi: float, intervals) -> bool:
    """[lo, hi] intersects some open interval (a, b)."""
    return any(max(lo, a) < min(hi, b) for a, b in intervals)


@dataclass
class GoodBadSets:
    """Bad set as sorted disjoint open intervals in [0, T]; good set is the closed complement."""

    q: int
    T: float
    bad: list[Interval]
    tau: float

    @property
    def good(self) -> list[Interval]:
        out, lo = [], 0.0
        for a, b in merge(self.bad):
            out.append((lo, a))
            lo = b
        out.append((lo, self.T))
        return out

    def in_bad(self, t: float) -> bool:
        return any(a < t < b for a, b in self.bad)

    def dist_to_good(self, t: float) -> float:
        for a, b in self.bad:
            if a < t < b:
                return min(t - a, b - t)
        return 0.0

    @property
    def measure(self) -> float:
        return measure(self.bad)

    @property
    def count(self) -> int:
        return len(merge(self.bad))

    def dim_quotient(self) -> float:
        """Finite-level box-counting quotient log(count) / -log(5 tau)."""
        return math.log(self.count) / -math.log(5 * self.tau) if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "bad": [list(b) for b in self.bad],
            "measure": self.measure,
            "count": self.count,
            "tau": self.tau,
            "dim_quotient": self.dim_quotient(),
        }


def initial_sets(T: float) -> GoodBadSets:
    return GoodBadSets(0, T, [(T / 3, 2 * T / 3)], T / 15)


def level0_support(T: float) -> list[Interval]:
    return [(2 * T / 5, 3 * T / 5)]


def stress_support(sets: GoodBadSets) -> list[Interval]:
    """Open intervals outside of which the level-q stress vanishes."""
    if sets.q == 0:
        return level0_support(sets.T)
    return shrink(sets.bad, sets.tau)


def compute_C(part: TimePartition, support) -> list[int]:
    sup = merge(support)
    if not sup:
        return []
    i = np.arange(part.n)
    lo = np.maximum(0.0, (i - 1) * part.theta)
    hi = np.minimum(part.T, (i + 1) * part.theta + part.tau)
    a = np.array([x for x, _ in sup])
    b = np.array([y for _, y in sup])
    # [lo, hi] meets (a_k, b_k) iff a_k < hi and b_k > lo; with sorted disjoint
    # intervals the last one starting below hi decides
    k = np.searchsorted(a, hi, side="left") - 1
    hit = (k >= 0) & (b[np.maximum(k, 0)] > lo) & (np.maximum(lo, a[np.maximum(k, 0)]) < hi)
    return [int(j) for j in np.nonzero(hit)[0]]


def next_bad(part: TimePartition, C) -> list[Interval]:
    idx = sorted(set(C) | {i + 1 for i in C})
    iv = [(part.knot(i) - 2 * part.tau, part.knot(i) + 3 * part.tau) for i in idx]
    return [(max(a, 0.0), min(b, part.T)) for a, b in iv]


def update_and_measure_sets(sets: GoodBadSets, part: TimePartition, support=None) -> tuple[GoodBadSets, float, list[int]]:
    """Bad set at level q+1, its dimension quotient, and the index set C."""
    if support is None:
        support = stress_support(sets)
    C = compute_C(part, support)
    bad = next_bad(part, C)
    if len(merge(bad)) != len(bad):
        raise SetInvariantViolation("bad intervals at the next level overlap")
    if not contains(sets.bad, bad):
        raise SetInvariantViolation(f"bad set at level {sets.q + 1} is not inside level {sets.q}")
    new = GoodBadSets(sets.q + 1, sets.T, bad, part.tau)
    if new.count > new.measure / (5 * part.tau) + 1 + 1e-9:
        raise SetInvariantViolation("interval count exceeds measure / (5 tau) + 1")
    return new, new.dim_quotient(), C


def set_cascade(params, levels: int) -> list[dict]:
    """Set bookkeeping alone over several levels, with stresses assumed on the certified supports."""
    sets = initial_sets(float(params.T))
    rows = [{**sets.to_dict(), "C": []}]
    for q in range(levels):
        part = build_partition(params, q)
        sets, dq, C = update_and_measure_sets(sets, part)
        ratio = sets.measure / rows[-1]["measure"]
        rows.append({**sets.to_dict(), "C_size": len(C), "measure_ratio": ratio, "ratio_bound": 10 * part.tau / part.theta})
    return rows


# ---------------------------------------------------------------- blending


@dataclass
class Piece:
    """An exact (or reference) state at one time with its rhs-based time derivative."""

    u: VectorField
    B: VectorField
    du: VectorField
    dB: VectorField
    p: ScalarField


def exact_piece(u: VectorField, B: VectorField, alpha: float) -> Piece:
    du, dB = rhs(u, B, alpha)
    return Piece(u, B, du, dB, pressure(u, B))


@dataclass
class GluedFields:
    t: float
    u: VectorField
    B: VectorField
    p: ScalarField
    R_u: SymTensorField
    R_B: SymTensorField
    du: VectorField
    dB: VectorField
    dR_u: SymTensorField
    dR_B: SymTensorField
    windows: tuple = ()
    eta: float = 1.0

    def relaxed(self):
        return self.u, self.B, self.p, self.R_u, self.R_B, self.du, self.dB


def single(t: float, a: Piece, windows=()) -> GluedFields:
    g = a.u.grid
    z = SymTensorField.zeros(g, trace_free=True)
    return GluedFields(t, a.u, a.B, a.p, z, z, a.du, a.dB, z, z, tuple(windows))


def blend(t: float, eta: tuple[float, float, float], a: Piece, b: Piece, windows=()) -> GluedFields:
    """eta*a + (1-eta)*b for two exact pieces, with the stresses that make it a relaxed solution.

    With delta = a - b and e = eta(eta - 1):
      R_u = eta' R(delta u) + e (delta u (x)o delta u - delta B (x)o delta B)
      R_B = eta' R curl^{-1} delta B + e (delta B (x)o delta B + R curl^{-1} div(delta u (x) delta B - delta B (x) delta u))
    """
    h, h1, h2 = eta
    e = h * (h - 1.0)
    e1 = (2 * h - 1.0) * h1
    du, dB = a.u - b.u, a.B - b.B
    ddu, ddB = a.du - b.du, a.dB - b.dB
    u = b.u + du * h
    B = b.B + dB * h
    dtu = b.du + ddu * h + du * h1
    dtB = b.dB + ddB * h + dB * h1
    quad_u = traceless_outer(du) - traceless_outer(dB)
    trace = ScalarField(u.grid, sym_outer(du).trace() - sym_outer(dB).trace())
    p = b.p + (a.p - b.p) * h - trace * (e / 3.0)
    Rdu = inverse_divergence(du)
    R_u = Rdu * h1 + quad_u * e
    dquad_u = (traceless_outer(ddu, du) - traceless_outer(ddB, dB)) * 2.0
    dR_u = Rdu * h2 + inverse_divergence(ddu) * h1 + quad_u * e1 + dquad_u * e
    cdB = curl_inverse_then_r(dB)
    quad_B = traceless_outer(dB) + curl_inverse_then_r(induction_flux(du, dB))
    R_B = cdB * h1 + quad_B * e
    dquad_B = traceless_outer(ddB, dB) * 2.0 + curl_inverse_then_r(induction_flux(ddu, dB) + induction_flux(du, ddB))
    dR_B = cdB * h2 + curl_inverse_then_r(ddB) * h1 + quad_B * e1 + dquad_B * e
    return GluedFields(t, u, B, p, R_u, R_B, dtu, dtB, dR_u, dR_B, tuple(windows), h)


# ---------------------------------------------------------------- gluing


@dataclass
class GluedSolution:
    """The glued relaxed solution at level q, evaluated lazily in time.

    ``source(t)`` returns the incoming (u_q, B_q) at time t.  Windows in C
    hold exact trajectories launched from the incoming state.
    """

    part: TimePartition
    C: list[int]
    windows: dict[int, Trajectory]
    source: Callable[[float], tuple[VectorField, VectorField]]
    alpha: float
    sets_in: GoodBadSets
    sets_out: GoodBadSets
    _cache: dict = field(default_factory=dict, repr=False)

    def piece(self, i: int, t: float) -> Piece:
        if i in self.windows:
            s = self.windows[i].state(t)
            u, B = s.u, s.B
        else:
            u, B = self.source(t)
        return exact_piece(u, B, self.alpha)

    def at(self, t: float) -> GluedFields:
        key = round(t, 15)
        if key in self._cache:
            return self._cache[key]
        act = self.part.active(t)
        if len(act) == 1 or not any(i in self.windows for i in act):
            i = act[-1]
            out = single(t, self.piece(i, t), act)
        else:
            i, j = act
            out = blend(t, self.part.eta(i, t), self.piece(i, t), self.piece(j, t), act)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def uniqueness_gaps(self, samples: int = 3) -> list[dict]:
        """Solver-tolerance gaps where a window in C hands over to the incoming state.

        For i in C with i-1 not in C the incoming state is exact on the overlap
        [t_i, t_i + tau], so the launched solution must reproduce it.
        """
        rows = []
        for i in self.C:
            if i - 1 in self.C or i == 0:
                continue
            for s in np.linspace(0.0, 1.0, samples):
                t = self.part.knot(i) + s * self.part.tau
                w = self.windows[i].state(t)
                u, B = self.source(t)
                gap = max((w.u - u).max_norm(), (w.B - B).max_norm())
                rows.append({"window": i, "t": t, "gap": gap})
        return rows

    def report(self) -> dict:
        return {
            "theta": self.part.theta,
            "tau": self.part.tau,
            "n": self.part.n,
            "C": list(self.C),
            "sets_in": self.sets_in.to_dict(),
            "sets_out": self.sets_out.to_dict(),
            "windows": {i: tr.manifest() | {"energy": None} for i, tr in self.windows.items()},
        }


def glue(
    source: Callable[[float], tuple[VectorField, VectorField]],
    sets: GoodBadSets,
    part: TimePartition,
    alpha: float,
    dt_max: float = 0.005,
    support=None,
    solver_kw: dict | None = None,
) -> GluedSolution:
    """Launch exact solutions on the windows in C and return the glued solution."""
    new_sets, _, C = update_and_measure_sets(sets, part, support)
    windows = {}
    for i in C:
        t0 = max(0.0, part.knot(i - 1))
        t1 = min(part.T, part.knot(i + 1) + part.tau)
        u, B = source(t0)
        try:
            windows[i] = solve_exact(FlowState(u, B, t0), t1, alpha, dt_max=dt_max, **(solver_kw or {}))
        except ResolutionExceeded as exc:
            raise GluingError(i, exc) from exc
    return GluedSolution(part, C, windows, source, alpha, sets, new_sets)
