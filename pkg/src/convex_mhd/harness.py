"""End-to-end iteration (glue, perturb, stress, audit) and verification suites.

The level-0 tuple blends two exact solutions with a temporal ramp.  Each
iterate launches exact solutions on the gluing windows that meet the stress,
adds the jet perturbations, and assembles the new stresses.  Fields are
evaluated lazily in time; the audits and recorded norms use a deterministic
set of sample times chosen from the good and bad sets.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import geometry, gluing, jets, params as params_mod
from .gluing import GluedFields, GoodBadSets, blend, exact_piece, ramp, single
from .perturbation import (
    PerturbationContext,
    build_perturbations,
    coefficients,
    g_b,
    make_context,
    positivity_delta,
    temporal_cutoffs,
    zero_parts,
)
from .solver import (
    FlowState,
    Trajectory,
    homogeneous_norm,
    residual_relaxed,
    rhs,
    solve_exact,
)
from .spectral import Grid, VectorField, leray_project, mean_free
from .stress import NextLevel, closure, next_level, symmetry_defects

DESK_OVERRIDES = {
    "lambda": [16, 32, 64],
    "ell_perp": [0.125, 0.0625, 0.03125],
    "ell_par": [1.0, 1.0, 1.0],
    "theta_next": [0.02, 5e-4, 1.25e-6],
    "tau_next": [2e-3, 5e-6, 1.25e-8],
    "delta_next": [1e-3, 1e-3, 1e-3],
    "delta_q_scale": [1e-3, 1e-3, 1e-3],
    "grid_n": 32,
}

PAPER_AUDIT = {"rho": "11/10", "alpha": "6/5", "b": 10**4, "beta": "1/1000", "eps_R": "1/10000", "a": 2**24, "T": 1, "mode": "paper"}


class InputError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, level: int, cause: Exception):
        self.stage, self.level, self.cause = stage, level, cause
        super().__init__(f"[{stage} q={level}] {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------- config


@dataclass
class SeedConfig:
    kind: str = "random"  # random | identical | zero
    amplitude: float = 0.05
    kmax: int = 1
    seed: int = 0


@dataclass
class SolverConfig:
    dt_max_seed: float = 0.01
    dt_max_glue: float = 0.005
    integrator: str = "rk4"


@dataclass
class CheckConfig:
    closure_tol: float = 1e-6
    trace_tol: float = 1e-10
    identity_tol: float = 1e-8
    pou_tol: float = 1e-12
    agreement_tol: float = 1e-8
    divergence_tol: float = 1e-10
    deep_samples: int = 3
    audit_levels: int = 10
    synthetic_points: int = 10
    jet_frame_n: int = 64


@dataclass
class RunConfig:
    params: dict = field(
        default_factory=lambda: {
            "rho": "1.1", "alpha": "1.2", "b": 2, "beta": "0.001", "eps_R": "0.0001", "a": 16, "T": 1,
            "mode": "desk", "desk_overrides": copy.deepcopy(DESK_OVERRIDES),
        }
    )
    seeds: SeedConfig = field(default_factory=SeedConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    checks: CheckConfig = field(default_factory=CheckConfig)
    levels: int = 1
    shift_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        base = cls()
        p = dict(base.params)
        p.update(d.pop("params", {}))
        if p.get("mode") == "paper":
            p.pop("desk_overrides", None)
        out = cls(
            params=p,
            seeds=SeedConfig(**{**asdict(base.seeds), **d.pop("seeds", {})}),
            solver=SolverConfig(**{**asdict(base.solver), **d.pop("solver", {})}),
            checks=CheckConfig(**{**asdict(base.checks), **d.pop("checks", {})}),
            levels=int(d.pop("levels", base.levels)),
            shift_seed=int(d.pop("shift_seed", base.shift_seed)),
        )
        if d:
            raise ValueError(f"unknown config keys: {sorted(d)}")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def param_set(self, enforce: bool = False) -> params_mod.ParamSet:
        return params_mod.params_from_config(self.params, enforce=enforce)

    @property
    def is_paper(self) -> bool:
        return self.params.get("mode") == params_mod.PAPER


DEFAULT_CONFIG = RunConfig().to_dict()


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


# ---------------------------------------------------------------- seeds


def random_solenoidal(grid: Grid, amplitude: float, kmax: int, rng: np.random.Generator) -> VectorField:
    """Zero-mean divergence-free field on modes |k_j| <= kmax with given max norm."""
    k1, k2, k3 = grid.wavenumbers
    m = (np.abs(k1) <= kmax) & (np.abs(k2) <= kmax) & (np.abs(k3) <= kmax)
    m = np.broadcast_to(m, grid.k_squared.shape)
    hat = np.zeros((3,) + grid.k_squared.shape, complex)
    count = int(m.sum())
    hat[:, m] = rng.standard_normal((3, count)) + 1j * rng.standard_normal((3, count))
    v = mean_free(leray_project(VectorField.from_hat(grid, hat)))
    return v * (amplitude / max(v.max_norm(), 1e-300))


def seed_trajectories(cfg: RunConfig, grid: Grid) -> tuple[Trajectory, Trajectory]:
    s, T = cfg.seeds, float(cfg.params.get("T", 1))
    alpha = float(Fraction(str(cfg.params["alpha"])))
    rng = np.random.default_rng(s.seed)

    def run(u, B):
        return solve_exact(FlowState(u, B, 0.0), T, alpha, dt_max=cfg.solver.dt_max_seed, integrator=cfg.solver.integrator)

    u1, b1 = (random_solenoidal(grid, s.amplitude, s.kmax, rng) for _ in range(2))
    v1 = run(u1, b1)
    if s.kind == "identical":
        return v1, v1
    if s.kind == "zero":
        z = VectorField.zeros(grid)
        return v1, run(z, z)
    if s.kind != "random":
        raise ValueError(f"unknown seed kind {s.kind!r}")
    u2, b2 = (random_solenoidal(grid, s.amplitude, s.kmax, rng) for _ in range(2))
    return v1, run(u2, b2)


def check_exact(traj: Trajectory, alpha: float, times, h: float = 1e-3, tol: float = 1e-4, name: str = "input") -> float:
    """Centered difference in time against the right-hand side; raises InputError."""
    worst = 0.0
    for t in times:
        lo, hi = max(traj.t0, t - h), min(traj.t1, t + h)
        a, b = traj.state(lo), traj.state(hi)
        s = traj.state(t)
        try:
            s.check(1e-8)
        except ValueError as exc:
            raise InputError(f"{name}: {exc}") from exc
        du, dB = rhs(s.u, s.B, alpha)
        scale = max(du.max_norm(), dB.max_norm(), 1e-300)
        fd_u = (b.u - a.u) * (1.0 / (hi - lo))
        fd_B = (b.B - a.B) * (1.0 / (hi - lo))
        err = max((fd_u - du).max_norm(), (fd_B - dB).max_norm()) / scale
        if scale <= 1e-14:
            err = max((b.u - a.u).max_norm(), (b.B - a.B).max_norm())
        worst = max(worst, err)
    if worst > tol:
        raise InputError(f"{name} does not solve the system: time-derivative mismatch {worst:.3e} > {tol:.1e}")
    return worst


# ---------------------------------------------------------------- states


LevelFields = GluedFields | NextLevel


@dataclass
class IterationState:
    """The level-q tuple, evaluated lazily in time, with its sets and records."""

    q: int
    params: params_mod.ParamSet
    sets: GoodBadSets
    alpha: float
    grid: Grid
    evaluate: Callable[[float], LevelFields]
    provenance: list = field(default_factory=list)
    records: dict = field(default_factory=dict)
    stress_free: bool = False
    parent: "IterationState | None" = None
    trajectories: dict = field(default_factory=dict)
    glued: gluing.GluedSolution | None = None
    context: PerturbationContext | None = None
    stage: "LevelStage | None" = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return self.sets.T

    def at(self, t: float) -> LevelFields:
        key = round(float(t), 15)
        if key not in self._cache:
            if len(self._cache) > 32:
                self._cache.clear()
            self._cache[key] = self.evaluate(float(t))
        return self._cache[key]

    def source(self, t: float) -> tuple[VectorField, VectorField]:
        f = self.at(t)
        return f.u, f.B

    def support(self) -> list:
        """Open intervals outside of which the stresses are known to vanish."""
        if self.stress_free:
            return []
        return gluing.stress_support(self.sets)

    def log(self, stage: str, cfg_hash: str, **extra):
        self.provenance.append({"stage": stage, "level": self.q, "config": cfg_hash, **extra})


def _eta_level0(T: float, t: float) -> tuple[float, float, float]:
    """1 on [0, 2T/5], 0 on [3T/5, T]."""
    w = T / 5
    v, d1, d2 = gluing._scalar(ramp((t - 2 * T / 5) / w))
    return 1.0 - v, -d1 / w, -d2 / w**2


def init_state(cfg: RunConfig, v1: Trajectory | None = None, v2: Trajectory | None = None, check: bool = True) -> IterationState:
    """Level-0 tuple from two exact solutions (built-in seeds when omitted)."""
    p = cfg.param_set()
    alpha = float(p.alpha)
    T = float(p.T)
    grid = Grid(int(p.desk.grid_n))
    if v1 is None or v2 is None:
        v1, v2 = seed_trajectories(cfg, grid)
    for name, tr in (("v1", v1), ("v2", v2)):
        if tr.t0 > 0 or tr.t1 < T - 1e-12:
            raise InputError(f"{name} covers [{tr.t0}, {tr.t1}], not [0, {T}]")
        if check:
            check_exact(tr, alpha, np.linspace(0.05, 0.95, 4) * T, name=name)
    identical = v1 is v2

    def evaluate(t: float) -> GluedFields:
        a = exact_piece(*_uB(v1.state(t)), alpha)
        if identical:
            return single(t, a)
        b = exact_piece(*_uB(v2.state(t)), alpha)
        return blend(t, _eta_level0(T, t), a, b)

    st = IterationState(0, p, gluing.initial_sets(T), alpha, grid, evaluate, stress_free=identical, trajectories={"v1": v1, "v2": v2})
    st.log("init", cfg.digest(), seeds=cfg.seeds.kind)
    return st


def _uB(s: FlowState):
    return s.u, s.B


def level0_report(st: IterationState, cfg: RunConfig) -> dict:
    """Closure, ramp endpoints and support of the level-0 stresses."""
    T = st.T
    v1, v2 = st.trajectories["v1"], st.trajectories["v2"]
    rows = []
    for t in np.array([0.1, 0.35, 0.45, 0.5, 0.55, 0.65, 0.9]) * T:
        f = st.at(t)
        r = residual_relaxed(*f.relaxed(), st.alpha)
        ref = v1.state(t) if t <= 2 * T / 5 else (v2.state(t) if t >= 3 * T / 5 else None)
        gap = None if ref is None else max((f.u - ref.u).max_norm(), (f.B - ref.B).max_norm())
        stress = max(f.R_u.max_norm(), f.R_B.max_norm())
        rows.append({"t": float(t), "closure": r.relative, "endpoint_gap": gap, "stress_max": stress})
    outside = [r["stress_max"] for r in rows if not (2 * T / 5 < r["t"] < 3 * T / 5)]
    return {
        "rows": rows,
        "closure_max": max(r["closure"] for r in rows),
        "endpoint_gap_max": max(r["endpoint_gap"] for r in rows if r["endpoint_gap"] is not None),
        "stress_outside_support": max(outside),
    }


# ---------------------------------------------------------------- iteration


@dataclass
class LevelStage:
    """Glued solution and perturbation context building level q+1."""

    glued: gluing.GluedSolution
    ctx: PerturbationContext | None
    alpha: float
    parts_cache: dict = field(default_factory=dict)

    def evaluate(self, t: float) -> NextLevel:
        g = self.glued.at(t)
        if self.ctx is None:
            parts = zero_parts(g.u.grid, t, temporal_cutoffs(self.glued.sets_out, t))
        else:
            parts = build_perturbations(g, self.ctx)
        if len(self.parts_cache) > 16:
            self.parts_cache.clear()
        self.parts_cache[round(t, 15)] = parts
        return next_level(g, parts, self.alpha)

    def parts(self, t: float):
        key = round(t, 15)
        if key not in self.parts_cache:
            self.evaluate(t)
        return self.parts_cache[key]


def sample_times(prev: GoodBadSets, new: GoodBadSets, part: gluing.TimePartition, C: list, deep: int = 3) -> dict:
    """Deterministic audit times grouped by role."""
    T, tau = new.T, new.tau
    good_prev = [(a, b) for a, b in prev.good if b > a]
    good = [0.5 * (a + b) for a, b in (good_prev[0], good_prev[-1])]
    if prev.bad:
        a0 = prev.bad[0][0]
        good.append(max(0.0, a0 - 0.5 * part.theta))
    edge, interior = [], []
    if new.bad:
        for a, b in (new.bad[0], new.bad[-1]):
            edge += [a + 0.6 * tau, b - 0.9 * tau]
        idx = sorted(set(C) | {i + 1 for i in C})
        picks = [idx[round(j * (len(idx) - 1) / max(1, deep - 1))] for j in range(min(deep, len(idx)))]
        for i in sorted(set(picks)):
            ti = part.knot(i)
            interior += [ti + 0.5 * tau, ti - 0.25 * tau]
    clip = lambda ts: sorted({float(min(max(t, 0.0), T)) for t in ts})  # noqa: E731
    return {"good_prev": clip(good), "edge": clip(edge), "interior": clip(interior)}


def _h4(f) -> float:
    return math.sqrt(f.lp_norm(2) ** 2 + homogeneous_norm(f, 4.0) ** 2)


def inductive_norms(f: LevelFields) -> dict:
    """The bookkeeping norms of the inductive estimates at one time."""
    return {
        "R_L1": f.R_u.lp_norm(1) + f.R_B.lp_norm(1),
        "R_H4": _h4(f.R_u) + _h4(f.R_B),
        "uB_L2": math.hypot(f.u.lp_norm(2), f.B.lp_norm(2)),
        "uB_H4": _h4(f.u) + _h4(f.B),
    }


def _zero_fields(f: LevelFields) -> bool:
    return not np.any(f.R_u.values) and not np.any(f.R_B.values)


def iterate(state: IterationState, cfg: RunConfig) -> IterationState:
    """Build level q+1: glue, perturb, assemble stresses, audit."""
    q, p = state.q, state.params
    digest = cfg.digest()
    alpha = state.alpha
    try:
        part = gluing.build_partition(p, q)
        support = state.support()
        glued = gluing.glue(state.source, state.sets, part, alpha, dt_max=cfg.solver.dt_max_glue, support=support,
                            solver_kw={"integrator": cfg.solver.integrator})
    except Exception as exc:
        raise StageError("glue", q, exc) from exc
    try:
        ctx = None
        if glued.sets_out.bad:
            ctx = make_context(p.desk_level(q), state.grid, glued.sets_out, alpha, seed=cfg.shift_seed)
    except Exception as exc:
        raise StageError("perturb", q, exc) from exc
    stage = LevelStage(glued, ctx, alpha)
    new = IterationState(
        q + 1, p, glued.sets_out, alpha, state.grid, stage.evaluate, provenance=list(state.provenance),
        stress_free=not glued.sets_out.bad, parent=state, glued=glued, context=ctx, stage=stage,
    )
    new.log("glue", digest, windows=len(glued.windows), C=len(glued.C))
    try:
        audit = audit_level(state, new, part, cfg)
    except Exception as exc:
        raise StageError("stress", q, exc) from exc
    new.records = audit
    new.log("audit", digest, ok=audit["ok"])
    return new


def audit_level(prev: IterationState, new: IterationState, part: gluing.TimePartition, cfg: RunConfig) -> dict:
    """Hard set and support assertions plus recorded norms for the new level."""
    ck = cfg.checks
    q1 = new.q
    glued = new.glued
    S_prev, S_new = prev.sets, new.sets
    # set properties (ii)-(iv); containment and the count bound are also enforced in gluing
    lengths_ok = all(
        abs((b - a) - 5 * S_new.tau) <= 1e-12 * max(1.0, S_new.T) or a == 0.0 or b == S_new.T for a, b in S_new.bad
    )
    contained = gluing.contains(S_prev.bad, S_new.bad)
    ratio_bound = (S_prev.measure * 10 * part.tau / part.theta) if q1 >= 1 else math.inf
    measure_ok = S_new.measure <= ratio_bound + 1e-12
    times = sample_times(S_prev, S_new, part, glued.C, ck.deep_samples)
    rows = []
    support_ok = agree_ok = div_ok = True
    increments = []
    for role, ts in times.items():
        for t in ts:
            f = new.at(t)
            prev_f = prev.at(t)
            st = FlowState(f.u, f.B, t)
            dv, mn = st.divergence_error(), st.mean_error()
            div_ok &= dv <= ck.divergence_tol and mn <= ck.divergence_tol * max(1.0, f.u.max_norm(), f.B.max_norm())
            dist = S_new.dist_to_good(t)
            zero = _zero_fields(f)
            if dist <= S_new.tau:
                support_ok &= zero
            gap = max((f.u - prev_f.u).max_norm(), (f.B - prev_f.B).max_norm())
            ref = max(prev_f.u.max_norm(), prev_f.B.max_norm(), 1e-300)
            if role == "good_prev":
                agree_ok &= gap / ref <= ck.agreement_tol
            inc = {"u": (f.u - prev_f.u).lp_norm(2), "B": (f.B - prev_f.B).lp_norm(2)}
            increments.append(max(inc.values()))
            r = closure(f, new.alpha) if isinstance(f, NextLevel) else residual_relaxed(*f.relaxed(), new.alpha)
            g = glued.at(t)
            rg = residual_relaxed(*g.relaxed(), new.alpha)
            row = {
                "t": t, "role": role, "dist_over_tau": dist / S_new.tau, "stress_zero": zero,
                "closure": r.relative, "glued_closure": rg.relative, "divergence": dv, "mean": mn,
                "agreement_gap": gap / ref, "increment_L2": inc, **inductive_norms(f),
            }
            if isinstance(f, NextLevel):
                row["trace"] = max(symmetry_defects(f).values())
            rows.append(row)
    lev = new.params.desk_level(prev.q)
    inc_max = max(increments) if increments else 0.0
    hard = {
        "bad_contained": contained,
        "interval_lengths": lengths_ok,
        "measure_bound": measure_ok,
        "support_property": support_ok,
        "agreement_on_previous_good_set": agree_ok,
        "divergence_free_zero_mean": div_ok,
    }
    return {
        "ok": all(hard.values()),
        "hard": hard,
        "sets": S_new.to_dict(),
        "C": list(glued.C),
        "times": times,
        "rows": rows,
        "recorded": {
            "closure_max": max(r["closure"] for r in rows),
            "glued_closure_max": max(r["glued_closure"] for r in rows),
            "trace_max": max((r.get("trace", 0.0) for r in rows), default=0.0),
            "increment_L2_max": inc_max,
            "increment_target": math.sqrt(lev.delta_next),
            "increment_within_target": inc_max <= math.sqrt(lev.delta_next),
            **{k: max(r[k] for r in rows) for k in ("R_L1", "R_H4", "uB_L2", "uB_H4")},
        },
        "uniqueness_gap_max": max((r["gap"] for r in glued.uniqueness_gaps(2)), default=0.0),
    }


def run(cfg: RunConfig, levels: int | None = None) -> list[IterationState]:
    states = [init_state(cfg)]
    for _ in range(cfg.levels if levels is None else levels):
        states.append(iterate(states[-1], cfg))
    return states


# ---------------------------------------------------------------- suites


def _suite(ok: bool, hard: bool = True, **measured) -> dict:
    return {"pass": bool(ok), "hard": hard, "measured": measured}


def geometry_suite(n_random: int = 1000, seed: int = 0) -> dict:
    exact_ok, half_ok, worst, radii = True, True, 0.0, {}
    ident = [[Fraction(int(i == j)) for j in range(3)] for i in range(3)]
    rng = np.random.default_rng(seed)
    for a in range(4):
        exact_ok &= geometry.gamma_weights_exact(ident, a) == [Fraction(1, 2)] * 6
        half_ok &= geometry.half_sum_identity(a) == ident
        rad = geometry.positivity_radius(a).radius
        radii[a] = rad
        d = rng.standard_normal((6, n_random))
        d /= np.sqrt(np.sum(d[:3] ** 2, 0) + 2 * np.sum(d[3:] ** 2, 0))
        R = np.array([1, 1, 1, 0, 0, 0.0])[:, None] + d * rad * rng.uniform(0, 1, n_random) ** (1 / 6)
        w = geometry.gamma_weights(R, a, rad)
        worst = max(worst, float(np.max(np.abs(geometry.reconstruct(w, a) - R))))
    return _suite(exact_ok and half_ok and worst <= 1e-12, gamma_id_exact=exact_ok, half_sum_exact=half_ok,
                  reconstruction_max=worst, radii=radii)


def jet_frame_suite(level: params_mod.DeskLevel, n: int = 64, t: float = 0.1, tol: float = 1e-6) -> dict:
    """Frame-torus identities for one jet per family at cells in {2, 4}."""
    rows = []
    prof = jets.ProfileSet(3.0, 3.0)
    for cells in (2, 4):
        for a in range(4):
            tr = geometry.direction_family(a).triples[0]
            spec = jets.JetSpec(tr, a, (0.0, 0.0, 0.0), cells, 3.0, 3.0, level.oscillation(a), level.n_lambda[a])
            r = jets.identity_residuals(spec, prof, t, n)
            rows.append({"family": a, "cells": cells, "curl_curl": r.curl_curl, "divergence": r.divergence, "transport": r.transport})
    worst = max(max(r["curl_curl"], r["divergence"], r["transport"]) for r in rows)
    return _suite(worst <= tol, worst=worst, rows=rows)


def disjointness_suite(specs: dict, profiles: jets.ProfileSet, grid: Grid) -> dict:
    rep = jets.disjointness_report(list(specs.values()), profiles, grid)
    return _suite(rep.grid_ok, grid_overlap_points=rep.grid_overlap_points,
                  max_pair_overlap_integral=rep.max_pair_overlap_integral, continuum_certified=rep.certified,
                  support_counts=rep.grid_support_counts)


def partition_suite(p: params_mod.ParamSet, levels: int, tol: float = 1e-12) -> dict:
    rows = []
    for q in range(levels):
        part = gluing.build_partition(p, q)
        ramps = [part.knot(i) + part.tau * np.linspace(-0.5, 1.5, 401) for i in (1, part.n // 2, part.n - 1)]
        ts = np.clip(np.concatenate([np.linspace(0, part.T, 2001)] + ramps), 0, part.T)
        rows.append({"q": q, "n": part.n, "pou_residual": part.pou_residual(ts), "K1_K2": part.derivative_constants()})
    worst = max(r["pou_residual"] for r in rows)
    return _suite(worst <= tol, worst=worst, rows=rows)


def synthetic_stress(shape, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    """Trace-free symmetric 6-vectors with Frobenius norm uniform in [0, magnitude]."""
    v = rng.standard_normal((6,) + tuple(shape))
    v[:3] -= v[:3].mean(axis=0)
    nrm = np.sqrt(np.sum(v[:3] ** 2, 0) + 2 * np.sum(v[3:] ** 2, 0))
    return v / nrm * rng.uniform(0, magnitude, size=shape)


def _localize(coef, diff: np.ndarray) -> tuple | None:
    """Jet key whose a^2 xi (x) xi best explains the identity defect."""
    best, best_key = math.inf, None
    flat = diff.reshape(6, -1)
    if not np.any(flat):
        return None
    for key, a in coef.a.items():
        xi = geometry.direction_family(key[0]).xi_array()[key[1]]
        basis = np.array([xi[i] * xi[j] for i, j in geometry.SYM_PAIRS])
        Q = (basis[:, None] * (a.reshape(-1) ** 2)[None])
        qq = float(np.sum(Q * Q))
        if qq == 0:
            continue
        c = float(np.sum(Q * flat)) / qq
        res = float(np.sum((flat - c * Q) ** 2)) / float(np.sum(flat**2))
        if res < best:
            best, best_key = res, key
    return best_key


def cancellation_suite(averages: dict, scale: float, delta_hat: float | None = None, points: int = 10, seed: int = 0,
                       corrupt: dict | None = None, tol: float = 1e-8) -> dict:
    """Coefficient identities for synthetic trace-free stresses up to 0.8 rho_0 delta."""
    delta_hat = positivity_delta() if delta_hat is None else delta_hat
    rho0 = 2.0 / delta_hat * 4.0 * scale
    top = 0.8 * rho0 * delta_hat
    rng = np.random.default_rng(seed)
    shape = (points,) * 3
    R_B, dR_B = synthetic_stress(shape, top, rng), synthetic_stress(shape, top, rng)
    R_u, dR_u = synthetic_stress(shape, top, rng), synthetic_stress(shape, top, rng)
    mag = coefficients("magnetic", R_B, dR_B, 1.0, 0.0, scale, delta_hat)
    for key, f in (corrupt or {}).items():
        if key in mag.a:
            mag.a[key] = mag.a[key] * f
    G, dG = g_b(mag, averages)
    vel = coefficients("velocity", R_u - G, dR_u - dG, 1.0, 0.0, scale, delta_hat)
    for key, f in (corrupt or {}).items():
        if key in vel.a:
            vel.a[key] = vel.a[key] * f
    out = {}
    for c in (mag, vel):
        r = c.identity_residual()
        r["levels_active"] = int(c.i_max) + 1
        if r["relative"] > tol:
            r["suspect"] = list(_localize(c, c.sum_a2_xixi() - c.target()) or [])
        out[c.kind] = r
    ok = all(v["relative"] <= tol for v in out.values())
    return _suite(ok, magnitude_max=top, **out)


def solver_suite(alpha: float, n: int = 16, seed: int = 3) -> dict:
    """Energy identity, temporal order by halving, and integrator agreement."""
    g = Grid(n)
    rng = np.random.default_rng(seed)
    u, B = random_solenoidal(g, 0.5, 1, rng), random_solenoidal(g, 0.5, 1, rng)
    init = FlowState(u, B, 0.0)
    tr = solve_exact(init, 0.2, alpha, dt_max=0.01)
    defect = float(np.max(tr.energy_defects()))
    ends = [solve_exact(init, 0.2, alpha, dt_max=h).state(0.2) for h in (0.02, 0.01)]
    # successive gaps between halved steps shrink by 2^order
    mid = solve_exact(init, 0.2, alpha, dt_max=0.005).state(0.2)
    g1, g2 = (ends[0].u - ends[1].u).max_norm(), (ends[1].u - mid.u).max_norm()
    order = math.log2(g1 / g2) if g2 > 0 else math.inf
    rk2 = solve_exact(init, 0.2, alpha, dt_max=0.0025, integrator="rk2").state(0.2)
    unique = max((rk2.u - mid.u).max_norm(), (rk2.B - mid.B).max_norm())
    ok = defect <= 1e-6 and order >= 2 and unique <= 1e-5
    return _suite(ok, energy_defect_max=defect, temporal_order=order, integrator_gap=unique)


def audit_suite(p: params_mod.ParamSet, levels: int = 10) -> dict:
    """Exact inequality audit; the constraint triple is recorded, the orderings are asserted."""
    orders_ok, triple_ok, rows = True, True, []
    constraint_names = {params_mod.CONSTRAINT_BETA, params_mod.CONSTRAINT_B, params_mod.CONSTRAINT_OSC}
    for q in range(levels + 1):
        rep = params_mod.audit_inequalities(p, q)
        for c in rep.checks:
            if not c.required:
                continue
            if c.name in constraint_names:
                triple_ok &= c.satisfied
            else:
                orders_ok &= c.satisfied
        rows.append({"q": q, "failing": rep.failing()})
    try:
        value, bound, box_ok = params_mod.box_dimension_bound(p)
        box = _suite(box_ok, value=float(value), exact=str(value), bound=float(bound))
    except ValueError as exc:
        box = _suite(False, error=str(exc))
    return {
        "orderings": _suite(orders_ok, levels=levels, rows=rows),
        "constraint_triple": _suite(triple_ok, hard=False, failing=sorted({n for r in rows for n in r["failing"] if n in constraint_names})),
        "box_dimension": box,
    }


def sets_suite(p: params_mod.ParamSet, levels: int) -> dict:
    try:
        rows = gluing.set_cascade(p, levels)
    except gluing.SetInvariantViolation as exc:
        return _suite(False, error=str(exc))
    quot = [r["dim_quotient"] for r in rows[1:]]
    ratio_ok = all(r["measure_ratio"] <= r["ratio_bound"] + 1e-12 for r in rows[1:])
    return _suite(ratio_ok, quotients=quot, rows=rows)


def collide_shift(specs: dict, key, profiles: jets.ProfileSet, grid: Grid) -> dict:
    """Move one jet so its axis passes through a grid point occupied by another jet."""
    keys = list(specs)
    other = keys[(keys.index(key) + 1) % len(keys)]
    tube = jets.tube_indicator(specs[other], profiles, grid)
    idx = np.argwhere(tube)[0]
    x = [float(c.reshape(-1)[idx[d]]) for d, c in enumerate(grid.coords)]
    out = dict(specs)
    out[key] = specs[key].with_shift(tuple(x))
    return out


def negative_controls(ctx: PerturbationContext, keys=None, factor: float = 1.1, points: int = 10) -> dict:
    """Corrupt one coefficient or one shift at a time; exactly the matching suite must fail."""
    keys = list(ctx.specs) if keys is None else keys
    base_disj = disjointness_suite(ctx.specs, ctx.profiles, ctx.grid)["pass"]
    rows, ok = [], True
    for key in keys:
        canc = cancellation_suite(ctx.averages, ctx.scale, ctx.delta_hat, points, corrupt={key: factor})
        kind = "magnetic" if key[0] in (2, 3) else "velocity"
        suspect = canc["measured"][kind].get("suspect")
        hit = (not canc["pass"]) and base_disj and tuple(suspect or ()) == tuple(key)
        rows.append({"corrupt": "a_xi", "key": list(key), "cancellation": canc["pass"], "disjointness": base_disj, "localized": suspect, "ok": hit})
        ok &= hit
    for key in keys:
        bad = collide_shift(ctx.specs, key, ctx.profiles, ctx.grid)
        disj = disjointness_suite(bad, ctx.profiles, ctx.grid)
        avg = dict(ctx.averages)
        avg[key] = jets.frame_average_outer(bad[key], ctx.profiles)
        canc = cancellation_suite(avg, ctx.scale, ctx.delta_hat, points)
        hit = (not disj["pass"]) and canc["pass"]
        rows.append({"corrupt": "shift", "key": list(key), "cancellation": canc["pass"], "disjointness": disj["pass"],
                     "overlap_points": disj["measured"]["grid_overlap_points"], "ok": hit})
        ok &= hit
    return _suite(ok, rows=rows)


def closure_suite(states: list[IterationState], cfg: RunConfig) -> dict:
    ck = cfg.checks
    lv0 = level0_report(states[0], cfg)
    out = {"level0": lv0}
    ok = lv0["closure_max"] <= ck.closure_tol and lv0["stress_outside_support"] == 0.0
    for st in states[1:]:
        rec = st.records
        r = rec["recorded"]
        level_ok = rec["ok"] and r["closure_max"] <= ck.closure_tol and r["glued_closure_max"] <= ck.closure_tol and r["trace_max"] <= ck.trace_tol
        ok &= level_ok
        out[f"level{st.q}"] = {"ok": level_ok, "hard": rec["hard"], **{k: r[k] for k in ("closure_max", "glued_closure_max", "trace_max")}}
    return _suite(ok, **out)


def identities_on_run(state: IterationState, tol: float) -> dict:
    """Coefficient identities and the principal-part product at the interior audit times."""
    stage = state.stage
    worst, prod = 0.0, 0.0
    for t in state.records["times"]["interior"]:
        parts = stage.parts(t)
        for r in parts.identity_residuals():
            worst = max(worst, r["relative"])
        prod = max(prod, parts.disjointness_product())
    return {"identity_max": worst, "principal_product_max": prod, "ok": worst <= tol and prod == 0.0}


def verify_all(cfg: RunConfig | dict | None = None, negative: str = "all") -> dict:
    """Run every suite; failures are results, never exceptions."""
    if not isinstance(cfg, RunConfig):
        cfg = RunConfig.from_dict(cfg)
    suites: dict = {}

    def guard(name, fn):
        try:
            res = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            res = _suite(False, error=f"{type(exc).__name__}: {exc}")
        if isinstance(res, dict) and "pass" not in res:
            suites.update(res)
        else:
            suites[name] = res

    if cfg.is_paper:
        p = cfg.param_set(enforce=False)
        guard("audit", lambda: audit_suite(p, cfg.checks.audit_levels))
        return _finish(cfg, suites, fields_allocated=False)

    p = cfg.param_set()
    guard("geometry", geometry_suite)
    guard("jets", lambda: jet_frame_suite(p.desk_level(0), cfg.checks.jet_frame_n))
    guard("partition", lambda: partition_suite(p, max(1, cfg.levels)))
    guard("sets", lambda: sets_suite(p, 3))
    guard("solver", lambda: solver_suite(float(p.alpha)))
    audit_p = params_mod.params_from_config(PAPER_AUDIT, enforce=False)
    guard("audit", lambda: audit_suite(audit_p, cfg.checks.audit_levels))
    states: list = []
    guard("run", lambda: _run_into(states, cfg))
    if len(states) > 1 and states[1].context is not None:
        ctx = states[1].context
        guard("cancellation", lambda: cancellation_suite(ctx.averages, ctx.scale, ctx.delta_hat, cfg.checks.synthetic_points))
        guard("disjointness", lambda: {**disjointness_suite(ctx.specs, ctx.profiles, ctx.grid)})
        guard("run_identities", lambda: (lambda r: _suite(r.pop("ok"), **r))(identities_on_run(states[1], cfg.checks.identity_tol)))
        guard("closure", lambda: closure_suite(states, cfg))
        if negative != "none":
            keys = None if negative == "all" else [list(ctx.specs)[0], list(ctx.specs)[-1]]
            guard("negative_controls", lambda: negative_controls(ctx, keys, points=cfg.checks.synthetic_points))
    return _finish(cfg, suites, fields_allocated=True)


def _run_into(states: list, cfg: RunConfig) -> dict:
    states.extend(run(cfg))
    return _suite(all(s.records.get("ok", True) for s in states), levels=len(states) - 1,
                  sets=[s.sets.to_dict() for s in states])


def _finish(cfg: RunConfig, suites: dict, fields_allocated: bool) -> dict:
    hard = [v["pass"] for v in suites.values() if v.get("hard", True)]
    return {
        "pass": all(hard),
        "config_hash": cfg.digest(),
        "fields_allocated": fields_allocated,
        "suites": suites,
    }


def to_json(obj) -> str:
    """JSON with numpy scalars, tuples and Fractions converted."""

    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Fraction):
            return str(o)
        raise TypeError(type(o).__name__)

    return json.dumps(obj, indent=2, sort_keys=True, default=default)
