"""Amplitude cutoffs, jet coefficients and the level-(q+1) perturbations.

Coefficients solve the pointwise identity
    sum_xi a_xi^2 xi (x) xi = theta^2 sum_i rho_i chi_i^2 Id - theta^2 R
for the glued stress R (magnetic) and R_u - G^B (velocity).  Principal plus
incompressibility corrector parts are defined spectrally as curl curl of the
summed potentials, so they are exactly divergence free on the grid; the
closed-form corrector is kept as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, jets
from .geometry import NotInPositivityRange, solve_weights
from .gluing import GluedFields, GoodBadSets, ramp
from .spectral import (
    SYM_PAIRS,
    Grid,
    ScalarField,
    VectorField,
    curl,
    grad,
    leray_project,
    mean_free,
)

LN4 = math.log(4.0)
MAGNETIC = (2, 3)
VELOCITY = (0, 1)


# ---------------------------------------------------------------- scalar cutoffs


def dyadic_partition(y, levels: int | None = None, derivative: bool = False):
    """chi_i(y) for i < levels with sum chi_i^2 = 1; optionally d chi_i / dy.

    r_0 = 1 on y <= 1 and ramp(1 - log4 y) above; r_i = ramp(1 - |log4 y - i|);
    chi_i = r_i / sqrt(sum r^2).  Supports: chi_0 in [0, 4], chi_i in
    [4^(i-1), 4^(i+1)].
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("dyadic partition needs y >= 0")
    L = np.log(np.maximum(y, 1e-300)) / LN4
    if levels is None:
        levels = int(max(1, math.floor(float(np.max(L, initial=0.0))) + 2))
    r, dr = [], []
    big = y > 1
    v, d1, _ = ramp(1.0 - L)
    r.append(np.where(big, v, 1.0))
    dLdy = np.where(y > 0, 1.0 / (np.maximum(y, 1e-300) * LN4), 0.0)
    dr.append(np.where(big, -d1 * dLdy, 0.0))
    for i in range(1, levels):
        x = 1.0 - np.abs(L - i)
        v, d1, _ = ramp(x)
        r.append(v)
        dr.append(-d1 * np.sign(L - i) * dLdy)
    r = np.stack(r)
    dr = np.stack(dr)
    S2 = np.sum(r**2, axis=0)
    S = np.sqrt(S2)
    chi = r / S
    if not derivative:
        return chi
    dS = np.sum(r * dr, axis=0) / S
    dchi = dr / S - r * dS / S2
    return chi, dchi


def frobenius_sq(v6: np.ndarray) -> np.ndarray:
    return np.sum(v6[:3] ** 2, axis=0) + 2 * np.sum(v6[3:] ** 2, axis=0)


def frobenius_inner(a6: np.ndarray, b6: np.ndarray) -> np.ndarray:
    return np.sum(a6[:3] * b6[:3], axis=0) + 2 * np.sum(a6[3:] * b6[3:], axis=0)


def bracket(v6: np.ndarray) -> np.ndarray:
    """<A> = sqrt(1 + |A|^2) with the Frobenius norm."""
    return np.sqrt(1.0 + frobenius_sq(v6))


@dataclass(frozen=True)
class TemporalCutoffs:
    theta_u: float
    dtheta_u: float
    theta_B: float
    dtheta_B: float


def temporal_cutoffs(sets_next: GoodBadSets, t: float) -> TemporalCutoffs:
    """theta_B ramps over dist in [3/2 tau, 2 tau]; theta_u over [tau, 3/2 tau]."""
    tau = sets_next.tau
    d = sets_next.dist_to_good(t)
    sign = 0.0
    for a, b in sets_next.bad:
        if a < t < b:
            sign = 1.0 if t - a < b - t else -1.0
    out = []
    for lo in (tau, 1.5 * tau):
        v, d1, _ = ramp((d - lo) / (0.5 * tau))
        out += [float(v), float(d1) * sign / (0.5 * tau)]
    return TemporalCutoffs(out[0], out[1], out[2], out[3])


def positivity_delta() -> float:
    """Smallest certified positivity radius over the four families."""
    return min(geometry.positivity_radius(a).radius for a in range(4))


# ---------------------------------------------------------------- coefficients


_ID6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


def _id6(shape) -> np.ndarray:
    return _ID6.reshape((6,) + (1,) * len(shape)) * np.ones((6,) + tuple(shape))


def _xi_outer6(xi) -> np.ndarray:
    return np.array([xi[i] * xi[j] for i, j in SYM_PAIRS])


@dataclass
class CoefficientSet:
    """a_xi and d a_xi / dt on the grid for one of the two perturbation kinds."""

    kind: str
    families: tuple[int, int]
    argument: np.ndarray
    d_argument: np.ndarray
    theta: float
    dtheta: float
    scale: float
    rho: list[float]
    chi: np.ndarray
    a: dict = field(default_factory=dict)
    da: dict = field(default_factory=dict)

    @property
    def i_max(self) -> int:
        active = [i for i in range(self.chi.shape[0]) if self.theta > 0 and np.any(self.chi[i] > 0)]
        return max(active) if active else -1

    def family_of_level(self, i: int) -> int:
        return self.families[i % 2]

    def sum_a2_xixi(self) -> np.ndarray:
        out = np.zeros_like(self.argument)
        for (fam, k), a in self.a.items():
            xi = geometry.direction_family(fam).xi_array()[k]
            out += _xi_outer6(xi)[:, None, None, None] * a[None] ** 2
        return out

    def target(self) -> np.ndarray:
        """theta^2 sum_i rho_i chi_i^2 Id - theta^2 argument."""
        s = sum(rho * self.chi[i] ** 2 for i, rho in enumerate(self.rho))
        return self.theta**2 * (_ID6[:, None, None, None] * s[None] - self.argument)

    def identity_residual(self) -> dict:
        """Relative pointwise residual of the coefficient identity with its worst location."""
        lhs, rhs = self.sum_a2_xixi(), self.target()
        diff = np.abs(lhs - rhs)
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
        return {
            "kind": self.kind,
            "relative": float(diff[idx]) / scale,
            "component": SYM_PAIRS[idx[0]],
            "point": tuple(int(c) for c in idx[1:]),
        }


def coefficients(
    kind: str,
    argument: np.ndarray,
    d_argument: np.ndarray,
    theta: float,
    dtheta: float,
    scale: float,
    delta_hat: float,
    levels: int | None = None,
) -> CoefficientSet:
    """a_xi = theta rho_i^(1/2) chi_i(<argument/scale>) gamma_xi(Id - argument/rho_i).

    ``argument`` is a 6-component symmetric field; families alternate with
    the dyadic level, (i mod 2) for velocity and (i mod 2) + 2 for magnetic.
    """
    fams = MAGNETIC if kind == "magnetic" else VELOCITY
    shape = argument.shape[1:]
    y = bracket(argument / scale)
    chi, dchi = dyadic_partition(y, levels, derivative=True)
    dy = frobenius_inner(argument, d_argument) / (scale**2 * y)
    nlev = chi.shape[0]
    rho = [2.0 / delta_hat * 4.0 ** (i + 1) * scale for i in range(nlev)]
    cs = CoefficientSet(kind, fams, argument, d_argument, theta, dtheta, scale, rho, chi)
    for fam in fams:
        for k in range(6):
            cs.a[(fam, k)] = np.zeros(shape)
            cs.da[(fam, k)] = np.zeros(shape)
    if theta == 0.0 and dtheta == 0.0:
        return cs
    for i in range(nlev):
        supp = chi[i] > 0
        if not np.any(supp):
            continue
        fam = cs.family_of_level(i)
        r = rho[i]
        M = _id6(shape) - argument / r
        w = solve_weights(M, fam)
        bad = supp & (np.min(w, axis=0) <= 0)
        if np.any(bad):
            loc = tuple(int(c[0]) for c in np.nonzero(bad))
            dist = float(np.sqrt(frobenius_sq(argument[(slice(None),) + loc]))) / r
            raise NotInPositivityRange(
                f"{kind} level {i}: |argument/rho_i| = {dist:.4g} at grid point {loc} gives a non-positive weight"
            )
        gam = np.where(supp[None], np.sqrt(np.where(supp[None], w, 1.0)), 0.0)
        dw = solve_weights(-d_argument / r, fam)
        sr = math.sqrt(r)
        for k in range(6):
            g = gam[k]
            a = theta * sr * chi[i] * g
            dg = np.where(supp, dw[k] / (2 * np.where(supp, g, 1.0)), 0.0)
            da = dtheta * sr * chi[i] * g + theta * sr * dchi[i] * dy * g + theta * sr * chi[i] * dg
            cs.a[(fam, k)] += a
            cs.da[(fam, k)] += da
    return cs


def magnetic_coefficients(R_B: np.ndarray, dR_B: np.ndarray, cut: TemporalCutoffs, scale: float, delta_hat: float) -> CoefficientSet:
    return coefficients("magnetic", R_B, dR_B, cut.theta_B, cut.dtheta_B, scale, delta_hat)


def velocity_coefficients(R_u: np.ndarray, dR_u: np.ndarray, G_B: np.ndarray, dG_B: np.ndarray, cut: TemporalCutoffs, scale: float, delta_hat: float) -> CoefficientSet:
    return coefficients("velocity", R_u - G_B, dR_u - dG_B, cut.theta_u, cut.dtheta_u, scale, delta_hat)


def g_b(mag: CoefficientSet, averages: dict) -> tuple[np.ndarray, np.ndarray]:
    """G^B = sum a_xi^2 (mean of W (x) W) and its time derivative."""
    G = np.zeros_like(mag.argument)
    dG = np.zeros_like(mag.argument)
    for key, a in mag.a.items():
        m6 = geometry.sym6(averages[key])[:, None, None, None]
        G += m6 * a[None] ** 2
        dG += m6 * (2 * a * mag.da[key])[None]
    return G, dG


# ---------------------------------------------------------------- context


@dataclass
class PerturbationContext:
    """Everything fixed across time at one level: jets, shifts, averages, sets."""

    level: object
    grid: Grid
    specs: dict
    profiles: jets.ProfileSet
    sets_next: GoodBadSets
    delta_hat: float
    averages: dict
    shifts: jets.ShiftChoice
    alpha: float

    @property
    def scale(self) -> float:
        return self.level.stress_scale


def make_context(level, grid: Grid, sets_next: GoodBadSets, alpha: float, seed: int = 0) -> PerturbationContext:
    """Jets for all four families with grid-disjoint shifts."""
    profiles = jets.ProfileSet(level.ell_perp, level.ell_par)
    base = jets.make_specs(level)
    choice = jets.choose_grid_shifts(base, profiles, grid, seed=seed)
    specs = {(s.family, jets._index_in_family(s)): s for s in jets.make_specs(level, choice.shifts)}
    averages = {k: jets.frame_average_outer(s, profiles) for k, s in specs.items()}
    return PerturbationContext(level, grid, specs, profiles, sets_next, positivity_delta(), averages, choice, alpha)


# ---------------------------------------------------------------- assembly


@dataclass
class PerturbationParts:
    t: float
    cut: TemporalCutoffs
    mag: CoefficientSet | None
    vel: CoefficientSet | None
    d_p: VectorField
    d_pc: VectorField
    d_t: VectorField
    w_p: VectorField
    w_pc: VectorField
    w_t: VectorField
    dd_pc: VectorField
    dd_t: VectorField
    dw_pc: VectorField
    dw_t: VectorField
    G_B: np.ndarray | None = None

    @property
    def d_c(self) -> VectorField:
        return self.d_pc - self.d_p

    @property
    def w_c(self) -> VectorField:
        return self.w_pc - self.w_p

    @property
    def d(self) -> VectorField:
        return self.d_pc + self.d_t

    @property
    def w(self) -> VectorField:
        return self.w_pc + self.w_t

    @property
    def dd(self) -> VectorField:
        return self.dd_pc + self.dd_t

    @property
    def dw(self) -> VectorField:
        return self.dw_pc + self.dw_t

    @property
    def is_zero(self) -> bool:
        return self.mag is None

    def identity_residuals(self) -> list[dict]:
        return [] if self.is_zero else [self.mag.identity_residual(), self.vel.identity_residual()]

    def disjointness_product(self) -> float:
        """max |w^p_i d^p_j| over the grid; zero when the tubes are disjoint."""
        return float(np.max(np.abs(self.w_p.values[:, None] * self.d_p.values[None])))


def _vec(grid: Grid, xi: np.ndarray, scalar: np.ndarray) -> np.ndarray:
    return xi[:, None, None, None] * scalar[None]


def zero_parts(grid: Grid, t: float, cut: TemporalCutoffs) -> PerturbationParts:
    z = VectorField.zeros(grid)
    return PerturbationParts(t, cut, None, None, z, z, z, z, z, z, z, z, z, z)


def build_perturbations(glued: GluedFields, ctx: PerturbationContext, corrupt: dict | None = None) -> PerturbationParts:
    """Perturbation parts at the glued fields' time.

    ``corrupt`` maps a jet key to a multiplicative factor on its coefficient;
    it exists for negative controls of the identity suite.
    """
    g = ctx.grid
    t = glued.t
    cut = temporal_cutoffs(ctx.sets_next, t)
    if cut.theta_B == 0 and cut.theta_u == 0 and cut.dtheta_B == 0 and cut.dtheta_u == 0:
        return zero_parts(g, t, cut)
    mag = magnetic_coefficients(glued.R_B.values, glued.dR_B.values, cut, ctx.scale, ctx.delta_hat)
    if corrupt:
        for key, f in corrupt.items():
            if key in mag.a:
                mag.a[key] = mag.a[key] * f
    G, dG = g_b(mag, ctx.averages)
    vel = velocity_coefficients(glued.R_u.values, glued.dR_u.values, G, dG, cut, ctx.scale, ctx.delta_hat)
    if corrupt:
        for key, f in corrupt.items():
            if key in vel.a:
                vel.a[key] = vel.a[key] * f
    lev = ctx.level
    sums = {name: np.zeros((3,) + g.shape) for name in ("Wm", "Vm", "dVm", "Tm", "dTm", "Wv", "Vv", "dVv", "Tv", "dTv")}
    for key, spec in ctx.specs.items():
        coef = mag if spec.is_magnetic else vel
        a, da = coef.a[key], coef.da[key]
        if not np.any(a) and not np.any(da):
            continue
        js = jets.sample_jet(spec, ctx.profiles, g, t, require_resolved=False)
        xi = spec.xi
        tag = "m" if spec.is_magnetic else "v"
        pot = js.psi * js.Phi / (spec.n_lambda**2 * spec.lam**2)
        dpot = js.dpsi * js.Phi * js.dt_factor() / (spec.n_lambda**2 * spec.lam**2)
        sums["W" + tag] += _vec(g, xi, a * js.psi * js.phi)
        sums["V" + tag] += _vec(g, xi, a * pot)
        sums["dV" + tag] += _vec(g, xi, da * pot + a * dpot)
        p2 = js.phi2psi2()
        sums["T" + tag] += _vec(g, xi, a * a * p2)
        sums["dT" + tag] += _vec(g, xi, 2 * a * da * p2 + a * a * js.dt_phi2psi2())
    V = lambda k: VectorField(g, sums[k])  # noqa: E731
    cc = lambda k: curl(curl(V(k)))  # noqa: E731
    ph = lambda k: leray_project(mean_free(V(k)))  # noqa: E731
    mu, mub = lev.mu, lev.mu_bar
    d_t = curl(V("Tm")) * (-1.0 / mub)
    dd_t = curl(V("dTm")) * (-1.0 / mub)
    w_t = ph("Tv") * (-1.0 / mu) + ph("Tm") * (1.0 / mub)
    dw_t = ph("dTv") * (-1.0 / mu) + ph("dTm") * (1.0 / mub)
    return PerturbationParts(
        t, cut, mag, vel,
        V("Wm"), cc("Vm"), d_t,
        V("Wv"), cc("Vv"), w_t,
        cc("dVm"), dd_t, cc("dVv"), dw_t,
        G,
    )


# ---------------------------------------------------------------- cross-checks


def literal_corrector(coef: CoefficientSet, ctx: PerturbationContext, t: float) -> VectorField:
    """Closed-form incompressibility corrector, summed over the jets of one kind.

    curl(grad a x V) + (N lambda)^-2 psi grad a x curl(Phi xi) + a W^c, with
    curl(Phi xi) = K (d_z2 Phi A - d_z1 Phi xi x A) from the frame derivatives.
    """
    g = ctx.grid
    first = np.zeros((3,) + g.shape)
    rest = np.zeros((3,) + g.shape)
    for key, spec in ctx.specs.items():
        if spec.is_magnetic != (coef.kind == "magnetic"):
            continue
        a = coef.a[key]
        if not np.any(a):
            continue
        js = jets.sample_jet(spec, ctx.profiles, g, t, require_resolved=False)
        ga = grad(ScalarField(g, a)).values
        scale = 1.0 / (spec.n_lambda**2 * spec.lam**2)
        V = _vec(g, spec.xi, scale * js.psi * js.Phi)
        first += np.cross(ga, V, axis=0)
        f = spec.frame
        K = spec.K
        # grad_Phi is in z units with z = K x . (A, xi x A); the 1/ell scaling is included
        cPhi = K * (f[1][:, None, None, None] * js.grad_Phi[1][None] - f[2][:, None, None, None] * js.grad_Phi[0][None])
        rest += scale * js.psi[None] * np.cross(ga, cPhi, axis=0)
        rest += a[None] * js.Wc().values
    return curl(VectorField(g, first)) + VectorField(g, rest)


def corrector_gap(parts: PerturbationParts, ctx: PerturbationContext) -> dict:
    """Spectral corrector (curl curl minus principal) against the closed form."""
    if parts.is_zero:
        return {"magnetic": 0.0, "velocity": 0.0}
    out = {}
    for name, coef, c in (("magnetic", parts.mag, parts.d_c), ("velocity", parts.vel, parts.w_c)):
        lit = literal_corrector(coef, ctx, parts.t)
        scale = max(c.max_norm(), lit.max_norm(), 1e-300)
        out[name] = (c - lit).max_norm() / scale
    return out


# ---------------------------------------------------------------- reports


def _w1p(f: VectorField, p: float) -> float:
    g = f.grid
    return sum(VectorField.from_hat(g, f.hat * g.ik[j]).lp_norm(p) for j in range(3))


def perturbation_norm_report(parts: PerturbationParts, p_list=(1.5, 2.0), delta_next: float | None = None) -> dict:
    names = {
        "d_p": parts.d_p, "d_c": parts.d_c, "d_t": parts.d_t,
        "w_p": parts.w_p, "w_c": parts.w_c, "w_t": parts.w_t,
    }
    rows = {}
    for k, f in names.items():
        rows[k] = {"L2": f.lp_norm(2)}
        for p in p_list:
            rows[k][f"L{p}"] = f.lp_norm(p)
            rows[k][f"W1,{p}"] = _w1p(f, p)
    out = {"t": parts.t, "norms": rows}
    if delta_next is not None:
        out["principal_L2_target"] = 0.5 * math.sqrt(delta_next)
    if not parts.is_zero:
        out["i_max"] = parts.vel.i_max
        out["ibar_max"] = parts.mag.i_max
    return out


def block_exponents(alpha: float) -> dict:
    gap = 1.25 - alpha
    return {"corrector": -(5 / 6) * gap, "temporal_B": -(5 / 12) * gap, "temporal_u": -0.5 * gap}


def building_block_norms(lam: float, alpha: float, n_lambda: int, nq: int = 800) -> dict:
    """L^2 norms of the perturbation building blocks relative to ||W||_2.

    The lengths follow the level laws with the integer constraint on
    lambda ell_perp dropped, so the fitted slopes see the pure powers.
    Integrals use the covering map and radial symmetry as in the jet module.
    """
    ell_perp = lam ** (-(20 * alpha - 1) / 24)
    ell_par = lam ** (-(20 * alpha - 13) / 12)
    mu = lam ** (2 * alpha - 1) * ell_par / ell_perp
    mu_bar = lam ** (5 / 12 * (5 * alpha - 0.25)) * ell_par / ell_perp
    K = n_lambda * lam * ell_perp
    prof = jets.ProfileSet(ell_perp, ell_par)
    s = np.linspace(-1, 1, nq + 1)[1:-1]
    r = np.linspace(0, 1, nq + 1)[1:-1]
    S, R = np.meshgrid(s, r, indexing="ij")
    Phi, dPhi, phi, dphi = prof.radial_unit(R * R)
    lp, lt = ell_par, ell_perp
    psi = prof.psi_unit(S) * lp**-0.5
    dpsi = prof.psi_unit(S, 1) * lp**-1.5
    phil = phi / lt
    dphil = 2 * R * dphi / lt**2
    gradPhi = 2 * R * dPhi / lt**2

    def l2(mag):
        return math.sqrt(np.sum(mag**2 * R))

    w = l2(psi * phil)
    wc = l2(lt**2 * dpsi * gradPhi)
    q = psi**2 * phil**2
    grad_q = K * np.sqrt((2 * psi * dpsi * phil**2) ** 2 + (psi**2 * 2 * phil * dphil) ** 2)
    return {
        "lambda": lam,
        "corrector": wc / w,
        "temporal_B": l2(grad_q) / mu_bar / w,
        "temporal_u": l2(q) / mu / w,
    }


def building_block_slopes(lambdas=(16, 32, 64), alpha: float = 1.2, n_lambda: int = 5, nq: int = 800) -> dict:
    rows = [building_block_norms(l, alpha, n_lambda, nq) for l in lambdas]
    ref = block_exponents(alpha)
    ls = np.log(lambdas)
    out = {}
    for k in ref:
        slope = float(np.polyfit(ls, np.log([r[k] for r in rows]), 1)[0])
        out[k] = {"slope": slope, "predicted": ref[k], "error": abs(slope - ref[k])}
    return out
