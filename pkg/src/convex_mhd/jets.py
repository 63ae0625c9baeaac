"""Intermittent jets: profiles, sampled fields, identities, shifts, scaling.

A jet along xi is psi(s) * phi(z) * xi with the phase s = K (x.xi + mu t) and
transverse coordinates z = K ((x - shift).A, (x - shift).(xi x A)), where
K = n_lambda * lambda * ell_perp is an integer.  The map x -> (s, z) is an
integer-matrix covering of the torus by itself, so identities between jets can
be checked on the jet's own frame torus, where the profiles are resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import geometry
from .geometry import DirectionTriple
from .spectral import Grid, ScalarField, VectorField, curl, div, grad, partial

TWO_PI = 2 * np.pi


class ResolutionError(ValueError):
    def __init__(self, message: str, required_n: int):
        self.required_n = required_n
        super().__init__(message)


class PackingInfeasible(ValueError):
    def __init__(self, message: str, pair: tuple[int, int], max_ell_perp: float):
        self.pair = pair
        self.max_ell_perp = max_ell_perp
        super().__init__(message)


def wrap(y):
    """Representative of y modulo 2 pi in [-pi, pi)."""
    return np.mod(y + np.pi, TWO_PI) - np.pi


# ---------------------------------------------------------------- profiles


def _bump_derivs(u, m):
    """g(u) = exp(-m/(1-u)) on u < 1 and its first three u-derivatives."""
    u = np.asarray(u, dtype=float)
    inside = u < 1
    h = np.where(inside, 1 - u, 1.0)
    g = np.where(inside, np.exp(-m / h), 0.0)
    f1 = -m / h**2
    f2 = -2 * m / h**3
    f3 = -6 * m / h**4
    g1 = f1 * g
    g2 = (f2 + f1**2) * g
    g3 = (f3 + 3 * f1 * f2 + f1**3) * g
    return g, g1, g2, g3


@lru_cache(maxsize=None)
def _normalizers(m: float) -> tuple[float, float]:
    """Constants making the unit-scale profiles L^2-normalized on the torus."""

    def psi_sq(s):
        g = _bump_derivs(s * s, m)[0]
        return (s * g) ** 2

    def phi_sq_r(r):
        u = r * r
        g, g1, g2, _ = _bump_derivs(u, m)
        return (4 * u * g2 + 4 * g1) ** 2 * r

    ip = integrate.quad(psi_sq, -1, 1, epsabs=0, epsrel=1e-13, limit=400)[0]
    iphi = 2 * np.pi * integrate.quad(phi_sq_r, 0, 1, epsabs=0, epsrel=1e-13, limit=400)[0]
    # int psi^2 = 2 pi and int phi^2 = 4 pi^2, so both averages equal 1
    return math.sqrt(2 * np.pi / ip), math.sqrt(4 * np.pi**2 / iphi)


@dataclass(frozen=True)
class ProfileSet:
    """psi (1D, odd) and Phi, phi = -Laplacian Phi (2D radial) with scalings."""

    ell_perp: float
    ell_par: float
    sharpness: float = 12.0

    def __post_init__(self):
        if not (0 < self.ell_perp <= np.pi and 0 < self.ell_par <= np.pi):
            raise ValueError("profile lengths must lie in (0, pi]")

    @property
    def c_psi(self) -> float:
        return _normalizers(self.sharpness)[0]

    @property
    def c_Phi(self) -> float:
        return _normalizers(self.sharpness)[1]

    # unit-scale profiles
    def psi_unit(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        g, g1, g2, g3 = _bump_derivs(s * s, self.sharpness)
        c = self.c_psi
        if order == 0:
            return c * s * g
        if order == 1:
            return c * (g + 2 * s * s * g1)
        if order == 2:
            return c * (6 * s * g1 + 4 * s**3 * g2)
        if order == 3:
            return c * (6 * g1 + 24 * s * s * g2 + 8 * s**4 * g3)
        raise ValueError(order)

    def radial_unit(self, u):
        """Phi, dPhi/du, phi, dphi/du as functions of u = |zeta|^2."""
        g, g1, g2, g3 = _bump_derivs(u, self.sharpness)
        C = self.c_Phi
        Phi = C * g
        dPhi = C * g1
        phi = -C * (4 * u * g2 + 4 * g1)
        dphi = -C * (8 * g2 + 4 * u * g3)
        return Phi, dPhi, phi, dphi

    # rescaled, 2 pi periodized profiles
    def psi(self, y, order: int = 0):
        lp = self.ell_par
        return lp ** (-0.5 - order) * self.psi_unit(wrap(y) / lp, order)

    def transverse(self, z1, z2) -> dict:
        """Phi_l, grad Phi_l, phi_l, grad phi_l at periodized (z1, z2)."""
        lt = self.ell_perp
        w1, w2 = wrap(z1) / lt, wrap(z2) / lt
        u = w1 * w1 + w2 * w2
        Phi, dPhi, phi, dphi = self.radial_unit(u)
        # Phi_l(z) = l^-1 Phi(z/l); d/dz_j = l^-2 * 2 w_j dPhi/du
        return {
            "Phi": Phi / lt,
            "grad_Phi": np.stack([2 * w1 * dPhi, 2 * w2 * dPhi]) / lt**2,
            "phi": phi / lt,
            "grad_phi": np.stack([2 * w1 * dphi, 2 * w2 * dphi]) / lt**2,
            "inside": u < 1,
        }


# ---------------------------------------------------------------- jet specs


@dataclass(frozen=True)
class JetSpec:
    triple: DirectionTriple
    family: int
    shift: tuple[float, float, float]
    cells: int
    ell_perp: float
    ell_par: float
    oscillation: float
    n_lambda: int

    def __post_init__(self):
        if self.cells < 1 or int(self.cells) != self.cells:
            raise ValueError("lambda * ell_perp must be a positive integer")
        if self.n_lambda % self.triple.denominator():
            raise ValueError(f"n_lambda={self.n_lambda} does not clear the frame of {self.triple.xi}")

    @property
    def lam(self) -> float:
        return self.cells / self.ell_perp

    @property
    def K(self) -> int:
        return self.n_lambda * self.cells

    @property
    def frame(self) -> np.ndarray:
        return self.triple.as_array()

    @property
    def xi(self) -> np.ndarray:
        return self.frame[0]

    @property
    def is_magnetic(self) -> bool:
        return self.family in (2, 3)

    @property
    def integer_frame(self) -> np.ndarray:
        """K times the frame; integer by construction."""
        m = [[Fraction(c) * self.K for c in v] for v in (self.triple.xi, self.triple.a_xi, self.triple.xi_cross_a)]
        assert all(x.denominator == 1 for row in m for x in row)
        return np.array([[int(x) for x in row] for row in m])

    def transverse_offset(self) -> np.ndarray:
        f = self.frame
        return self.K * np.array([f[1] @ np.asarray(self.shift), f[2] @ np.asarray(self.shift)])

    def x_radius(self) -> tuple[float, float]:
        """Support half-widths in x: transverse ell_perp/K and along xi ell_par/K."""
        return self.ell_perp / self.K, self.ell_par / self.K

    def with_shift(self, shift) -> "JetSpec":
        return JetSpec(
            self.triple, self.family, tuple(float(c) for c in shift), self.cells, self.ell_perp, self.ell_par,
            self.oscillation, self.n_lambda,
        )


def make_specs(level, shifts: dict | None = None, families=(0, 1, 2, 3)) -> list[JetSpec]:
    """All jets of the given families from a DeskLevel."""
    out = []
    for a in families:
        fam = geometry.direction_family(a)
        for k, tr in enumerate(fam.triples):
            sh = (0.0, 0.0, 0.0) if shifts is None else shifts[(a, k)]
            out.append(
                JetSpec(tr, a, tuple(sh), level.cells, level.ell_perp, level.ell_par, level.oscillation(a), level.n_lambda[a])
            )
    return out


# ---------------------------------------------------------------- sampling


def required_grid(spec: JetSpec, points_per_radius: float = 24.0) -> int:
    r = min(spec.x_radius())
    n = int(math.ceil(TWO_PI * points_per_radius / r))
    return n + (n % 2)


@dataclass
class JetSample:
    """Profile factors of one jet at one time on sample points."""

    spec: JetSpec
    grid: Grid | None
    t: float
    psi: np.ndarray
    dpsi: np.ndarray
    d2psi: np.ndarray
    Phi: np.ndarray
    grad_Phi: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    inside: np.ndarray

    def _vec(self, scalar: np.ndarray, direction: np.ndarray) -> np.ndarray:
        return direction[:, None, None, None] * scalar[None]

    def W(self) -> VectorField:
        return VectorField(self.grid, self._vec(self.psi * self.phi, self.spec.xi))

    def V(self) -> VectorField:
        s = self.spec
        scale = 1.0 / (s.n_lambda**2 * s.lam**2)
        return VectorField(self.grid, self._vec(scale * self.psi * self.Phi, s.xi))

    def Wc(self) -> VectorField:
        """(1/(N^2 lambda^2)) grad psi x curl(Phi xi) = ell_perp^2 psi' grad_z Phi in the frame."""
        s = self.spec
        f = s.frame
        coef = s.ell_perp**2 * self.dpsi
        vals = (
            f[1][:, None, None, None] * (coef * self.grad_Phi[0])[None]
            + f[2][:, None, None, None] * (coef * self.grad_Phi[1])[None]
        )
        return VectorField(self.grid, vals)

    def dt_factor(self) -> float:
        return self.spec.K * self.spec.oscillation

    def dW_dt(self) -> VectorField:
        return VectorField(self.grid, self._vec(self.dt_factor() * self.dpsi * self.phi, self.spec.xi))

    def dV_dt(self) -> VectorField:
        s = self.spec
        scale = self.dt_factor() / (s.n_lambda**2 * s.lam**2)
        return VectorField(self.grid, self._vec(scale * self.dpsi * self.Phi, s.xi))

    def phi2psi2(self) -> np.ndarray:
        return (self.phi * self.psi) ** 2

    def dt_phi2psi2(self) -> np.ndarray:
        return self.phi**2 * 2 * self.psi * self.dpsi * self.dt_factor()

    def tube(self) -> np.ndarray:
        """Indicator of the transverse support (the full periodic tube)."""
        return self.inside

    def support(self) -> np.ndarray:
        return (self.psi != 0) & (self.phi != 0)


def arguments(spec: JetSpec, x1, x2, x3, t: float):
    f = spec.frame
    K = spec.K
    a = np.asarray(spec.shift)
    s = K * (f[0][0] * x1 + f[0][1] * x2 + f[0][2] * x3 + spec.oscillation * t)
    y1, y2, y3 = x1 - a[0], x2 - a[1], x3 - a[2]
    z1 = K * (f[1][0] * y1 + f[1][1] * y2 + f[1][2] * y3)
    z2 = K * (f[2][0] * y1 + f[2][1] * y2 + f[2][2] * y3)
    return s, z1, z2


def sample_at(spec: JetSpec, profiles: ProfileSet, x1, x2, x3, t: float, grid: Grid | None = None) -> JetSample:
    s, z1, z2 = arguments(spec, x1, x2, x3, t)
    shape = np.broadcast_shapes(np.shape(s), np.shape(z1), np.shape(z2))
    s = np.broadcast_to(s, shape)
    tr = profiles.transverse(np.broadcast_to(z1, shape), np.broadcast_to(z2, shape))
    return JetSample(
        spec, grid, t,
        profiles.psi(s, 0), profiles.psi(s, 1), profiles.psi(s, 2),
        tr["Phi"], tr["grad_Phi"], tr["phi"], tr["grad_phi"], tr["inside"],
    )


def _check_profiles(spec: JetSpec, profiles: ProfileSet):
    if abs(spec.ell_perp - profiles.ell_perp) > 1e-15 * spec.ell_perp or abs(spec.ell_par - profiles.ell_par) > 1e-15 * spec.ell_par:
        raise ValueError("jet spec and profile set disagree on the rescaling lengths")


def sample_jet(spec: JetSpec, profiles: ProfileSet, grid: Grid, t: float, require_resolved: bool = True) -> JetSample:
    _check_profiles(spec, profiles)
    if require_resolved:
        need = required_grid(spec)
        if grid.n < need:
            raise ResolutionError(f"jet {spec.triple.xi} needs n >= {need}, grid has {grid.n}", need)
    x1, x2, x3 = grid.coords
    return sample_at(spec, profiles, x1, x2, x3, t, grid)


def make_jet(spec: JetSpec, profiles: ProfileSet, t: float, grid: Grid, require_resolved: bool = True) -> VectorField:
    """W_xi (or the magnetic jet) sampled in physical space."""
    return sample_jet(spec, profiles, grid, t, require_resolved).W()


def make_potential_and_corrector(
    spec: JetSpec, profiles: ProfileSet, t: float, grid: Grid, require_resolved: bool = True
) -> tuple[VectorField, VectorField]:
    js = sample_jet(spec, profiles, grid, t, require_resolved)
    return js.V(), js.Wc()


# ---------------------------------------------------------------- frame torus


def frame_sample(spec: JetSpec, profiles: ProfileSet, n: int, t: float) -> JetSample:
    """The jet pulled back to its frame torus (components in the frame basis)."""
    _check_profiles(spec, profiles)
    g = Grid(n)
    y1, y2, y3 = g.coords
    off = spec.transverse_offset()
    s = y1 + spec.K * spec.oscillation * t
    z1 = np.broadcast_to(y2 - off[0], g.shape)
    z2 = np.broadcast_to(y3 - off[1], g.shape)
    s = np.broadcast_to(s, g.shape)
    tr = profiles.transverse(z1, z2)
    return JetSample(
        spec, g, t,
        profiles.psi(s, 0), profiles.psi(s, 1), profiles.psi(s, 2),
        tr["Phi"], tr["grad_Phi"], tr["phi"], tr["grad_phi"], tr["inside"],
    )


_E = np.eye(3)


def _frame_vec(g: Grid, comps) -> VectorField:
    return VectorField(g, np.stack([np.broadcast_to(c, g.shape) for c in comps]))


@dataclass(frozen=True)
class IdentityResiduals:
    curl_curl: float
    divergence: float
    transport: float
    corrector_ratio: float


def potential_identity_residual(spec: JetSpec, profiles: ProfileSet, t: float, n: int = 64) -> tuple[float, float]:
    """Relative residuals of curl curl V = W + W^c and of div(W + W^c).

    Computed spectrally on the frame torus.  A physical derivative is K times
    a frame derivative, so curl curl V = K^2 curl_y curl_y V.
    """
    js = frame_sample(spec, profiles, n, t)
    g = js.grid
    K = spec.K
    scale = 1.0 / (spec.n_lambda**2 * spec.lam**2)
    zero = np.zeros(g.shape)
    V = _frame_vec(g, [scale * js.psi * js.Phi, zero, zero])
    W = _frame_vec(g, [js.psi * js.phi, zero, zero])
    coef = spec.ell_perp**2 * js.dpsi
    Wc = _frame_vec(g, [zero, coef * js.grad_Phi[0], coef * js.grad_Phi[1]])
    cc = curl(curl(V)) * float(K * K)
    wmax = W.max_norm()
    res = (cc - W - Wc).max_norm() / wmax
    dv = (div(W + Wc) * float(K)).max_norm() / (wmax * spec.lam)
    return res, dv


def corrector_from_formula(spec: JetSpec, profiles: ProfileSet, t: float, n: int = 64) -> float:
    """Relative gap between the closed-form corrector and grad psi x curl(Phi xi)/(N lambda)^2."""
    js = frame_sample(spec, profiles, n, t)
    g = js.grid
    K = spec.K
    zero = np.zeros(g.shape)
    psi = ScalarField(g, js.psi)
    gpsi = grad(psi) * float(K)
    PhiXi = _frame_vec(g, [js.Phi, zero, zero])
    cPhi = curl(PhiXi) * float(K)
    cr = np.cross(gpsi.values, cPhi.values, axis=0) / (spec.n_lambda**2 * spec.lam**2)
    coef = spec.ell_perp**2 * js.dpsi
    closed = np.stack([zero, coef * js.grad_Phi[0], coef * js.grad_Phi[1]])
    return float(np.abs(cr - closed).max() / max(np.abs(closed).max(), 1e-300))


def transport_identity_residual(spec: JetSpec, profiles: ProfileSet, t: float, n: int = 64, fd_shift: float = 1e-3) -> float:
    """|div(W (x) W) - osc^-1 phi^2 d_t psi^2 xi| relative to |div(W (x) W)|.

    The divergence is spectral on the frame torus; d_t psi^2 is a fourth-order
    centered difference in time, an independent route.
    """
    js = frame_sample(spec, profiles, n, t)
    g = js.grid
    K = spec.K
    w = js.psi * js.phi
    # W (x) W has only the (xi, xi) entry in the frame; its divergence is d_s of it along xi
    ww = ScalarField(g, w * w)
    lhs = partial(ww, 0).values * K
    mu = spec.oscillation
    h = fd_shift / (K * mu)

    def psi2(tt):
        s = np.broadcast_to(g.coords[0] + K * mu * tt, g.shape)
        return profiles.psi(s) ** 2

    dpsi2 = (-psi2(t + 2 * h) + 8 * psi2(t + h) - 8 * psi2(t - h) + psi2(t - 2 * h)) / (12 * h)
    rhs = js.phi**2 * dpsi2 / mu
    return float(np.abs(lhs - rhs).max() / np.abs(lhs).max())


def identity_residuals(spec: JetSpec, profiles: ProfileSet, t: float, n: int = 64) -> IdentityResiduals:
    cc, dv = potential_identity_residual(spec, profiles, t, n)
    tr = transport_identity_residual(spec, profiles, t, n)
    js = frame_sample(spec, profiles, n, t)
    w2 = np.sqrt(np.mean((js.psi * js.phi) ** 2))
    wc2 = spec.ell_perp**2 * np.sqrt(np.mean(js.dpsi**2 * (js.grad_Phi[0] ** 2 + js.grad_Phi[1] ** 2)))
    return IdentityResiduals(cc, dv, tr, float(wc2 / w2))


def frame_average_outer(spec: JetSpec, profiles: ProfileSet, n: int = 64) -> np.ndarray:
    """Average of W (x) W over the torus as a 3x3 matrix.

    Pulled back by the covering map, the average equals (mean of psi^2 phi^2)
    xi (x) xi computed on the frame torus.
    """
    js = frame_sample(spec, profiles, n, 0.0)
    m = float(np.mean((js.psi * js.phi) ** 2))
    return m * np.outer(spec.xi, spec.xi)


# ---------------------------------------------------------------- disjointness


def _rational_gcd(vals: list[Fraction]) -> tuple[Fraction, list[int]]:
    """gcd of rationals with integer Bezout coefficients."""
    Q = 1
    for v in vals:
        Q = math.lcm(Q, v.denominator)
    ints = [int(v * Q) for v in vals]
    g, coefs = 0, [0] * len(ints)
    for idx, a in enumerate(ints):
        if a == 0:
            continue
        if g == 0:
            g, coefs = abs(a), [0] * len(ints)
            coefs[idx] = 1 if a > 0 else -1
            continue
        d, x, y = _ext_gcd(g, abs(a))
        coefs = [c * x for c in coefs]
        coefs[idx] = y * (1 if a > 0 else -1)
        g = d
    return Fraction(g, Q), coefs


def _ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        qt, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - qt * x1
        y0, y1 = y1, y0 - qt * y1
    return a, x0, y0


def _vec_frac(v) -> tuple:
    return tuple(Fraction(c) for c in v)


@dataclass(frozen=True)
class PairGeometry:
    i: int
    j: int
    m: tuple  # xi x xi' (rational)
    m_norm2: Fraction
    g: Fraction  # spacing of (p - p').m over 2 pi, per unit of 1/cells
    bezout: tuple
    gens: tuple
    width_factor: Fraction  # (1/N + 1/N')


def pair_geometry(specs: list[JetSpec]) -> list[PairGeometry]:
    """Exact projected-lattice data for every pair of jets (cells factored out)."""
    out = []
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            a, b = specs[i], specs[j]
            m = geometry.cross(a.triple.xi, b.triple.xi)
            m2 = geometry.dot(m, m)
            if m2 == 0:
                raise ValueError("parallel jet directions are not supported")
            gens = [
                geometry.dot(a.triple.a_xi, m) / a.n_lambda,
                geometry.dot(a.triple.xi_cross_a, m) / a.n_lambda,
                geometry.dot(b.triple.a_xi, m) / b.n_lambda,
                geometry.dot(b.triple.xi_cross_a, m) / b.n_lambda,
            ]
            g, coefs = _rational_gcd(gens)
            out.append(
                PairGeometry(i, j, m, m2, g, tuple(coefs), tuple(gens), Fraction(1, a.n_lambda) + Fraction(1, b.n_lambda))
            )
    return out


def _pair_distance_units(pg: PairGeometry, sig_i, sig_j) -> Fraction:
    """dist((sig_i - sig_j).m, g Z) for shifts shift = 2 pi sig / cells."""
    c = sum(((x - y) * mm for x, y, mm in zip(sig_i, sig_j, pg.m)), Fraction(0))
    r = c % pg.g
    return min(r, pg.g - r)


def max_feasible_ell_perp(pairs: list[PairGeometry], sigmas: list) -> tuple[float, tuple[int, int]]:
    """Largest ell_perp keeping every pair of tubes apart, and the limiting pair."""
    best, arg = math.inf, (-1, -1)
    for pg in pairs:
        d = _pair_distance_units(pg, sigmas[pg.i], sigmas[pg.j])
        # distance in x: 2 pi d / (cells |m|); radii sum: ell_perp (1/N + 1/N') / cells
        val = 2 * math.pi * float(d) / (math.sqrt(float(pg.m_norm2)) * float(pg.width_factor))
        if val < best:
            best, arg = val, (pg.i, pg.j)
    return best, arg


def certify_disjoint(pairs: list[PairGeometry], sigmas: list, ell_perp: float) -> list[tuple[int, int]]:
    """Exact check; returns the violating pairs (empty means certified).

    With L = ell_perp/(2 pi) as an exact rational, the pair is separated when
    d^2 > |m|^2 L^2 (1/N + 1/N')^2; the factor pi never enters.
    """
    # pi is irrational: a rational upper bound on 1/pi keeps the test conservative
    inv_pi_upper = Fraction(113, 355) + Fraction(1, 10**6)
    L = Fraction(ell_perp) * inv_pi_upper / 2
    bad = []
    for pg in pairs:
        d = _pair_distance_units(pg, sigmas[pg.i], sigmas[pg.j])
        if not d * d > pg.m_norm2 * L * L * pg.width_factor * pg.width_factor:
            bad.append((pg.i, pg.j))
    return bad


@dataclass(frozen=True)
class ShiftChoice:
    shifts: dict
    sigmas: list
    ell_perp_max: float
    limiting_pair: tuple
    trials: int
    seed: int


def _search_sigmas(pairs, count, trials, seed, denom):
    rng = np.random.default_rng(seed)
    mats = np.array([[float(c) for c in pg.m] for pg in pairs])
    gs = np.array([float(pg.g) for pg in pairs])
    wf = np.array([float(pg.width_factor) for pg in pairs]) * np.sqrt([float(pg.m_norm2) for pg in pairs])
    I = np.array([pg.i for pg in pairs])
    J = np.array([pg.j for pg in pairs])
    best, best_s = -1.0, None
    for _ in range(trials):
        s = rng.integers(0, denom, size=(count, 3)) / denom
        c = np.einsum("pk,pk->p", s[I] - s[J], mats)
        r = np.mod(c, gs)
        d = np.minimum(r, gs - r)
        val = float(np.min(2 * np.pi * d / wf))
        if val > best:
            best, best_s = val, s
    return best_s


def choose_shifts(
    specs: list[JetSpec],
    ell_perp: float | None = None,
    trials: int = 4000,
    seed: int = 0,
    denom: int = 2**16,
) -> ShiftChoice:
    """Shifts making every pair of jet tubes disjoint, with an exact certificate.

    Shifts are 2 pi sigma / cells with sigma on a dyadic lattice.  Raises
    PackingInfeasible, naming the limiting pair, when the best configuration
    found cannot accommodate ell_perp.
    """
    pairs = pair_geometry(specs)
    if not pairs:
        sig = [(Fraction(0),) * 3 for _ in specs]
        return ShiftChoice({}, sig, math.inf, (-1, -1), 0, seed)
    s = _search_sigmas(pairs, len(specs), trials, seed, denom)
    sigmas = [tuple(Fraction(int(round(c * denom)), denom) for c in row) for row in s]
    lmax, pair = max_feasible_ell_perp(pairs, sigmas)
    cells = specs[0].cells
    shifts = {}
    for sp, sg in zip(specs, sigmas):
        shifts[(sp.family, _index_in_family(sp))] = tuple(2 * math.pi * float(c) / cells for c in sg)
    choice = ShiftChoice(shifts, sigmas, lmax, pair, trials, seed)
    if ell_perp is not None:
        bad = certify_disjoint(pairs, sigmas, ell_perp)
        if bad:
            i, j = bad[0]
            raise PackingInfeasible(
                f"ell_perp={ell_perp:.3g} exceeds the packing limit {lmax:.3g}; first failing pair "
                f"{specs[i].triple.xi} / {specs[j].triple.xi}",
                (i, j),
                lmax,
            )
    return choice


def _index_in_family(spec: JetSpec) -> int:
    fam = geometry.direction_family(spec.family)
    return fam.triples.index(spec.triple)


def closest_witness_points(specs: list[JetSpec]) -> list[tuple[int, int, np.ndarray]]:
    """For each pair, the point splitting the closest approach of the two axis lattices
    in the ratio of the tube radii.  It lies in both tubes iff they intersect."""
    pairs = pair_geometry(specs)
    out = []
    for pg in pairs:
        a, b = specs[pg.i], specs[pg.j]
        fa, fb = a.frame, b.frame
        Ka, Kb = a.K, b.K
        m = np.array([float(c) for c in pg.m])
        sa, sb = np.asarray(a.shift), np.asarray(b.shift)
        c = float((sa - sb) @ m)
        step = 2 * math.pi * float(pg.g) / a.cells
        k = -round(c / step)
        # k * g = sum_c coef_c * gen_c, giving integers for the four lattice generators
        ci = [k * x for x in pg.bezout]
        pa = sa + 2 * math.pi / Ka * (ci[0] * fa[1] + ci[1] * fa[2])
        pb = sb - 2 * math.pi / Kb * (ci[2] * fb[1] + ci[3] * fb[2])
        # closest points of lines pa + s xi_a and pb + s' xi_b
        u, v = fa[0], fb[0]
        w0 = pa - pb
        A_, B_, C_ = u @ u, u @ v, v @ v
        D_, E_ = u @ w0, v @ w0
        den = A_ * C_ - B_ * B_
        s1 = (B_ * E_ - C_ * D_) / den
        s2 = (A_ * E_ - B_ * D_) / den
        qa, qb = pa + s1 * u, pb + s2 * v
        ra, rb = a.x_radius()[0], b.x_radius()[0]
        point = qa + (qb - qa) * ra / (ra + rb)
        out.append((pg.i, pg.j, point))
    return out


def in_tube(spec: JetSpec, profiles: ProfileSet, pts: np.ndarray) -> np.ndarray:
    """Is each point (3, ...) inside the transverse support of the jet?"""
    _, z1, z2 = arguments(spec, pts[0], pts[1], pts[2], 0.0)
    return profiles.transverse(z1, z2)["inside"]


@dataclass
class DisjointnessReport:
    certified: bool
    violating_pairs: list
    grid_overlap_points: int
    grid_support_counts: list
    witness_hits: list
    max_pair_overlap_integral: float

    @property
    def grid_ok(self) -> bool:
        return self.grid_overlap_points == 0 and self.max_pair_overlap_integral == 0.0

    @property
    def continuum_ok(self) -> bool:
        return self.certified and not self.witness_hits

    @property
    def ok(self) -> bool:
        return self.grid_ok and self.continuum_ok

    def to_dict(self, max_pairs: int = 8) -> dict:
        return {
            "ok": self.ok,
            "grid_ok": self.grid_ok,
            "continuum_ok": self.continuum_ok,
            "certified": self.certified,
            "violating_pair_count": len(self.violating_pairs),
            "violating_pairs": [list(p) for p in self.violating_pairs[:max_pairs]],
            "grid_overlap_points": self.grid_overlap_points,
            "grid_support_counts": self.grid_support_counts,
            "witness_hit_count": len(self.witness_hits),
            "witness_hits": [list(p) for p in self.witness_hits[:max_pairs]],
            "max_pair_overlap_integral": self.max_pair_overlap_integral,
        }


def disjointness_report(specs: list[JetSpec], profiles: ProfileSet, grid: Grid, sigmas: list | None = None) -> DisjointnessReport:
    """Three views of support disjointness: exact certificate, grid, witnesses."""
    pairs = pair_geometry(specs)
    if sigmas is None:
        sigmas = [tuple(Fraction(c) * specs[0].cells / Fraction(2 * math.pi) for c in sp.shift) for sp in specs]
    bad = certify_disjoint(pairs, sigmas, specs[0].ell_perp)
    x1, x2, x3 = grid.coords
    tubes = []
    mags = []
    for sp in specs:
        js = sample_at(sp, profiles, x1, x2, x3, 0.0, grid)
        tubes.append(js.tube())
        mags.append(np.abs(js.psi * js.phi))
    count = np.sum(np.stack(tubes).astype(np.int32), axis=0)
    overlap = int(np.sum(count > 1))
    worst = 0.0
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            worst = max(worst, float(np.mean(mags[i] * mags[j]) * grid.volume))
    hits = []
    for i, j, pt in closest_witness_points(specs):
        p = pt.reshape(3, 1)
        if in_tube(specs[i], profiles, p)[0] and in_tube(specs[j], profiles, p)[0]:
            hits.append((i, j))
    return DisjointnessReport(not bad, bad, overlap, [int(t.sum()) for t in tubes], hits, worst)


# ---------------------------------------------------------------- scaling


def norm_by_fubini(profiles: ProfileSet, K: float, osc: float, p: float, N: int, M: int, nq: int = 800) -> float:
    """||d_t^M grad^N W||_{L^p(T^3)} via the covering map and radial symmetry.

    The integral over the box equals the integral over the frame torus, where
    the integrand is supported in |s| <= ell_par, |z| <= ell_perp.
    """
    lp, lt = profiles.ell_par, profiles.ell_perp
    s = np.linspace(-1, 1, nq + 1)[1:-1]
    r = np.linspace(0, 1, nq + 1)[1:-1]
    S, R = np.meshgrid(s, r, indexing="ij")
    u = R * R
    _, _, phi_u, dphi_u = profiles.radial_unit(u)
    phi_l = phi_u / lt
    dphi_l = 2 * R * dphi_u / lt**2
    ps = [profiles.psi_unit(S, k) * lp ** (-0.5 - k) for k in range(3)]
    if N == 0 and M == 0:
        mag = np.abs(ps[0] * phi_l)
    elif N == 0 and M == 1:
        mag = K * osc * np.abs(ps[1] * phi_l)
    elif N == 1 and M == 0:
        mag = K * np.sqrt((ps[1] * phi_l) ** 2 + (ps[0] * dphi_l) ** 2)
    elif N == 1 and M == 1:
        mag = K * K * osc * np.sqrt((ps[2] * phi_l) ** 2 + (ps[1] * dphi_l) ** 2)
    else:
        raise ValueError("supported derivative orders: N, M in {0, 1}")
    ds, dr = s[1] - s[0], r[1] - r[0]
    # dy = ell_par ds * ell_perp^2 * 2 pi r dr, and the frame torus has the
    # same volume as the box, with the longitudinal period 2 pi integrated once
    integrand = mag**p * R
    total = np.sum(integrand) * ds * dr * lp * lt**2 * 2 * np.pi
    return float(total ** (1.0 / p))


def predicted_slope(alpha: float, p: float, N: int, M: int) -> float:
    e_perp = -(20 * alpha - 1) / 24
    e_par = -(20 * alpha - 13) / 12
    e_mu = 2 * alpha - 1 + e_par - e_perp
    return (2 / p - 1) * e_perp + (1 / p - 0.5) * e_par + N + M * (e_perp - e_par + 1 + e_mu)


@dataclass(frozen=True)
class ScalingFit:
    p: float
    N: int
    M: int
    lambdas: tuple
    norms: tuple
    slope: float
    predicted: float
    excluded: tuple = ()

    @property
    def error(self) -> float:
        return abs(self.slope - self.predicted)


def desk_scaling_params(lam: float, alpha: float, n_lambda: int) -> dict:
    """Desk values for the scaling laws at one lambda (ell_perp floored to lambda ell_perp in N)."""
    ell_perp = lam ** (-(20 * alpha - 1) / 24)
    cells = max(1, math.floor(lam * ell_perp + 1e-9))
    ell_perp = cells / lam
    ell_par = lam ** (-(20 * alpha - 13) / 12)
    mu = lam ** (2 * alpha - 1) * ell_par / ell_perp
    return {"ell_perp": ell_perp, "ell_par": ell_par, "mu": mu, "cells": cells, "K": n_lambda * cells}


def measure_scaling(family: int, p_list, N: int, M: int, lambdas, alpha: float, nq: int = 800) -> list[ScalingFit]:
    """Least-squares slopes of log ||d_t^M grad^N W||_p against log lambda."""
    n_lam = geometry.family_clearing_factor(family)
    fits = []
    for p in p_list:
        norms = []
        used = []
        excluded = []
        for lam in lambdas:
            d = desk_scaling_params(lam, alpha, n_lam)
            if d["ell_par"] > np.pi or d["ell_perp"] > np.pi:
                excluded.append(lam)
                continue
            prof = ProfileSet(d["ell_perp"], d["ell_par"])
            norms.append(norm_by_fubini(prof, d["K"], d["mu"], p, N, M, nq))
            used.append(lam)
        slope = float(np.polyfit(np.log(used), np.log(norms), 1)[0])
        fits.append(ScalingFit(p, N, M, tuple(used), tuple(norms), slope, predicted_slope(alpha, p, N, M), tuple(excluded)))
    return fits


def corrector_ratio_slope(lambdas, alpha: float, family: int = 0, nq: int = 800) -> tuple[float, float]:
    """Slope of ||W^c||_2/||W||_2 against log lambda and the slope of ell_perp/ell_par."""
    ratios, refs = [], []
    n_lam = geometry.family_clearing_factor(family)
    for lam in lambdas:
        d = desk_scaling_params(lam, alpha, n_lam)
        prof = ProfileSet(d["ell_perp"], d["ell_par"])
        s = np.linspace(-1, 1, nq + 1)[1:-1]
        r = np.linspace(0, 1, nq + 1)[1:-1]
        S, R = np.meshgrid(s, r, indexing="ij")
        Phi, dPhi, phi, _ = prof.radial_unit(R * R)
        lp, lt = prof.ell_par, prof.ell_perp
        psi = prof.psi_unit(S) * lp**-0.5
        dpsi = prof.psi_unit(S, 1) * lp**-1.5
        gradPhi = 2 * R * dPhi / lt**2
        w2 = np.sum((psi * phi / lt) ** 2 * R)
        wc2 = np.sum((lt**2 * dpsi * gradPhi) ** 2 * R)
        ratios.append(math.sqrt(wc2 / w2))
        refs.append(d["ell_perp"] / d["ell_par"])
    ls = np.log(lambdas)
    return float(np.polyfit(ls, np.log(ratios), 1)[0]), float(np.polyfit(ls, np.log(refs), 1)[0])


def tube_indicator(spec: JetSpec, profiles: ProfileSet, grid: Grid) -> np.ndarray:
    x1, x2, x3 = grid.coords
    _, z1, z2 = arguments(spec, x1, x2, x3, 0.0)
    z1, z2 = np.broadcast_arrays(z1, z2)
    lt = profiles.ell_perp
    return (wrap(z1) / lt) ** 2 + (wrap(z2) / lt) ** 2 < 1


def choose_grid_shifts(
    specs: list[JetSpec],
    profiles: ProfileSet,
    grid: Grid,
    seed: int = 0,
    candidates: int = 400,
    denom: int = 2**16,
) -> ShiftChoice:
    """Shifts whose sampled tubes are pairwise disjoint on the grid points.

    Jets are placed one at a time; each takes the first seeded dyadic
    candidate whose tube misses every grid point already occupied and hits at
    least one grid point.  The continuum separation of the result is reported
    in ell_perp_max but not required.
    """
    rng = np.random.default_rng(seed)
    occupied = np.zeros(grid.shape, dtype=bool)
    sigmas, shifts = [], {}
    for sp in specs:
        for _ in range(candidates):
            sig = tuple(Fraction(int(c), denom) for c in rng.integers(0, denom, size=3))
            trial = sp.with_shift(tuple(2 * math.pi * float(c) / sp.cells for c in sig))
            tube = tube_indicator(trial, profiles, grid)
            if tube.any() and not (tube & occupied).any():
                break
        else:
            raise PackingInfeasible(
                f"no grid-disjoint placement for {sp.triple.xi} after {candidates} candidates", (-1, -1), 0.0
            )
        occupied |= tube
        sigmas.append(sig)
        shifts[(sp.family, _index_in_family(sp))] = trial.shift
    pairs = pair_geometry(specs)
    lmax, pair = max_feasible_ell_perp(pairs, sigmas) if pairs else (math.inf, (-1, -1))
    return ShiftChoice(shifts, sigmas, lmax, pair, candidates, seed)
