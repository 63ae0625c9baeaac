"""Rational direction families, their frames, and the weights gamma_xi^2.

Each family holds six unit vectors xi with rational entries.  Any symmetric
matrix R near the identity splits as sum_xi gamma_xi^2(R) xi (x) xi.  The map
from the six weights to symmetric matrices is linear and invertible, so the
weights are computed from a precomputed exact rational inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import lcm

import numpy as np

from .spectral import SYM_PAIRS

Vec = tuple[Fraction, Fraction, Fraction]

# Pythagorean triples (p, q, r) with p^2 + q^2 = r^2, one per family.
TRIPLES = {0: (3, 4, 5), 1: (5, 12, 13), 2: (7, 24, 25), 3: (8, 15, 17)}


class NotInPositivityRange(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


def cross(a: Vec, b: Vec) -> Vec:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def dot(a: Vec, b: Vec) -> Fraction:
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


@dataclass(frozen=True)
class DirectionTriple:
    xi: Vec
    a_xi: Vec
    xi_cross_a: Vec

    def __post_init__(self):
        for v in (self.xi, self.a_xi, self.xi_cross_a):
            if dot(v, v) != 1:
                raise InvariantViolation(f"{v} is not a unit vector")
        if dot(self.xi, self.a_xi) != 0:
            raise InvariantViolation("xi and A_xi are not orthogonal")
        if cross(self.xi, self.a_xi) != self.xi_cross_a:
            raise InvariantViolation("third frame vector is not xi x A_xi")

    def as_array(self) -> np.ndarray:
        """Rows xi, A_xi, xi x A_xi as floats."""
        return np.array([[float(c) for c in v] for v in (self.xi, self.a_xi, self.xi_cross_a)])

    def denominator(self) -> int:
        return lcm(*(c.denominator for v in (self.xi, self.a_xi, self.xi_cross_a) for c in v))


@dataclass(frozen=True)
class DirectionFamily:
    index: int
    triples: tuple[DirectionTriple, ...]
    _inverse: tuple = field(default=(), repr=False, compare=False)

    @property
    def directions(self) -> list[Vec]:
        return [t.xi for t in self.triples]

    def xi_array(self) -> np.ndarray:
        return np.array([[float(c) for c in t.xi] for t in self.triples])

    def denominator(self) -> int:
        return lcm(*(t.denominator() for t in self.triples))


def _unit(i: int) -> list[Fraction]:
    v = [Fraction(0)] * 3
    v[i] = Fraction(1)
    return v


def _pair(p: int, q: int, r: int, i: int, k: int, swap: bool) -> list[DirectionTriple]:
    """xi = a e_i +- b e_k, A = b e_i -+ a e_k, with (a, b) = (p, q) or (q, p)."""
    a, b = (Fraction(q, r), Fraction(p, r)) if swap else (Fraction(p, r), Fraction(q, r))
    out = []
    for s in (1, -1):
        xi = _unit(i)
        xi = [a * c for c in xi]
        xi[k] = s * b
        A = [Fraction(0)] * 3
        A[i] = b
        A[k] = -s * a
        xi_t, A_t = tuple(xi), tuple(A)
        out.append(DirectionTriple(xi_t, A_t, cross(xi_t, A_t)))
    return out


@lru_cache(maxsize=None)
def direction_family(alpha: int) -> DirectionFamily:
    """The rational family with the frames of the table pattern.

    Pairs are (e1, e2), (e1, e3), (e2, e3).  The third frame vector is the
    exact cross product, which is minus the listed coordinate vector for the
    '+' member of each pair.
    """
    if alpha not in TRIPLES:
        raise ValueError(f"family index must be 0..3, got {alpha}")
    p, q, r = TRIPLES[alpha]
    triples = _pair(p, q, r, 0, 1, False) + _pair(p, q, r, 0, 2, True) + _pair(p, q, r, 1, 2, False)
    fam = DirectionFamily(alpha, tuple(triples))
    basis = _basis_matrix(fam)
    inv = _rational_inverse(basis)
    object.__setattr__(fam, "_inverse", tuple(tuple(row) for row in inv))
    return fam


def all_families() -> list[DirectionFamily]:
    return [direction_family(a) for a in range(4)]


def n_lambda() -> int:
    """Least positive integer clearing every frame denominator of all families."""
    return lcm(*(f.denominator() for f in all_families()))


def family_clearing_factor(alpha: int) -> int:
    return direction_family(alpha).denominator()


def outer_sym6(v) -> list:
    """Entries (11, 22, 33, 12, 13, 23) of v (x) v."""
    return [v[i] * v[j] for i, j in SYM_PAIRS]


def _basis_matrix(fam: DirectionFamily) -> list[list[Fraction]]:
    cols = [outer_sym6(t.xi) for t in fam.triples]
    return [[cols[c][r] for c in range(6)] for r in range(6)]


def _rational_inverse(m: list[list[Fraction]]) -> list[list[Fraction]]:
    n = len(m)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise InvariantViolation("singular family map")
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [x / pv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def half_sum_identity(alpha: int) -> list[list[Fraction]]:
    """Exact value of sum_xi (1/2) xi (x) xi."""
    fam = direction_family(alpha)
    out = [[Fraction(0)] * 3 for _ in range(3)]
    for t in fam.triples:
        for i in range(3):
            for j in range(3):
                out[i][j] += Fraction(1, 2) * t.xi[i] * t.xi[j]
    return out


def gamma_weights_exact(R, alpha: int) -> list[Fraction]:
    """Weights gamma_xi^2 for a rational symmetric matrix, no positivity check."""
    fam = direction_family(alpha)
    vec = [Fraction(R[i][j]) for i, j in SYM_PAIRS]
    return [sum((row[c] * vec[c] for c in range(6)), Fraction(0)) for row in fam._inverse]


@lru_cache(maxsize=None)
def inverse_matrix(alpha: int) -> np.ndarray:
    fam = direction_family(alpha)
    return np.array([[float(x) for x in row] for row in fam._inverse])


def sym6(R) -> np.ndarray:
    """Symmetric matrix (3, 3, ...) or 6-vector (6, ...) to 6-vector form."""
    R = np.asarray(R, dtype=float)
    if R.shape[:2] == (3, 3):
        return np.stack([0.5 * (R[i, j] + R[j, i]) for i, j in SYM_PAIRS])
    if R.shape[0] == 6:
        return R
    raise ValueError(f"cannot interpret shape {R.shape} as a symmetric matrix")


def solve_weights(R, alpha: int) -> np.ndarray:
    """Linear solve of the weights; R may carry trailing pointwise axes."""
    vec = sym6(R)
    inv = inverse_matrix(alpha)
    return np.tensordot(inv, vec, axes=(1, 0))


def gamma_weights(R, alpha: int, radius: float | None = None) -> np.ndarray:
    """gamma_xi^2(R) for the six directions of family alpha.

    Raises NotInPositivityRange when R lies outside the certified radius and
    some solved weight is not positive.
    """
    vec = sym6(R)
    w = solve_weights(vec, alpha)
    if radius is None:
        radius = positivity_radius(alpha).radius
    dist = _frobenius_from_identity(vec)
    bad = (np.min(w, axis=0) <= 0) & (dist >= radius)
    if np.any(bad):
        raise NotInPositivityRange(
            f"family {alpha}: |R - Id| up to {float(np.max(np.where(bad, dist, 0))):.4g} "
            f"outside radius {radius:.4g} with non-positive weight"
        )
    if np.any(np.min(w, axis=0) <= 0):
        raise InvariantViolation("non-positive weight inside certified radius")
    return w


def _frobenius_from_identity(vec: np.ndarray) -> np.ndarray:
    d = vec.copy()
    d[:3] = d[:3] - 1.0
    return np.sqrt(np.sum(d[:3] ** 2, axis=0) + 2 * np.sum(d[3:] ** 2, axis=0))


def reconstruct(weights: np.ndarray, alpha: int) -> np.ndarray:
    """sum_xi w_xi xi (x) xi as a 6-vector."""
    xis = direction_family(alpha).xi_array()
    basis = np.array([[x[i] * x[j] for i, j in SYM_PAIRS] for x in xis])
    return np.tensordot(basis, weights, axes=(0, 0))


@dataclass(frozen=True)
class RadiusCertificate:
    alpha: int
    radius: float
    n_samples: int
    bisection_steps: int
    min_weight_at_radius: float
    seed: int
    sampled_radius: float
    analytic_radius: float


def _sphere_samples(n: int, seed: int) -> np.ndarray:
    """Unit-Frobenius symmetric directions as 6-vectors (random plus axes)."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((6, n))
    # off-diagonal coordinates appear twice in the Frobenius norm
    norm = np.sqrt(np.sum(g[:3] ** 2, axis=0) + 2 * np.sum(g[3:] ** 2, axis=0))
    dirs = g / norm
    axes = []
    for c in range(6):
        e = np.zeros(6)
        e[c] = 1.0 if c < 3 else 1.0 / np.sqrt(2.0)
        axes.extend([e, -e])
    return np.concatenate([dirs, np.array(axes).T], axis=1)


@lru_cache(maxsize=None)
def positivity_radius(alpha: int, n_samples: int = 20000, steps: int = 40, seed: int = 0) -> RadiusCertificate:
    """Empirical radius: largest r with all weights positive on the sampled sphere.

    The weights are affine in R, so the minimum weight over the sphere of
    radius r equals 1/2 - r * c for the support value c of the sampled
    directions; bisection is kept explicit so the certificate reports its
    resolution.
    """
    inv = inverse_matrix(alpha)
    dirs = _sphere_samples(n_samples, seed)
    slope = np.tensordot(inv, dirs, axes=(1, 0))
    base = solve_weights(np.eye(3), alpha)[:, None]

    def min_weight(r: float) -> float:
        return float(np.min(base + r * slope))

    lo, hi = 0.0, 1.0
    while min_weight(hi) > 0:
        lo, hi = hi, 2 * hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if min_weight(mid) > 0:
            lo = mid
        else:
            hi = mid
    # Each weight is 1/2 plus a linear functional of R - Id, so its minimum on
    # the sphere is 1/2 - r * (dual norm of the row).  The sampled value can
    # only overestimate that bound; the certificate keeps the smaller one.
    dual = np.sqrt(np.sum(inv[:, :3] ** 2, axis=1) + 0.5 * np.sum(inv[:, 3:] ** 2, axis=1))
    analytic = float(np.min(0.5 / dual))
    radius = min(lo, analytic)
    return RadiusCertificate(alpha, radius, int(dirs.shape[1]), steps, min_weight(radius), seed, lo, analytic)


def frame_table() -> list[dict]:
    rows = []
    for fam in all_families():
        for t in fam.triples:
            rows.append(
                {
                    "family": fam.index,
                    "xi": [str(c) for c in t.xi],
                    "A_xi": [str(c) for c in t.a_xi],
                    "xi_cross_A": [str(c) for c in t.xi_cross_a],
                }
            )
    return rows
