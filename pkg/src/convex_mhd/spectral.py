"""Periodic spectral calculus on the box [-pi, pi]^3.

Fields store real samples on a uniform grid; Fourier coefficients are cached
lazily.  Every operator is a pure function returning a new field.  Odd
derivative multipliers vanish on Nyquist modes, and every operator drops the
Nyquist planes so that outputs stay conjugate-symmetric.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_SYM_INDEX = {}
for _c, (_i, _j) in enumerate(SYM_PAIRS):
    _SYM_INDEX[(_i, _j)] = _c
    _SYM_INDEX[(_j, _i)] = _c

ALPHA_RANGE = (1.0, 1.25)


def _workers() -> int:
    return max(1, int(os.environ.get("CONVEX_MHD_THREADS", "1")))


class ParameterDomainError(ValueError):
    pass


class PreconditionViolation(ValueError):
    pass


def sym_index(i: int, j: int) -> int:
    return _SYM_INDEX[(i, j)]


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``n`` points per axis on the 2*pi periodic box."""

    n: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")
        frac = Fraction(self.dealias_fraction)
        if not (0 < frac <= 1):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "dealias_fraction", frac)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def dx(self) -> float:
        return 2 * np.pi / self.n

    @property
    def volume(self) -> float:
        return (2 * np.pi) ** 3

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = -np.pi + self.dx * np.arange(self.n)
        return x[:, None, None], x[None, :, None], x[None, None, :]

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        kr = np.arange(self.n // 2 + 1, dtype=float)
        return k[:, None, None], k[None, :, None], kr[None, None, :]

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return k1**2 + k2**2 + k3**2

    @cached_property
    def regular(self) -> np.ndarray:
        """False on any mode that sits on a Nyquist plane."""
        h = self.n // 2
        k1, k2, k3 = self.wavenumbers
        return (np.abs(k1) != h) & (np.abs(k2) != h) & (np.abs(k3) != h)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = float(self.dealias_fraction) * self.n / 2
        k1, k2, k3 = self.wavenumbers
        return (np.abs(k1) < cut) & (np.abs(k2) < cut) & (np.abs(k3) < cut)

    @cached_property
    def inv_k_squared(self) -> np.ndarray:
        ksq = self.k_squared.copy()
        ksq[0, 0, 0] = 1.0
        out = 1.0 / ksq
        out[0, 0, 0] = 0.0
        return out

    @cached_property
    def ik(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Derivative multipliers with Nyquist modes zeroed."""
        return tuple(1j * np.where(self.regular, k, 0.0) for k in self.wavenumbers)

    def fft(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values, axes=(-3, -2, -1), workers=_workers())

    def ifft(self, hat: np.ndarray) -> np.ndarray:
        return sfft.irfftn(hat, s=self.shape, axes=(-3, -2, -1), workers=_workers())


class Field:
    """Real samples of a scalar, vector, symmetric or general tensor field."""

    kind = "field"
    ncomp: int | None = None

    def __init__(self, grid: Grid, values, hat: np.ndarray | None = None):
        values = np.asarray(values, dtype=float)
        expected = self._lead_shape() + grid.shape
        if values.shape != expected:
            raise ValueError(f"{self.kind} field expects shape {expected}, got {values.shape}")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        if hat is not None:
            self.__dict__["hat"] = hat

    @classmethod
    def _lead_shape(cls) -> tuple[int, ...]:
        return () if cls.ncomp is None else (cls.ncomp,)

    @cached_property
    def hat(self) -> np.ndarray:
        return self.grid.fft(self.values)

    @classmethod
    def from_hat(cls, grid: Grid, hat: np.ndarray, **kw):
        hat = hat * grid.regular
        return cls(grid, grid.ifft(hat), hat=hat, **kw)

    @classmethod
    def zeros(cls, grid: Grid, **kw):
        return cls(grid, np.zeros(cls._lead_shape() + grid.shape), **kw)

    def _like(self, values):
        return type(self)(self.grid, values)

    def _check(self, other):
        if not isinstance(other, Field) or other.kind != self.kind or other.grid != self.grid:
            raise TypeError(f"incompatible operands {self.kind} and {getattr(other, 'kind', type(other))}")

    def __add__(self, other):
        self._check(other)
        return self._like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.values - other.values)

    def __neg__(self):
        return self._like(-self.values)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return self._like(self.values * other.values)
        if isinstance(other, Field):
            return NotImplemented
        return self._like(self.values * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._like(self.values / float(other))

    def mean(self) -> np.ndarray | float:
        m = self.values.mean(axis=(-3, -2, -1))
        return float(m) if np.ndim(m) == 0 else m

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def max_norm(self) -> float:
        return float(self.magnitude().max())

    def lp_norm(self, p: float) -> float:
        return lp_norm(self, p)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.grid.n})"


class ScalarField(Field):
    kind = "scalar"
    ncomp = None


class VectorField(Field):
    kind = "vector"
    ncomp = 3

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])

    @classmethod
    def stack(cls, comps):
        grid = comps[0].grid
        return cls(grid, np.stack([c.values for c in comps]))


class SymTensorField(Field):
    """Symmetric 3x3 tensor stored as (11, 22, 33, 12, 13, 23)."""

    kind = "sym"
    ncomp = 6

    def __init__(self, grid: Grid, values, hat=None, trace_free: bool = False):
        super().__init__(grid, values, hat)
        self.trace_free = trace_free
        if trace_free:
            tr = np.abs(self.trace()).max()
            scale = max(self.max_norm(), 1e-300)
            if tr > 1e-12 * scale and tr > 1e-300:
                raise PreconditionViolation(f"trace-free flag set but trace {tr:.3e} vs max {scale:.3e}")

    def _like(self, values):
        return SymTensorField(self.grid, values)

    def __add__(self, other):
        out = super().__add__(other)
        out.trace_free = self.trace_free and other.trace_free
        return out

    def __sub__(self, other):
        out = super().__sub__(other)
        out.trace_free = self.trace_free and other.trace_free
        return out

    def __neg__(self):
        out = super().__neg__()
        out.trace_free = self.trace_free
        return out

    def __mul__(self, other):
        out = super().__mul__(other)
        if out is not NotImplemented:
            out.trace_free = self.trace_free
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        out = super().__truediv__(other)
        out.trace_free = self.trace_free
        return out

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.values[sym_index(i, j)]

    def full(self) -> np.ndarray:
        v = self.values
        return np.stack([np.stack([v[sym_index(i, j)] for j in range(3)]) for i in range(3)])

    @classmethod
    def from_full(cls, grid: Grid, arr: np.ndarray, trace_free: bool = False):
        vals = np.stack([0.5 * (arr[i, j] + arr[j, i]) for i, j in SYM_PAIRS])
        return cls(grid, vals, trace_free=trace_free)

    def trace(self) -> np.ndarray:
        return self.values[0] + self.values[1] + self.values[2]

    def traceless(self) -> SymTensorField:
        vals = self.values.copy()
        tr = self.trace() / 3.0
        vals[:3] -= tr
        return SymTensorField(self.grid, vals, trace_free=True)

    def magnitude(self) -> np.ndarray:
        v = self.values
        return np.sqrt(np.sum(v[:3] ** 2, axis=0) + 2 * np.sum(v[3:] ** 2, axis=0))


class TensorField(Field):
    """General 3x3 tensor field, values[i, j] = T_ij."""

    kind = "tensor"
    ncomp = 9

    @classmethod
    def _lead_shape(cls):
        return (3, 3)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=(0, 1)))


# ---------------------------------------------------------------- helpers


def _check_alpha(alpha: float):
    lo, hi = ALPHA_RANGE
    if not (lo <= alpha < hi):
        raise ParameterDomainError(f"alpha={alpha} outside [{lo}, {hi})")


def _apply(f: Field, mult) -> Field:
    kw = {"trace_free": f.trace_free} if isinstance(f, SymTensorField) else {}
    return type(f).from_hat(f.grid, f.hat * mult, **kw)


def scalar_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Apply a Fourier multiplier componentwise."""
    return _apply(f, mult)


def mean_free(f: Field) -> Field:
    """P_{!=0}: remove the spatial mean."""
    mult = np.ones(f.grid.k_squared.shape)
    mult[0, 0, 0] = 0.0
    return _apply(f, mult)


def high_pass(f: Field, kappa: float) -> Field:
    """Sharp filter onto modes with |k| >= kappa."""
    return _apply(f, (np.sqrt(f.grid.k_squared) >= kappa).astype(float))


def low_pass(f: Field, kappa: float) -> Field:
    return _apply(f, (np.sqrt(f.grid.k_squared) < kappa).astype(float))


def truncate(f: Field) -> Field:
    """Projection onto the dealiased band."""
    return _apply(f, f.grid.dealias_mask.astype(float))


def partial(f: Field, j: int) -> Field:
    return _apply(f, f.grid.ik[j])


# ---------------------------------------------------------------- operators


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField.from_hat(g, np.stack([f.hat * g.ik[j] for j in range(3)]))


def div(f: Field) -> Field:
    """Divergence; on tensors it contracts the first index, (div T)_j = d_i T_ij."""
    g = f.grid
    ik = g.ik
    if isinstance(f, VectorField):
        return ScalarField.from_hat(g, sum(ik[j] * f.hat[j] for j in range(3)))
    if isinstance(f, SymTensorField):
        h = f.hat
        comps = [sum(ik[i] * h[sym_index(i, j)] for i in range(3)) for j in range(3)]
        return VectorField.from_hat(g, np.stack(comps))
    if isinstance(f, TensorField):
        h = f.hat
        comps = [sum(ik[i] * h[i, j] for i in range(3)) for j in range(3)]
        return VectorField.from_hat(g, np.stack(comps))
    raise TypeError(f"div undefined for {f.kind}")


def curl(v: VectorField) -> VectorField:
    g = v.grid
    ik = g.ik
    h = v.hat
    return VectorField.from_hat(
        g,
        np.stack(
            [
                ik[1] * h[2] - ik[2] * h[1],
                ik[2] * h[0] - ik[0] * h[2],
                ik[0] * h[1] - ik[1] * h[0],
            ]
        ),
    )


def laplacian(f: Field) -> Field:
    return _apply(f, -f.grid.k_squared)


def frac_laplacian(f: Field, alpha: float) -> Field:
    """(-Delta)^alpha, multiplier |k|^(2 alpha)."""
    _check_alpha(alpha)
    return _apply(f, f.grid.k_squared**alpha)


def heat_semigroup(f: Field, t: float, alpha: float) -> Field:
    """exp(-t (-Delta)^alpha)."""
    _check_alpha(alpha)
    if t < 0:
        raise ParameterDomainError(f"negative time {t}")
    return _apply(f, np.exp(-t * f.grid.k_squared**alpha))


def helmholtz_inverse_laplacian(f: Field) -> Field:
    """Delta^{-1} on zero-mean fields: multiplier -1/|k|^2, zero mode to 0."""
    return _apply(f, -f.grid.inv_k_squared)


inverse_laplacian = helmholtz_inverse_laplacian


def leray_hat(grid: Grid, hat: np.ndarray) -> np.ndarray:
    k = grid.wavenumbers
    kdot = sum(k[j] * hat[j] for j in range(3)) * grid.inv_k_squared
    return np.stack([hat[j] - k[j] * kdot for j in range(3)])


def leray_project(v: VectorField) -> VectorField:
    """Helmholtz projection f - grad Delta^{-1} div f, zero mode preserved."""
    return VectorField.from_hat(v.grid, leray_hat(v.grid, v.hat))


def inverse_divergence(v: VectorField) -> SymTensorField:
    """Trace-free symmetric R v with div R v = v - mean(v)."""
    g = v.grid
    ik = g.ik
    k = g.wavenumbers
    inv = -g.inv_k_squared
    u = v.hat
    lap_inv_u = [u[j] * inv for j in range(3)]
    div_lap_inv = sum(ik[j] * lap_inv_u[j] for j in range(3))
    comps = []
    for a, b in SYM_PAIRS:
        val = ik[a] * lap_inv_u[b] + ik[b] * lap_inv_u[a]
        kk = k[a] * k[b] * g.inv_k_squared
        delta = 1.0 if a == b else 0.0
        val = val - 0.5 * (delta + kk) * div_lap_inv
        comps.append(val)
    hat = np.stack(comps)
    hat[:, 0, 0, 0] = 0.0
    return SymTensorField.from_hat(g, hat, trace_free=True)


def spectral_norm(f: Field) -> float:
    return float(np.sqrt(np.sum(np.abs(f.hat) ** 2)))


def curl_inverse(f: VectorField, require_divfree: bool = False) -> VectorField:
    """(-Delta)^{-1} curl f."""
    if require_divfree:
        d = spectral_norm(div(f))
        scale = spectral_norm(f)
        if d > 1e-8 * max(scale, 1e-300):
            raise PreconditionViolation(f"curl_inverse: |div f|={d:.3e} exceeds 1e-8 |f|={scale:.3e}")
    c = curl(f)
    return _apply(c, c.grid.inv_k_squared)


def curl_inverse_then_r(f: VectorField) -> SymTensorField:
    """The composite R curl^{-1}, used for magnetic stresses."""
    return inverse_divergence(curl_inverse(f))


def leray_div_r(t: SymTensorField) -> SymTensorField:
    """R P_H div T, the velocity stress finalization operator."""
    return inverse_divergence(leray_project(div(t)))


# ---------------------------------------------------------------- products


def _band(f: Field) -> np.ndarray:
    g = f.grid
    if g.dealias_fraction == 1:
        return f.values
    return g.ifft(f.hat * g.dealias_mask)


def _finish(grid: Grid, arr: np.ndarray) -> np.ndarray:
    hat = grid.fft(arr)
    if grid.dealias_fraction != 1:
        hat = hat * grid.dealias_mask
    return hat


def product(a: ScalarField, b: Field) -> Field:
    """Dealiased pointwise product of a scalar with any field."""
    g = a.grid
    out = _band(a) * _band(b)
    cls = type(b)
    return cls.from_hat(g, _finish(g, out))


def outer(a: VectorField, b: VectorField) -> TensorField:
    """Dealiased a (x) b with entries a_i b_j."""
    g = a.grid
    ta, tb = _band(a), _band(b)
    arr = ta[:, None] * tb[None, :]
    return TensorField.from_hat(g, _finish(g, arr))


def sym_outer(a: VectorField, b: VectorField | None = None) -> SymTensorField:
    """Dealiased symmetric part of a (x) b."""
    g = a.grid
    ta = _band(a)
    tb = ta if b is None else _band(b)
    vals = np.stack([0.5 * (ta[i] * tb[j] + ta[j] * tb[i]) for i, j in SYM_PAIRS])
    return SymTensorField.from_hat(g, _finish(g, vals))


def traceless_outer(a: VectorField, b: VectorField | None = None) -> SymTensorField:
    """a (x)o b, the traceless part of the symmetrized product."""
    return sym_outer(a, b).traceless()


def sym_part(t: TensorField) -> SymTensorField:
    v = t.values
    return SymTensorField(t.grid, np.stack([0.5 * (v[i, j] + v[j, i]) for i, j in SYM_PAIRS]))


# ---------------------------------------------------------------- norms


def lp_norm(f: Field, p: float) -> float:
    """L^p norm by trapezoidal quadrature over the box."""
    mag = f.magnitude()
    vol = f.grid.volume
    if np.isinf(p):
        return float(mag.max())
    return float((vol * np.mean(mag**p)) ** (1.0 / p))


def average(f: Field):
    return f.mean()


# ---------------------------------------------------------------- snapshots


def write_snapshot(path: str | Path, f: Field, time: float, provenance: dict | None = None) -> Path:
    """Write ``path.bin`` (little-endian float64, x1 fastest) and ``path.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lead = f.values.reshape((-1,) + f.grid.shape)
    data = np.stack([c.T for c in lead]).astype("<f8")
    data.tofile(path.with_suffix(".bin"))
    meta = {
        "grid_n": f.grid.n,
        "kind": f.kind,
        "components": int(lead.shape[0]),
        "time": float(time),
        "provenance": provenance or {},
    }
    if isinstance(f, SymTensorField):
        meta["trace_free"] = f.trace_free
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path.with_suffix(".bin")


_KINDS = {"scalar": ScalarField, "vector": VectorField, "sym": SymTensorField, "tensor": TensorField}


def read_snapshot(path: str | Path) -> tuple[Field, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n = meta["grid_n"]
    grid = Grid(n)
    raw = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape((meta["components"], n, n, n))
    vals = np.stack([c.T for c in raw])
    cls = _KINDS[meta["kind"]]
    vals = vals.reshape(cls._lead_shape() + grid.shape)
    kw = {"trace_free": meta.get("trace_free", False)} if cls is SymTensorField else {}
    return cls(grid, vals, **kw), meta
