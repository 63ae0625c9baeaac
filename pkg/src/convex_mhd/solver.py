"""Pseudo-spectral integration of hyperdissipative Hall-MHD and relaxed residuals.

Time stepping is of integrating-factor (Lawson) type: the dissipation is
applied exactly through the heat semigroup and the quadratic terms explicitly.
Quadratic terms are evaluated only through the fluxes below, which the gluing
and stress modules reuse so that discrete bilinear identities hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    curl,
    div,
    frac_laplacian,
    grad,
    helmholtz_inverse_laplacian,
    leray_hat,
    leray_project,
    outer,
    sym_outer,
    _check_alpha,
    SYM_PAIRS,
    sym_index,
)


class ResolutionExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- fluxes


def momentum_flux(u: VectorField, B: VectorField, u2: VectorField | None = None, B2: VectorField | None = None) -> SymTensorField:
    """Symmetrized u (x) u2 - B (x) B2 (defaults u2 = u, B2 = B)."""
    return sym_outer(u, u2) - sym_outer(B, B2)


def induction_flux(u: VectorField, B: VectorField) -> VectorField:
    """div(u (x) B - B (x) u)."""
    t = outer(u, B)
    v = t.values
    anti = v - np.swapaxes(v, 0, 1)
    return div(type(t)(t.grid, anti))


def hall_flux(B: VectorField, B2: VectorField | None = None) -> VectorField:
    """curl div of the symmetrized B (x) B2."""
    return curl(div(sym_outer(B, B2)))


def pressure(u: VectorField, B: VectorField) -> ScalarField:
    """p = -Delta^{-1} div div(u (x) u - B (x) B)."""
    return -helmholtz_inverse_laplacian(div(div(momentum_flux(u, B))))


# ---------------------------------------------------------------- states


@dataclass
class FlowState:
    u: VectorField
    B: VectorField
    t: float = 0.0
    p: ScalarField | None = None

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def divergence_error(self) -> float:
        out = 0.0
        for f in (self.u, self.B):
            scale = max(f.max_norm(), 1e-300) * self.grid.n / 2
            out = max(out, div(f).max_norm() / scale)
        return out

    def mean_error(self) -> float:
        return float(max(np.abs(self.u.mean()).max(), np.abs(self.B.mean()).max()))

    def check(self, tol: float = 1e-8):
        if self.divergence_error() > tol:
            raise ValueError(f"state at t={self.t} is not divergence free: {self.divergence_error():.3e}")
        if self.mean_error() > tol * max(1.0, self.u.max_norm(), self.B.max_norm()):
            raise ValueError(f"state at t={self.t} has nonzero mean: {self.mean_error():.3e}")


@dataclass
class RelaxedState(FlowState):
    R_u: SymTensorField | None = None
    R_B: SymTensorField | None = None


def rhs(u: VectorField, B: VectorField, alpha: float) -> tuple[VectorField, VectorField]:
    """Time derivatives of (u, B) under the exact system."""
    nu, nb = nonlinear(u, B)
    return nu - frac_laplacian(u, alpha), nb - frac_laplacian(B, alpha)


def nonlinear(u: VectorField, B: VectorField) -> tuple[VectorField, VectorField]:
    nu = -leray_project(div(momentum_flux(u, B)))
    nb = -induction_flux(u, B) - hall_flux(B)
    return nu, nb


# ---------------------------------------------------------------- residuals


@dataclass
class Residual:
    res_u: VectorField
    res_B: VectorField
    scale_u: float
    scale_B: float

    def norms(self) -> dict:
        out = {}
        for name, f in (("u", self.res_u), ("B", self.res_B)):
            out[name] = {"L1": f.lp_norm(1), "L2": f.lp_norm(2), "Linf": f.max_norm()}
        return out

    @property
    def relative(self) -> float:
        return max(self.res_u.max_norm() / max(self.scale_u, 1e-300), self.res_B.max_norm() / max(self.scale_B, 1e-300))


def residual_relaxed(
    u: VectorField,
    B: VectorField,
    p: ScalarField,
    R_u: SymTensorField,
    R_B: SymTensorField,
    du: VectorField,
    dB: VectorField,
    alpha: float,
) -> Residual:
    """Pointwise defect of the relaxed system.

    The relative size is measured against the largest single term of each
    equation, so an exactly closed tuple reports roundoff.
    """
    _check_alpha(alpha)
    lap_u = frac_laplacian(u, alpha)
    flux = div(momentum_flux(u, B))
    gp = grad(p)
    dRu = div(R_u)
    res_u = du + lap_u + flux + gp - dRu
    lap_B = frac_laplacian(B, alpha)
    ind = induction_flux(u, B)
    hall = hall_flux(B)
    cRB = curl(div(R_B))
    res_B = dB + lap_B + ind + hall - cRB
    su = max(f.max_norm() for f in (du, lap_u, flux, gp, dRu))
    sB = max(f.max_norm() for f in (dB, lap_B, ind, hall, cRB))
    return Residual(res_u, res_B, su, sB)


# ---------------------------------------------------------------- energy


def _parseval_weights(grid: Grid) -> np.ndarray:
    kz = grid.wavenumbers[2]
    n = grid.n
    w = np.where((kz == 0) | (np.abs(kz) == n // 2), 1.0, 2.0)
    return w * (2 * np.pi) ** 3 / float(n) ** 6


def energy(u: VectorField, B: VectorField) -> float:
    """(1/2)(||u||^2 + ||B||^2) over the torus."""
    w = _parseval_weights(u.grid)
    return 0.5 * float(np.sum(w * (np.abs(u.hat) ** 2 + np.abs(B.hat) ** 2)))


def dissipation(u: VectorField, B: VectorField, alpha: float) -> float:
    """||u||_{H^alpha}^2 + ||B||_{H^alpha}^2 (homogeneous)."""
    g = u.grid
    w = _parseval_weights(g) * g.k_squared**alpha * g.regular
    return float(np.sum(w * (np.abs(u.hat) ** 2 + np.abs(B.hat) ** 2)))


def homogeneous_norm(f: VectorField, s: float) -> float:
    g = f.grid
    w = _parseval_weights(g) * g.k_squared**s * g.regular
    return math.sqrt(float(np.sum(w * np.abs(f.hat) ** 2)))


def tail_fraction(u: VectorField, B: VectorField) -> float:
    """Share of the energy carried by modes outside the dealiased band."""
    g = u.grid
    w = _parseval_weights(g)
    e = w * (np.abs(u.hat) ** 2 + np.abs(B.hat) ** 2)
    total = float(np.sum(e))
    if total == 0.0:
        return 0.0
    return float(np.sum(e * ~g.dealias_mask[None])) / total


# ---------------------------------------------------------------- stepping


def _semigroup(grid: Grid, h: float, alpha: float) -> np.ndarray:
    return np.exp(-h * grid.k_squared**alpha)


_ANTI = ((0, 1), (0, 2), (1, 2))


def nonlinear_hat(grid: Grid, uh: np.ndarray, bh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of the quadratic terms, one batched transform each way.

    Same discrete operator as ``nonlinear``; used by the time stepper.
    """
    mask = grid.dealias_mask
    ta = grid.ifft(uh * mask)
    tb = grid.ifft(bh * mask)
    prods = [ta[a] * ta[b] - tb[a] * tb[b] for a, b in SYM_PAIRS]
    prods += [tb[a] * tb[b] for a, b in SYM_PAIRS]
    prods += [ta[i] * tb[j] - tb[i] * ta[j] for i, j in _ANTI]
    ph = grid.fft(np.stack(prods)) * (mask * grid.regular)
    ik = grid.ik
    M, H, E = ph[:6], ph[6:12], ph[12:]
    divM = np.stack([sum(ik[i] * M[sym_index(i, j)] for i in range(3)) for j in range(3)])
    divH = np.stack([sum(ik[i] * H[sym_index(i, j)] for i in range(3)) for j in range(3)])

    def anti(i, j):
        if i == j:
            return 0.0
        return E[_ANTI.index((i, j))] if i < j else -E[_ANTI.index((j, i))]

    ind = np.stack([sum(ik[i] * anti(i, j) for i in range(3)) for j in range(3)])
    hall = np.stack(
        [
            ik[1] * divH[2] - ik[2] * divH[1],
            ik[2] * divH[0] - ik[0] * divH[2],
            ik[0] * divH[1] - ik[1] * divH[0],
        ]
    )
    return -leray_hat(grid, divM), -ind - hall


def _step_rk4(g, u, B, h, alpha):
    Eh2 = _semigroup(g, h / 2, alpha)
    Eh = Eh2 * Eh2
    k1u, k1b = nonlinear_hat(g, u, B)
    k2u, k2b = nonlinear_hat(g, Eh2 * (u + h / 2 * k1u), Eh2 * (B + h / 2 * k1b))
    k3u, k3b = nonlinear_hat(g, Eh2 * u + h / 2 * k2u, Eh2 * B + h / 2 * k2b)
    k4u, k4b = nonlinear_hat(g, Eh * u + h * Eh2 * k3u, Eh * B + h * Eh2 * k3b)
    nu = Eh * (u + h / 6 * k1u) + Eh2 * (h / 3) * (k2u + k3u) + h / 6 * k4u
    nb = Eh * (B + h / 6 * k1b) + Eh2 * (h / 3) * (k2b + k3b) + h / 6 * k4b
    return nu, nb


def _step_rk2(g, u, B, h, alpha):
    Eh2 = _semigroup(g, h / 2, alpha)
    k1u, k1b = nonlinear_hat(g, u, B)
    k2u, k2b = nonlinear_hat(g, Eh2 * (u + h / 2 * k1u), Eh2 * (B + h / 2 * k1b))
    return Eh2 * (Eh2 * u + h * k2u), Eh2 * (Eh2 * B + h * k2b)


INTEGRATORS = {"rk4": _step_rk4, "rk2": _step_rk2}


def step(u: VectorField, B: VectorField, h: float, alpha: float, integrator: str = "rk4"):
    """One step of length h, followed by a Leray re-projection of both fields."""
    if h == 0.0:
        return u, B
    g = u.grid
    nu, nb = INTEGRATORS[integrator](g, u.hat, B.hat, h, alpha)
    return VectorField.from_hat(g, leray_hat(g, nu)), VectorField.from_hat(g, leray_hat(g, nb))


def cfl_dt(u: VectorField, B: VectorField, cfl: float = 0.25) -> float:
    dx = u.grid.dx
    um, bm = u.max_norm(), B.max_norm()
    cands = [math.inf]
    if um > 0:
        cands.append(dx / um)
    if bm > 0:
        cands.append(dx * dx / bm)
    return cfl * min(cands)


@dataclass
class Trajectory:
    """Uniform node grid on [t0, t1]; off-node states take one partial step."""

    t0: float
    dt: float
    nodes: list
    alpha: float
    integrator: str = "rk4"
    energies: list = field(default_factory=list)
    dissipations: list = field(default_factory=list)
    restarts: int = 0

    @property
    def t1(self) -> float:
        return self.t0 + self.dt * (len(self.nodes) - 1)

    @property
    def grid(self) -> Grid:
        return self.nodes[0][0].grid

    def node_time(self, i: int) -> float:
        return self.t0 + i * self.dt

    def _locate(self, t: float) -> tuple[int, float]:
        span = self.t1 - self.t0
        eps = 1e-12 * max(1.0, abs(self.t1))
        if t < self.t0 - eps or t > self.t1 + eps:
            raise ValueError(f"t={t} outside trajectory range [{self.t0}, {self.t1}]")
        if span == 0:
            return 0, 0.0
        x = (t - self.t0) / self.dt
        i = int(math.floor(x + 1e-9))
        i = min(max(i, 0), len(self.nodes) - 1)
        h = t - self.node_time(i)
        if abs(h) <= 1e-12 * self.dt:
            h = 0.0
        return i, max(h, 0.0)

    def state(self, t: float) -> FlowState:
        i, h = self._locate(t)
        u, B = self.nodes[i]
        if h > 0:
            u, B = step(u, B, h, self.alpha, self.integrator)
        return FlowState(u, B, t)

    def derivative(self, t: float) -> tuple[VectorField, VectorField, FlowState]:
        s = self.state(t)
        du, dB = rhs(s.u, s.B, self.alpha)
        return du, dB, s

    def energy_defects(self) -> np.ndarray:
        """Per-step |Delta E + int D dt| / (E dt), with Simpson quadrature in time."""
        out = []
        for i in range(len(self.nodes) - 1):
            tm = self.node_time(i) + self.dt / 2
            sm = self.state(tm)
            dm = dissipation(sm.u, sm.B, self.alpha)
            integral = self.dt / 6 * (self.dissipations[i] + 4 * dm + self.dissipations[i + 1])
            dE = self.energies[i + 1] - self.energies[i]
            scale = max(self.energies[i], 1e-300) * self.dt
            out.append(abs(dE + integral) / scale)
        return np.array(out)

    def manifest(self) -> dict:
        return {
            "t0": self.t0,
            "t1": self.t1,
            "dt": self.dt,
            "steps": len(self.nodes) - 1,
            "integrator": self.integrator,
            "restarts": self.restarts,
            "energy": [float(e) for e in self.energies],
        }


def solve_exact(
    init: FlowState,
    t1: float,
    alpha: float,
    dt_max: float = 0.01,
    cfl: float = 0.25,
    integrator: str = "rk4",
    tail_tol: float = 1e-3,
    max_restarts: int = 8,
) -> Trajectory:
    """Integrate (Hall-MHD1) from init on [init.t, t1] on a uniform node grid.

    The step is the CFL bound at the initial state, capped by dt_max; if the
    bound is violated later the run restarts with half the step.
    """
    _check_alpha(alpha)
    t0 = init.t
    if t1 < t0:
        raise ValueError("t1 must not precede the initial time")
    u0, B0 = leray_project(init.u), leray_project(init.B)
    tail0 = tail_fraction(u0, B0)
    dt = min(dt_max, cfl_dt(u0, B0, cfl))
    for restart in range(max_restarts + 1):
        n = max(1, math.ceil((t1 - t0) / dt - 1e-9)) if t1 > t0 else 0
        h = (t1 - t0) / n if n else 0.0
        nodes = [(u0, B0)]
        energies = [energy(u0, B0)]
        diss = [dissipation(u0, B0, alpha)]
        u, B = u0, B0
        ok = True
        for k in range(n):
            if cfl_dt(u, B, cfl) < h * (1 - 1e-12):
                ok = False
                break
            u, B = step(u, B, h, alpha, integrator)
            tf = tail_fraction(u, B)
            if tf > max(tail_tol, 1.01 * tail0):
                raise ResolutionExceeded(f"spectral tail fraction {tf:.3e} at t={t0 + (k + 1) * h:.6g}")
            nodes.append((u, B))
            energies.append(energy(u, B))
            diss.append(dissipation(u, B, alpha))
        if ok:
            return Trajectory(t0, h if n else 1.0, nodes, alpha, integrator, energies, diss, restart)
        dt = h / 2
    raise ResolutionExceeded(f"CFL could not be met after {max_restarts} restarts")


# ---------------------------------------------------------------- diagnostics


def smoothing_ratios(traj: Trajectory, orders=(1, 2), times=None, base: float = 4.0) -> dict:
    """(t - t0)^{N/(2 alpha)} ||(u, B)(t)||_{H^{base+N}} for a bounded-ratio check."""
    if times is None:
        times = [traj.node_time(i) for i in range(1, len(traj.nodes))]
    out = {}
    for N in orders:
        rows = []
        for t in times:
            s = traj.state(t)
            val = math.hypot(homogeneous_norm(s.u, base + N), homogeneous_norm(s.B, base + N))
            rows.append((t, (t - traj.t0) ** (N / (2 * traj.alpha)) * val))
        out[N] = rows
    return out


def stability_gap(relaxed_state, exact: Trajectory, times, p: float, stress_sup: float) -> list[dict]:
    """||(u_q - u, B_q - B)(t)||_{L^{2p}} / (|t - t0| * stress_sup) per sampled t.

    relaxed_state(t) returns (u_q, B_q); stress_sup is the supremum over the run
    of || |grad| (R_u, div R_B) ||_{L^{2p}}.
    """
    rows = []
    for t in times:
        uq, Bq = relaxed_state(t)
        s = exact.state(t)
        gap = math.hypot((uq - s.u).lp_norm(2 * p), (Bq - s.B).lp_norm(2 * p))
        dt = t - exact.t0
        ratio = gap / (dt * stress_sup) if dt > 0 and stress_sup > 0 else (0.0 if gap == 0 else math.inf)
        rows.append({"t": t, "gap": gap, "ratio": ratio})
    return rows


def stress_gradient_norm(R_u: SymTensorField, R_B: SymTensorField, p: float) -> float:
    """|| |grad| (R_u, div R_B) ||_{L^{2p}}, the forcing size in the stability bound."""
    g = R_u.grid
    mult = np.sqrt(g.k_squared)
    a = SymTensorField.from_hat(g, R_u.hat * mult)
    b = VectorField.from_hat(g, div(R_B).hat * mult)
    return math.hypot(a.lp_norm(2 * p), b.lp_norm(2 * p))
