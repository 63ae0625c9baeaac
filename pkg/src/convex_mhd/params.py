"""Scheme parameters in paper mode (exact exponents) and desk mode (floats).

In paper mode every quantity is ``coeff * a**exponent`` with rational exponent
and coefficient, so comparisons reduce to rational arithmetic plus, when the
coefficients differ, one high-precision logarithm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import mpmath

from . import geometry

PAPER, DESK = "paper", "desk"

CONSTRAINT_BETA = "beta < (5-4*alpha)/100"
CONSTRAINT_B = "1/b < (5-4*alpha)/100"
CONSTRAINT_OSC = "4*rho/(rho-1) < b*(5-4*alpha)/50"


class ConstraintViolation(ValueError):
    def __init__(self, failing: list[str]):
        self.failing = failing
        super().__init__("parameter constraint violated: " + "; ".join(failing))


def exact(x) -> Fraction:
    """Exact rational from int, Fraction, or the decimal repr of a float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


@dataclass(frozen=True)
class Power:
    """The number coeff * a**exponent."""

    exponent: Fraction
    coeff: Fraction = Fraction(1)

    def __mul__(self, other: "Power") -> "Power":
        return Power(self.exponent + other.exponent, self.coeff * other.coeff)

    def __truediv__(self, other: "Power") -> "Power":
        return Power(self.exponent - other.exponent, self.coeff / other.coeff)

    def __pow__(self, k) -> "Power":
        k = exact(k)
        if self.coeff != 1 and k.denominator != 1:
            raise ValueError("fractional power of a non-unit coefficient")
        return Power(self.exponent * k, self.coeff ** int(k) if self.coeff != 1 else Fraction(1))

    def log2(self, log2_a) -> mpmath.mpf:
        with mpmath.workdps(60):
            return mpmath.mpf(self.exponent.numerator) / self.exponent.denominator * log2_a + mpmath.log(
                mpmath.mpf(self.coeff.numerator) / self.coeff.denominator, 2
            )

    def to_float(self, a) -> float:
        return float(self.coeff) * float(a) ** float(self.exponent)


ONE = Power(Fraction(0))


def log2_of(a: Fraction):
    """log2(a), exact when a is a power of two."""
    if a.denominator == 1 and a.numerator > 0 and a.numerator & (a.numerator - 1) == 0:
        return Fraction(a.numerator.bit_length() - 1)
    with mpmath.workdps(60):
        return mpmath.log(mpmath.mpf(a.numerator) / a.denominator, 2)


def compare_log2_margin(small: Power, big: Power, log2_a) -> tuple[bool, float]:
    """Decide small < big; the margin is log2(big/small)."""
    ratio = big / small
    if ratio.coeff == 1:
        m = ratio.exponent * log2_a if isinstance(log2_a, Fraction) else None
        if m is not None:
            return m > 0, float(m)
        return ratio.exponent > 0, float(ratio.log2(log2_a))
    m = ratio.log2(log2_a)
    return bool(m > 0), float(m)


Level = float | tuple | None


@dataclass(frozen=True)
class DeskOverrides:
    """Desk values; each float may also be a per-level sequence (last entry repeats)."""

    lambda_: Level = None
    ell_perp: Level = None
    ell_par: Level = None
    mu: Level = None
    mu_bar: Level = None
    grid_n: int = 32
    n_lambda: int | str = "family"
    theta_next: Level = None
    tau_next: Level = None
    delta_next: Level = None
    delta_q_scale: Level = None
    tau_current: Level = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "DeskOverrides":
        d = dict(d or {})
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown desk overrides: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def at(self, name: str, q: int):
        v = getattr(self, name)
        if isinstance(v, tuple):
            return v[min(q, len(v) - 1)]
        return v

    def to_dict(self) -> dict:
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}
        d["lambda"] = d.pop("lambda_")
        return d


@dataclass(frozen=True)
class DeskLevel:
    """Concrete float parameters used to build level q+1 on a grid."""

    q: int
    lam: float
    cells: int
    ell_perp: float
    ell_par: float
    mu: float
    mu_bar: float
    n_lambda: tuple[int, int, int, int]
    theta_next: float
    tau_next: float
    tau_q: float
    delta_next: float
    stress_scale: float
    grid_n: int
    adjustments: tuple[str, ...] = ()

    def rho_i(self, i: int, delta_hat: float) -> float:
        """rho_i = 2 delta^-1 4^(i+1) lambda_q^(-eps_R/4) delta_{q+1}."""
        return 2.0 / delta_hat * 4.0 ** (i + 1) * self.stress_scale

    def oscillation(self, family: int) -> float:
        return self.mu if family in (0, 1) else self.mu_bar


@dataclass(frozen=True)
class ParamSet:
    rho: Fraction
    alpha: Fraction
    b: int
    beta: Fraction
    eps_R: Fraction
    a: Fraction
    T: Fraction
    mode: str
    desk: DeskOverrides = field(default_factory=DeskOverrides)
    adjustments: tuple[str, ...] = ()

    # ---------------------------------------------------------- exact layer

    @property
    def log2_a(self):
        return log2_of(self.a)

    def lam(self, q: int) -> Power:
        return Power(Fraction(self.b) ** q)

    def delta(self, q: int) -> Power:
        return self.lam(1) ** (3 * self.beta) * self.lam(q) ** (-2 * self.beta)

    def theta(self, q: int) -> Power:
        if q < 1:
            raise ValueError("theta_0 is not assigned a value")
        r = self.rho
        return self.lam(q - 1) ** (-4 * r / (r - 1)) * self.delta(q) ** Fraction(1, 2)

    def tau(self, q: int) -> Power:
        if q == 0:
            return Power(Fraction(0), self.T / 15)
        return self.theta(q) * self.lam(q - 1) ** (-self.eps_R / 4)

    def ell_perp(self, q: int) -> Power:
        return self.lam(q + 1) ** (-(20 * self.alpha - 1) / 24)

    def ell_par(self, q: int) -> Power:
        return self.lam(q + 1) ** (-(20 * self.alpha - 13) / 12)

    def mu(self, q: int) -> Power:
        return self.lam(q + 1) ** (2 * self.alpha - 1) * self.ell_par(q) / self.ell_perp(q)

    def mu_bar(self, q: int) -> Power:
        e = Fraction(5, 12) * (5 * self.alpha - Fraction(1, 4))
        return self.lam(q + 1) ** e * self.ell_par(q) / self.ell_perp(q)

    def stress_scale(self, q: int) -> Power:
        """lambda_q^(-eps_R/4) delta_{q+1}, the cutoff normalization."""
        return self.lam(q) ** (-self.eps_R / 4) * self.delta(q + 1)

    def value(self, power: Power) -> float:
        return power.to_float(self.a)

    # ---------------------------------------------------------- desk layer

    def desk_level(self, q: int) -> DeskLevel:
        """Float parameters for building level q+1, with overrides applied."""
        if self.mode != DESK:
            raise ValueError("desk_level needs desk mode")
        o = self.desk
        notes = list(self.adjustments)

        def pick(name, default):
            v = o.at(name, q)
            return default() if v is None else v

        lam = pick("lambda_", lambda: self.value(self.lam(q + 1)))
        a2 = float(self.alpha)
        ell_perp = pick("ell_perp", lambda: lam ** (-(20 * a2 - 1) / 24))
        cells = math.floor(lam * ell_perp + 1e-9)
        if cells < 1:
            raise ValueError(f"lambda*ell_perp = {lam * ell_perp:.4g} < 1; no integral adjustment exists")
        if abs(cells - lam * ell_perp) > 1e-12 * max(1.0, lam * ell_perp):
            notes.append(f"ell_perp {ell_perp!r} lowered to {cells / lam!r} so lambda*ell_perp = {cells}")
            ell_perp = cells / lam
        ell_par = pick("ell_par", lambda: lam ** (-(20 * a2 - 13) / 12))
        mu = pick("mu", lambda: lam ** (2 * a2 - 1) * ell_par / ell_perp)
        mu_bar = pick("mu_bar", lambda: lam ** (5 / 12 * (5 * a2 - 0.25)) * ell_par / ell_perp)
        if not (mu_bar > mu > 0):
            raise ValueError(f"desk mode needs mu_bar > mu > 0, got mu={mu}, mu_bar={mu_bar}")
        if o.n_lambda == "family":
            nl = tuple(geometry.family_clearing_factor(a) for a in range(4))
        elif o.n_lambda == "common":
            nl = (geometry.n_lambda(),) * 4
        else:
            nl = (int(o.n_lambda),) * 4
            for a in range(4):
                if nl[a] % geometry.family_clearing_factor(a):
                    raise ValueError(f"n_lambda={nl[a]} does not clear family {a}")
        theta_next = pick("theta_next", lambda: self.value(self.theta(q + 1)))
        tau_next = pick("tau_next", lambda: self.value(self.tau(q + 1)))
        if q == 0:
            tau_q = self.value(self.tau(0))
        else:
            prev = o.at("tau_next", q - 1)
            tau_q = pick("tau_current", lambda: self.value(self.tau(q)) if prev is None else prev)
        delta_next = pick("delta_next", lambda: self.value(self.delta(q + 1)))
        scale = pick("delta_q_scale", lambda: self.value(self.lam(q) ** (-self.eps_R / 4)) * delta_next)
        return DeskLevel(
            q=q,
            lam=float(lam),
            cells=int(cells),
            ell_perp=float(ell_perp),
            ell_par=float(ell_par),
            mu=float(mu),
            mu_bar=float(mu_bar),
            n_lambda=nl,
            theta_next=float(theta_next),
            tau_next=float(tau_next),
            tau_q=float(tau_q),
            delta_next=float(delta_next),
            stress_scale=float(scale),
            grid_n=int(o.grid_n),
            adjustments=tuple(notes),
        )

    def to_dict(self) -> dict:
        return {
            "rho": str(self.rho),
            "alpha": str(self.alpha),
            "b": self.b,
            "beta": str(self.beta),
            "eps_R": str(self.eps_R),
            "a": str(self.a),
            "T": str(self.T),
            "mode": self.mode,
            "desk_overrides": self.desk.to_dict(),
            "adjustments": list(self.adjustments),
        }


def check_constraints(rho, alpha, b, beta) -> list[str]:
    """Names of the failing inequalities of the parameter triple."""
    gap = 5 - 4 * alpha
    failing = []
    if not beta < gap / 100:
        failing.append(CONSTRAINT_BETA)
    if not Fraction(1, b) < gap / 100:
        failing.append(CONSTRAINT_B)
    if not 4 * rho / (rho - 1) < Fraction(b) * gap / 50:
        failing.append(CONSTRAINT_OSC)
    return failing


def build_params(
    rho,
    alpha,
    b,
    beta,
    eps_R,
    a,
    T=1,
    mode: str = DESK,
    desk_overrides: DeskOverrides | dict | None = None,
    enforce: bool = True,
) -> ParamSet:
    """Validate and assemble a ParamSet.

    In paper mode with ``enforce`` the constraint triple must hold; otherwise
    a ConstraintViolation names every failing inequality.
    """
    rho, alpha, beta, eps_R, a, T = map(exact, (rho, alpha, beta, eps_R, a, T))
    b = int(b)
    if mode not in (PAPER, DESK):
        raise ValueError(f"mode must be 'paper' or 'desk', got {mode!r}")
    if not (1 < rho <= alpha < Fraction(5, 4)):
        raise ConstraintViolation(["1 < rho <= alpha < 5/4"])
    if b < 1 or beta <= 0 or eps_R <= 0 or a <= 1 or T <= 0:
        raise ConstraintViolation(["b >= 1, beta > 0, eps_R > 0, a > 1, T > 0"])
    if mode == PAPER and enforce:
        failing = check_constraints(rho, alpha, b, beta)
        if failing:
            raise ConstraintViolation(failing)
    if not isinstance(desk_overrides, DeskOverrides):
        desk_overrides = DeskOverrides.from_dict(desk_overrides)
    return ParamSet(rho, alpha, b, beta, eps_R, a, T, mode, desk_overrides)


def params_from_config(cfg: dict, enforce: bool = True) -> ParamSet:
    return build_params(
        cfg["rho"],
        cfg["alpha"],
        cfg["b"],
        cfg["beta"],
        cfg["eps_R"],
        cfg["a"],
        cfg.get("T", 1),
        cfg.get("mode", DESK),
        cfg.get("desk_overrides"),
        enforce=enforce,
    )


# ---------------------------------------------------------------- audits


@dataclass(frozen=True)
class Check:
    name: str
    satisfied: bool
    margin_log2: float
    required: bool = True


@dataclass
class AuditReport:
    q: int
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.satisfied for c in self.checks if c.required)

    def failing(self) -> list[str]:
        return [c.name for c in self.checks if c.required and not c.satisfied]

    def to_dict(self) -> dict:
        return {"q": self.q, "ok": self.ok, "checks": [asdict(c) for c in self.checks]}


def _rational_margin(lhs: Fraction, rhs: Fraction) -> tuple[bool, float]:
    return lhs < rhs, float(rhs - lhs)


def audit_inequalities(p: ParamSet, q: int) -> AuditReport:
    """Evaluate the level-q inequalities in exact exponent arithmetic."""
    L = p.log2_a
    checks: list[Check] = []
    gap = 5 - 4 * p.alpha
    for name, lhs, rhs in (
        (CONSTRAINT_BETA, p.beta, gap / 100),
        (CONSTRAINT_B, Fraction(1, p.b), gap / 100),
        (CONSTRAINT_OSC, 4 * p.rho / (p.rho - 1), Fraction(p.b) * gap / 50),
    ):
        ok, m = _rational_margin(lhs, rhs)
        checks.append(Check(name, ok, m))

    def less(name, small, big, required=True):
        ok, m = compare_log2_margin(small, big, L)
        checks.append(Check(name, ok, m, required))

    less(f"tau_{q + 1} < theta_{q + 1}", p.tau(q + 1), p.theta(q + 1))
    less(f"theta_{q + 1} < tau_{q}", p.theta(q + 1), p.tau(q))
    less(f"tau_{q} < 1", p.tau(q), ONE)
    bound = p.lam(q) ** -20 * p.delta(q + 1) ** Fraction(1, 2)
    ok, m = compare_log2_margin(p.theta(q + 1), bound, L)
    checks.append(Check(f"theta_{q + 1} <= lambda_{q}^-20 delta_{q + 1}^1/2", ok or m == 0, m))
    bound_t = bound * p.lam(q) ** (-p.eps_R / 4)
    ok, m = compare_log2_margin(p.tau(q + 1), bound_t, L)
    checks.append(Check(f"tau_{q + 1} <= lambda_{q}^(-20-eps_R/4) delta_{q + 1}^1/2", ok or m == 0, m))
    # the estimate the constraint triple is meant to secure: lambda kappa^-1 << 1
    e = 5 * (p.beta * p.b + 4 * p.rho / (p.rho - 1) + Fraction(1, 4) - Fraction(p.b) * gap / 24)
    checks.append(Check("exponent of lambda*kappa^-1 is negative", e < 0, float(-e), required=False))
    checks.append(_integrality_check(p, q))
    literal = Fraction(25 - 24 * p.alpha) / 24
    checks.append(
        Check("literal a^((25-24*alpha)/24) is a natural number", _is_natural_power(p.a, literal), 0.0, required=False)
    )
    return AuditReport(q, checks)


def _is_natural_power(a: Fraction, e: Fraction) -> bool:
    """Is a**e a positive integer (a a power of two or an integer)?"""
    if e < 0:
        return False
    if a.denominator != 1:
        return False
    if e.denominator == 1:
        return True
    lg = log2_of(a)
    if isinstance(lg, Fraction):
        return (lg * e).denominator == 1
    root = round(float(a) ** float(1 / e.denominator))
    return root ** e.denominator == a.numerator


def _integrality_check(p: ParamSet, q: int) -> Check:
    e = p.ell_perp(q).exponent + Fraction(p.b) ** (q + 1)
    return Check(f"lambda_{q + 1}*ell_perp is a natural number", _is_natural_power(p.a, e), float(e), required=False)


def box_dimension_bound(p: ParamSet) -> tuple[Fraction, Fraction, bool]:
    """Closed-form limit of the box-counting quotient and the comparison bound."""
    r, b, beta, eps = p.rho, Fraction(p.b), p.beta, p.eps_R
    if b <= 1:
        raise ValueError("b must exceed 1 for the dimension bound")
    value = 1 - eps / (8 * (b - 1)) * b * (r - 1) / (4 * r + (r - 1) * (beta * b + eps / 4))
    bound = 1 - (r - 1) * eps / 48
    return value, bound, value < bound
