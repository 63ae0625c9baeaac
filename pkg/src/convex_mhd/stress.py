"""New Reynolds stresses at level q+1 and their finalization.

With u = ubar + w and B = Bbar + d, the stresses are assembled from three
groups: linear terms (inverted with R or R curl^-1), corrector terms (products
not involving two principal parts), and oscillation terms (the glued stress
plus principal self-interaction plus the temporal corrector's time
derivative).  Every gradient met on the way goes into the pressure.  Closure
is exact because all quadratic terms use the same dealiased bilinear products
as the residual evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gluing import GluedFields
from .perturbation import PerturbationParts, building_block_norms
from .solver import Residual, hall_flux, induction_flux, residual_relaxed
from .spectral import (
    ScalarField,
    SymTensorField,
    VectorField,
    curl,
    curl_inverse_then_r,
    div,
    frac_laplacian,
    helmholtz_inverse_laplacian,
    inverse_divergence,
    leray_div_r,
    leray_project,
    low_pass,
    mean_free,
    sym_outer,
)


@dataclass
class NextLevel:
    """The level-(q+1) tuple at one time, with the stress terms kept apart."""

    t: float
    u: VectorField
    B: VectorField
    p: ScalarField
    R_u: SymTensorField
    R_B: SymTensorField
    du: VectorField
    dB: VectorField
    R_u_tilde: SymTensorField
    p_tilde: ScalarField
    terms: dict = field(default_factory=dict)

    def relaxed(self):
        return self.u, self.B, self.p, self.R_u, self.R_B, self.du, self.dB


def stress_u(glued: GluedFields, parts: PerturbationParts, alpha: float):
    """R~u, p~ and the velocity term breakdown."""
    w, d = parts.w, parts.d
    lin = parts.dw_pc + frac_laplacian(w, alpha) + div((sym_outer(glued.u, w) - sym_outer(glued.B, d)) * 2.0)
    linear = inverse_divergence(lin)
    corrector = (sym_outer(w) - sym_outer(parts.w_p)) - (sym_outer(d) - sym_outer(parts.d_p))
    X = div(glued.R_u + sym_outer(parts.w_p) - sym_outer(parts.d_p)) + parts.dw_t
    oscillation = inverse_divergence(leray_project(X))
    p_tilde = glued.p - helmholtz_inverse_laplacian(div(X))
    R_tilde = linear + corrector + oscillation
    terms = {"linear_u": linear, "corrector_u": corrector, "oscillation_u": oscillation}
    return R_tilde, p_tilde, terms


def finalize_u(R_tilde: SymTensorField, p_tilde: ScalarField) -> tuple[SymTensorField, ScalarField]:
    """R_u = R P_H div R~, p = p~ - Delta^{-1} div div R~."""
    return leray_div_r(R_tilde), p_tilde - helmholtz_inverse_laplacian(div(div(R_tilde)))


def stress_B(glued: GluedFields, parts: PerturbationParts, alpha: float):
    """R_B at level q+1 and its breakdown."""
    w, d = parts.w, parts.d
    lin = (
        frac_laplacian(d, alpha)
        + parts.dd_pc
        + induction_flux(glued.u, d)
        + induction_flux(w, glued.B)
        + hall_flux(glued.B, d) * 2.0
    )
    linear = curl_inverse_then_r(lin)
    corrector = curl_inverse_then_r(induction_flux(w, d)) + (sym_outer(d) - sym_outer(parts.d_p)).traceless()
    Y = curl(div(glued.R_B + sym_outer(parts.d_p))) + parts.dd_t
    oscillation = curl_inverse_then_r(Y)
    R = linear + corrector + oscillation
    terms = {"linear_B": linear, "corrector_B": corrector, "oscillation_B": oscillation}
    return R, terms


def next_level(glued: GluedFields, parts: PerturbationParts, alpha: float) -> NextLevel:
    if parts.is_zero and not np.any(glued.R_u.values) and not np.any(glued.R_B.values):
        z = SymTensorField.zeros(glued.u.grid, trace_free=True)
        return NextLevel(glued.t, glued.u, glued.B, glued.p, z, z, glued.du, glued.dB, z, glued.p, {})
    R_tilde, p_tilde, tu = stress_u(glued, parts, alpha)
    R_u, p = finalize_u(R_tilde, p_tilde)
    R_B, tb = stress_B(glued, parts, alpha)
    return NextLevel(
        glued.t,
        glued.u + parts.w,
        glued.B + parts.d,
        p,
        R_u,
        R_B,
        glued.du + parts.dw,
        glued.dB + parts.dd,
        R_tilde,
        p_tilde,
        {**tu, **tb},
    )


def closure(nl: NextLevel, alpha: float) -> Residual:
    """Independent evaluation of the relaxed-system residual of the new tuple."""
    return residual_relaxed(*nl.relaxed(), alpha)


def symmetry_defects(nl: NextLevel) -> dict:
    """Pointwise trace relative to the tensor size; symmetry holds by storage."""
    out = {}
    for name, R in (("R_u", nl.R_u), ("R_B", nl.R_B)):
        scale = max(R.max_norm(), 1e-300)
        out[name] = float(np.max(np.abs(R.trace()))) / scale
    return out


# ---------------------------------------------------------------- reports


def stress_norm_report(nl: NextLevel, p_list=(1.0, 1.1, 2.0), lam: float | None = None, eps_R: float | None = None, delta_next2: float | None = None) -> dict:
    rows = {}
    named = {"R_u": nl.R_u, "R_B": nl.R_B, "R_u_tilde": nl.R_u_tilde, **nl.terms}
    for k, f in named.items():
        rows[k] = {f"L{p}": f.lp_norm(p) for p in p_list}
    out = {"t": nl.t, "norms": rows}
    if lam is not None and eps_R is not None and delta_next2 is not None:
        out["target"] = lam ** (-2 * eps_R) * delta_next2
    return out


def term_exponents(alpha: float) -> dict:
    gap = 1.25 - alpha
    return {"corrector": -(5 / 12) * gap, "oscillation_E1": -(5 / 6) * gap}


def term_block_slopes(lambdas=(16, 32, 64), alpha: float = 1.2, n_lambda: int = 5, nq: int = 800) -> dict:
    """Slopes of the stress building blocks against log lambda.

    The corrector block is (||W^c|| + ||d^t block|| + ||w^t block||) ||W||, as
    in the product estimates; the high-frequency oscillation block is
    ||W (x) W||_1 / (lambda ell_perp), the gain of inverting the divergence on
    modes of size lambda ell_perp.  Lengths drop the integer constraint.
    """

    rows = []
    for lam in lambdas:
        b = building_block_norms(lam, alpha, n_lambda, nq)
        ell_perp = lam ** (-(20 * alpha - 1) / 24)
        rows.append({"corrector": b["corrector"] + b["temporal_B"] + b["temporal_u"], "oscillation_E1": 1.0 / (lam * ell_perp)})
    ref = term_exponents(alpha)
    ls = np.log(lambdas)
    out = {}
    for k in ref:
        slope = float(np.polyfit(ls, np.log([r[k] for r in rows]), 1)[0])
        out[k] = {"slope": slope, "predicted": ref[k], "error": abs(slope - ref[k])}
    return out


def low_frequency_fraction(W: VectorField, kappa: float) -> float:
    """||P_{<kappa} P_{!=0} (W (x) W)|| / ||W (x) W|| for a sampled jet."""
    q = sym_outer(W)
    low = low_pass(mean_free(q), kappa)
    return low.lp_norm(2) / max(q.lp_norm(2), 1e-300)
