"""Command line entry point: convex-mhd {params|jets|geometry|glue|perturb|stress|iterate|verify}."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import geometry, gluing, harness, jets, params as params_mod
from .harness import RunConfig, to_json
from .perturbation import corrector_gap, perturbation_norm_report
from .solver import residual_relaxed
from .spectral import Grid
from .stress import closure, stress_norm_report, symmetry_defects


def _params(cfg: RunConfig, args) -> tuple[bool, dict]:
    p = cfg.param_set(enforce=False)
    failing = params_mod.check_constraints(p.rho, p.alpha, p.b, p.beta)
    out = {"params": p.to_dict(), "constraint_triple_failing": failing}
    audits = harness.audit_suite(p, cfg.checks.audit_levels)
    out["suites"] = audits
    ok = all(v["pass"] or not v.get("hard", True) for v in audits.values())
    if args.level is not None:
        rep = params_mod.audit_inequalities(p, args.level)
        out["audit_level"] = rep.to_dict()
        ok &= not [n for n in rep.failing() if n not in failing]
    if cfg.is_paper:
        return ok, out
    levels = []
    for q in range(cfg.levels + 1):
        lev = p.desk_level(q)
        row = {k: getattr(lev, k) for k in ("q", "lam", "cells", "ell_perp", "ell_par", "mu", "mu_bar", "theta_next", "tau_next", "tau_q", "delta_next", "stress_scale")}
        row["n_lambda"] = list(lev.n_lambda)
        row["adjustments"] = list(lev.adjustments)
        row["ordering"] = lev.tau_next < lev.theta_next < lev.tau_q
        row["containment_room"] = lev.tau_q >= 2 * lev.theta_next + 3 * lev.tau_next if q > 0 else True
        ok &= row["ordering"] and row["containment_room"]
        levels.append(row)
    out["desk_levels"] = levels
    return ok, out


def _geometry(cfg: RunConfig, args) -> tuple[bool, dict]:
    res = harness.geometry_suite()
    res["measured"]["frames"] = geometry.frame_table()
    return res["pass"], res


def _jets(cfg: RunConfig, args) -> tuple[bool, dict]:
    p = cfg.param_set()
    lev = p.desk_level(0)
    frame = harness.jet_frame_suite(lev, cfg.checks.jet_frame_n)
    grid = Grid(lev.grid_n)
    prof = jets.ProfileSet(lev.ell_perp, lev.ell_par)
    choice = jets.choose_grid_shifts(jets.make_specs(lev), prof, grid, seed=cfg.shift_seed)
    specs = {(s.family, jets._index_in_family(s)): s for s in jets.make_specs(lev, choice.shifts)}
    disj = harness.disjointness_suite(specs, prof, grid)
    disj["measured"]["continuum_packing_limit"] = choice.ell_perp_max
    return frame["pass"] and disj["pass"], {"frame_identities": frame, "disjointness": disj}


def _glue(cfg: RunConfig, args) -> tuple[bool, dict]:
    st = harness.init_state(cfg)
    l0 = harness.level0_report(st, cfg)
    nxt = harness.iterate(st, cfg)
    g = nxt.glued
    rows = []
    for t in sum(nxt.records["times"].values(), []):
        f = g.at(t)
        rows.append({"t": t, "closure": residual_relaxed(*f.relaxed(), st.alpha).relative,
                     "stress_max": max(f.R_u.max_norm(), f.R_B.max_norm()),
                     "dist_over_tau": nxt.sets.dist_to_good(t) / nxt.sets.tau})
    pou = g.part.pou_residual([g.part.knot(i) + g.part.tau * x for i in (1, g.part.n // 2) for x in (0.1, 0.5, 0.9)])
    zero_ok = all(r["stress_max"] == 0.0 for r in rows if r["dist_over_tau"] <= 2.0)
    ok = l0["closure_max"] <= cfg.checks.closure_tol and all(r["closure"] <= cfg.checks.closure_tol for r in rows)
    ok &= zero_ok and pou <= cfg.checks.pou_tol and nxt.records["hard"]["bad_contained"]
    return ok, {"level0": l0, "glued": g.report(), "rows": rows, "pou_residual": pou, "uniqueness": g.uniqueness_gaps(2)}


def _perturb(cfg: RunConfig, args) -> tuple[bool, dict]:
    st = harness.init_state(cfg)
    nxt = harness.iterate(st, cfg)
    rows, ok = [], True
    lev = st.params.desk_level(0)
    for t in nxt.records["times"]["interior"]:
        parts = nxt.stage.parts(t)
        ids = parts.identity_residuals()
        prod = parts.disjointness_product()
        ok &= all(r["relative"] <= cfg.checks.identity_tol for r in ids) and prod == 0.0
        rows.append({"t": t, "identities": ids, "principal_product": prod, "corrector_gap": corrector_gap(parts, nxt.context),
                     "norms": perturbation_norm_report(parts, delta_next=lev.delta_next)})
    return ok, {"rows": rows, "shifts": {str(k): v for k, v in nxt.context.shifts.shifts.items()}}


def _stress(cfg: RunConfig, args) -> tuple[bool, dict]:
    st = harness.init_state(cfg)
    nxt = harness.iterate(st, cfg)
    rows, ok = [], nxt.records["hard"]["support_property"]
    lev = st.params.desk_level(0)
    for t in nxt.records["times"]["interior"]:
        nl = nxt.at(t)
        r = closure(nl, st.alpha).relative
        tr = max(symmetry_defects(nl).values())
        ok &= r <= cfg.checks.closure_tol and tr <= cfg.checks.trace_tol
        rows.append({"t": t, "closure": r, "trace": tr,
                     "norms": stress_norm_report(nl, lam=lev.lam, eps_R=float(st.params.eps_R), delta_next2=lev.delta_next)})
    return ok, {"rows": rows, "support_property": nxt.records["hard"]["support_property"]}


def _iterate(cfg: RunConfig, args) -> tuple[bool, dict]:
    states = harness.run(cfg)
    out = {"provenance": states[-1].provenance, "levels": []}
    for s in states[1:]:
        out["levels"].append({k: v for k, v in s.records.items() if k != "rows"} | {"rows": s.records["rows"]})
    if args.out:
        from . import plots

        out["plots"] = [str(p) for p in plots.emit(states, Path(args.out))]
    return all(s.records["ok"] for s in states[1:]), out


def _verify(cfg: RunConfig, args) -> tuple[bool, dict]:
    rep = harness.verify_all(cfg, negative=args.negative)
    return rep["pass"], rep


COMMANDS = {
    "params": _params,
    "jets": _jets,
    "geometry": _geometry,
    "glue": _glue,
    "perturb": _perturb,
    "stress": _stress,
    "iterate": _iterate,
    "verify": _verify,
}


def _summary(name: str, ok: bool, report: dict) -> str:
    lines = [f"{name}: {'PASS' if ok else 'FAIL'}"]
    suites = report.get("suites") if isinstance(report, dict) else None
    if suites:
        for k, v in suites.items():
            tag = "PASS" if v["pass"] else ("FAIL" if v.get("hard", True) else "FAIL (recorded)")
            lines.append(f"  {k:<20} {tag}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="convex-mhd", description="Desk-scale convex integration scheme for Hall-MHD.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("action", nargs="?", choices=("audit",), help="params only: print the level audit")
    ap.add_argument("--level", type=int, help="level q for `params audit`")
    ap.add_argument("--config", help="JSON config; defaults to the built-in desk configuration")
    ap.add_argument("--out", help="directory for the JSON report (and plots for iterate)")
    ap.add_argument("--negative", choices=("all", "sample", "none"), default="all", help="negative controls in verify")
    args = ap.parse_args(argv)
    if args.action and args.level is None:
        args.level = 0
    try:
        cfg = harness.load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        ok, report = COMMANDS[args.command](cfg, args)
    except (harness.StageError, harness.InputError, params_mod.ConstraintViolation, gluing.SetInvariantViolation) as exc:
        ok, report = False, {"error": f"{type(exc).__name__}: {exc}"}
    report = {"command": args.command, "pass": bool(ok), "config_hash": cfg.digest(), "config": cfg.to_dict(), **{k: v for k, v in report.items() if k not in ("pass", "config_hash")}}
    text = to_json(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.json").write_text(text)
    else:
        print(text if len(text) < 20000 else text[:2000] + "\n...")
    print(_summary(args.command, ok, report))
    print(f"elapsed {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    if "error" in report:
        print(report["error"], file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
