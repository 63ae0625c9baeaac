import json

import numpy as np
import pytest

from convex_mhd import cli, harness
from convex_mhd.harness import InputError, RunConfig, StageError, init_state, iterate, to_json
from convex_mhd.solver import FlowState, solve_exact
from convex_mhd.spectral import Grid

PAPER_CFG = {"params": dict(harness.PAPER_AUDIT)}


def test_config_round_trip():
    cfg = RunConfig.from_dict({"levels": 2, "seeds": {"seed": 4}, "checks": {"closure_tol": 1e-7}})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.digest() != RunConfig().digest()


def test_unknown_config_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict({"levle": 2})


def test_paper_mode_drops_desk_overrides():
    cfg = RunConfig.from_dict(PAPER_CFG)
    assert cfg.is_paper and "desk_overrides" not in cfg.params


def test_paper_verify_allocates_no_fields():
    rep = harness.verify_all(PAPER_CFG)
    assert rep["fields_allocated"] is False
    assert rep["pass"]
    assert rep["suites"]["constraint_triple"]["hard"] is False
    assert to_json(rep) == to_json(harness.verify_all(PAPER_CFG))


def test_to_json_handles_numpy_and_fractions():
    from fractions import Fraction

    text = to_json({"a": np.float64(1.5), "b": np.int64(2), "c": np.bool_(True), "d": np.arange(2), "e": Fraction(1, 3), "f": (1, 2)})
    assert json.loads(text) == {"a": 1.5, "b": 2, "c": True, "d": [0, 1], "e": "1/3", "f": [1, 2]}


def _short_traj(alpha, T):
    g = Grid(16)
    rng = np.random.default_rng(0)
    u, B = harness.random_solenoidal(g, 0.05, 1, rng), harness.random_solenoidal(g, 0.05, 1, rng)
    return solve_exact(FlowState(u, B, 0.0), T, alpha, dt_max=0.01)


def test_input_must_cover_the_interval():
    cfg = RunConfig.from_dict({"params": {"desk_overrides": {**harness.DESK_OVERRIDES, "grid_n": 16}}})
    tr = _short_traj(1.2, 0.5)
    with pytest.raises(InputError, match="covers"):
        init_state(cfg, tr, tr)


def test_input_must_solve_the_system():
    cfg = RunConfig.from_dict({"params": {"desk_overrides": {**harness.DESK_OVERRIDES, "grid_n": 16}}})
    # evolved with the wrong dissipation exponent
    tr = _short_traj(1.0, 1.0)
    with pytest.raises(InputError, match="does not solve"):
        init_state(cfg, tr, tr)


def test_identical_seeds_give_no_stress_and_a_fixed_point():
    cfg = RunConfig.from_dict({"seeds": {"kind": "identical"}})
    st0 = init_state(cfg)
    for t in (0.2, 0.5, 0.8):
        f = st0.at(t)
        assert not np.any(f.R_u.values) and not np.any(f.R_B.values)
    st1 = iterate(st0, cfg)
    assert st1.sets.bad == [] and st1.context is None
    for t in (0.1, 0.5, 0.9):
        a, b = st0.at(t), st1.at(t)
        assert max((a.u - b.u).max_norm(), (a.B - b.B).max_norm()) <= 1e-10
    assert [p["stage"] for p in st1.provenance] == ["init", "glue", "audit"]


def test_level0_blend(desk_run):
    st0, _ = desk_run
    rep = harness.level0_report(st0, RunConfig())
    assert rep["closure_max"] <= 1e-6
    assert rep["endpoint_gap_max"] <= 1e-12
    assert rep["stress_outside_support"] == 0.0


def test_iterate_records(desk_run):
    st0, st1 = desk_run
    rec = st1.records
    assert rec["ok"] and all(rec["hard"].values())
    r = rec["recorded"]
    for key in ("R_L1", "R_H4", "uB_L2", "uB_H4", "increment_L2_max", "increment_target"):
        assert np.isfinite(r[key])
    assert all(p["config"] == RunConfig().digest() for p in st1.provenance)
    assert {(p["stage"], p["level"]) for p in st1.provenance} >= {("init", 0), ("glue", 1), ("audit", 1)}


def test_iterate_deterministic(desk_run):
    _, st1 = desk_run
    cfg = RunConfig()
    again = iterate(init_state(cfg), cfg)
    assert to_json(again.records) == to_json(st1.records)


def test_stage_errors_carry_tag(monkeypatch):
    cfg = RunConfig.from_dict({"seeds": {"kind": "identical"}})
    st0 = init_state(cfg)

    def boom(*a, **k):
        raise RuntimeError("injected")

    monkeypatch.setattr(harness.gluing, "glue", boom)
    with pytest.raises(StageError) as e:
        iterate(st0, cfg)
    assert e.value.stage == "glue" and e.value.level == 0 and "injected" in str(e.value)


def test_cli_exit_codes(tmp_path, capsys):
    paper = tmp_path / "paper.json"
    paper.write_text(json.dumps(PAPER_CFG))
    assert cli.main(["params", "--config", str(paper)]) == 0
    assert cli.main(["verify", "--config", str(paper), "--out", str(tmp_path / "out")]) == 0
    rep = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert rep["pass"] and rep["fields_allocated"] is False
    bad = tmp_path / "b1.json"
    bad.write_text(json.dumps({"params": {**PAPER_CFG["params"], "b": 1}}))
    assert cli.main(["params", "--config", str(bad)]) == 1
    junk = tmp_path / "junk.json"
    junk.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["params", "--config", str(junk)]) == 2
    assert cli.main(["params", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["params", "audit", "--level", "3", "--config", str(paper)]) == 0
    capsys.readouterr()


def test_cli_desk_params_and_geometry():
    assert cli.main(["params"]) == 0
    assert cli.main(["geometry"]) == 0
