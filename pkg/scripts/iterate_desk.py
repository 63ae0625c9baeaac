"""One or more desk-scale iterations with the audit table and plots.

    python3 scripts/iterate_desk.py --levels 1 --out results/desk
"""

import argparse
import json
import time
from pathlib import Path

from convex_mhd import harness, plots


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--levels", type=int, default=1)
    ap.add_argument("--out", default="results/desk")
    args = ap.parse_args()

    cfg = harness.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    states = harness.run(cfg, args.levels)
    print(f"built {len(states) - 1} level(s) in {time.perf_counter() - t0:.1f} s")

    lv0 = harness.level0_report(states[0], cfg)
    print(f"level 0: closure {lv0['closure_max']:.2e}, stress outside support {lv0['stress_outside_support']:.1e}")
    for st in states[1:]:
        rec = st.records
        r = rec["recorded"]
        print(f"level {st.q}: bad intervals {rec['sets']['count']}, measure {rec['sets']['measure']:.3e}, "
              f"closure {r['closure_max']:.2e}, glued closure {r['glued_closure_max']:.2e}, trace {r['trace_max']:.1e}")
        failed = [k for k, v in rec["hard"].items() if not v]
        print(f"  increment {r['increment_L2_max']:.3e} vs target {r['increment_target']:.3e}; "
              + (f"failed: {', '.join(failed)}" if failed else "all hard checks hold"))
        (out / f"level{st.q}.json").write_text(harness.to_json(rec))
    for p in plots.emit(states, out):
        print("wrote", p)
    (out / "provenance.json").write_text(json.dumps(states[-1].provenance, indent=2))


if __name__ == "__main__":
    main()
