"""Fitted exponents against log lambda for jets, perturbation blocks and stress blocks.

Each row compares a least-squares slope over lambda in {16, 32, 64} with the
predicted power law.  Norms come from one-dimensional quadratures in the jet
frame, so nothing here needs a 3D grid.
"""

import argparse

from convex_mhd import jets
from convex_mhd.perturbation import building_block_slopes
from convex_mhd.stress import term_block_slopes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=1.2)
    ap.add_argument("--nq", type=int, default=800)
    ap.add_argument("--lambdas", type=int, nargs="+", default=[16, 32, 64])
    args = ap.parse_args()
    lams = tuple(args.lambdas)

    print(f"{'quantity':<28}{'slope':>10}{'predicted':>11}{'error':>9}")
    for N, M in ((0, 0), (1, 0), (0, 1)):
        for f in jets.measure_scaling(0, (1.0, 1.5, 2.0), N, M, lams, args.alpha, args.nq):
            name = f"W  p={f.p:g} N={N} M={M}"
            print(f"{name:<28}{f.slope:>10.4f}{f.predicted:>11.4f}{f.error:>9.4f}")
    slope, ref = jets.corrector_ratio_slope(lams, args.alpha, nq=args.nq)
    print(f"{'W^c / W':<28}{slope:>10.4f}{ref:>11.4f}{abs(slope - ref):>9.4f}")
    tables = {"perturbation": building_block_slopes(lams, args.alpha, nq=args.nq),
              "stress": term_block_slopes(lams, args.alpha, nq=args.nq)}
    for prefix, table in tables.items():
        for k, r in table.items():
            print(f"{prefix + ' ' + k:<28}{r['slope']:>10.4f}{r['predicted']:>11.4f}{r['error']:>9.4f}")


if __name__ == "__main__":
    main()
