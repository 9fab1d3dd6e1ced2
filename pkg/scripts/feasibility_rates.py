"""Feasibility rate of the learning LMI versus hidden width over random planar geometries.

    python scripts/feasibility_rates.py --trials 20 --widths 2 5 10 20
"""

import argparse

import numpy as np

from certnn.loop_transform import RecoveryMode
from certnn.pipeline import ProblemSpec, learn
from certnn.sets import Ellipsoid, Role
from certnn.solver import SolveOptions


def draw_pairs(rng, n_pairs):
    pairs = []
    for _ in range(n_pairs):
        inE = Ellipsoid.from_center(rng.uniform(-2, 2, 2), rng.uniform(0.2, 0.8, 2),
                                    rng.uniform(0, np.pi))
        outE = Ellipsoid.from_center(rng.uniform(-1, 1, 2), rng.uniform(0.3, 1.0, 2),
                                     rng.uniform(0, np.pi), Role.OUTPUT)
        pairs.append((inE, outE))
    return tuple(pairs)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--pairs", type=int, default=2)
    parser.add_argument("--widths", type=int, nargs="+", default=[2, 5, 10, 20])
    parser.add_argument("--max-iters", type=int, default=3000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    geometries = [draw_pairs(rng, args.pairs) for _ in range(args.trials)]
    opts = SolveOptions(max_iters=args.max_iters)
    print(f"{'n1':>4} {'strict':>8} {'residual':>9}")
    for n1 in args.widths:
        rates = []
        for mode in RecoveryMode:
            hits = 0
            for pairs in geometries:
                spec = ProblemSpec(pairs, (2, n1, 2), mode=mode, solver=opts, mc_samples=200)
                hits += learn(spec, cross_check=False).ok
            rates.append(hits / len(geometries))
        print(f"{n1:>4} {rates[0]:>8.2f} {rates[1]:>9.2f}")


if __name__ == "__main__":
    main()
