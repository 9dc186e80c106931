"""Optimizer sanity on OneMax: how often GA and binary PSO hit 15/15 within 20 steps.

    python scripts/onemax_convergence.py --seeds 100
    python scripts/onemax_convergence.py --pso c1=2 c2=2

Overrides after --ga/--pso are key=value pairs for GaConfig/PsoConfig.
"""
import argparse
from dataclasses import fields

import numpy as np

from fusionsearch.optimizers import GaConfig, PsoConfig, run_ga, run_pso


def onemax(g):
    return float(sum(g.bits))


def parse(pairs, cls):
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for p in pairs:
        k, v = p.split("=", 1)
        if k not in types:
            raise SystemExit(f"unknown {cls.__name__} field {k}")
        out[k] = float(v) if "." in v or k.startswith("c") or "inertia" in k else int(v)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--ga", nargs="*", default=[])
    ap.add_argument("--pso", nargs="*", default=[])
    args = ap.parse_args()
    ga_kw, pso_kw = parse(args.ga, GaConfig), parse(args.pso, PsoConfig)
    for name, runner, cls, kw in (("GA", run_ga, GaConfig, ga_kw), ("PSO", run_pso, PsoConfig, pso_kw)):
        best, hits, evals = [], 0, []
        for seed in range(args.seeds):
            r = runner(onemax, cls(seed=seed, **kw))
            best.append(r.best_fitness)
            hits += r.best_fitness == 15
            evals.append(r.distinct_evaluations)
        print(f"{name:3s} optimum {hits}/{args.seeds}  mean best {np.mean(best):.2f}  "
              f"mean distinct evaluations {np.mean(evals):.0f}  {kw or ''}")


if __name__ == "__main__":
    main()
