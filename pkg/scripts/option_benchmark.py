"""Compare criterion settings on the first two simulation designs.

Options are passed as JSON overrides of PursuitConfig, for example

    python scripts/option_benchmark.py --sim 1 '{"smooth_g": false}' '{"tail": 1e-4}'
"""

import argparse
import json
import time

import numpy as np

from ppfactor import AnnealConfig, PursuitAborted, PursuitConfig, run_pursuit
from ppfactor.distributions import angle_between, principal_angle, sample, simulation1_density, simulation2_density

SPAN = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]) / np.sqrt(2)


def bench(sim, opts, seeds, anneal):
    f = simulation1_density() if sim == 1 else simulation2_density()
    e1 = np.eye(f.dim)[0]
    first, spans, accept, aborted = [], [], 0, 0
    for seed in range(seeds):
        x = sample(f, 50, seed)
        cfg = PursuitConfig(initial_test=False, k_max=2 if sim == 1 else 1, anneal=anneal, **opts)
        try:
            rep = run_pursuit(x, cfg=cfg, seed=seed)
        except PursuitAborted as exc:
            rep, aborted = exc.report, aborted + 1
        if not rep.iterations:
            continue
        a1 = rep.iterations[0].direction
        if sim == 1:
            first.append(min(angle_between(a1, s) for s in SPAN))
            if rep.k >= 2:
                spans.append(principal_angle(rep.directions[:2], SPAN))
        else:
            first.append(angle_between(a1, e1))
        accept += rep.iterations[0].test.in_ellipsoid
    first = np.array(first)
    line = f"a1 median {np.median(first):.0f} deg, <=15 deg {np.sum(first <= 15)}/{seeds}, accept@1 {accept}"
    if spans:
        line += f", span median {np.median(spans):.0f} deg, <=20 deg {np.sum(np.array(spans) <= 20)}"
    return line + f", aborted {aborted}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("options", nargs="*", default=["{}"])
    ap.add_argument("--sim", type=int, choices=(1, 2), default=1)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--steps", type=int, default=1500)
    args = ap.parse_args()
    anneal = AnnealConfig(n_steps=args.steps, n_restarts=2)
    for raw in args.options:
        t0 = time.perf_counter()
        print(raw, bench(args.sim, json.loads(raw), args.seeds, anneal), f"({time.perf_counter() - t0:.0f}s)",
              flush=True)


if __name__ == "__main__":
    main()
