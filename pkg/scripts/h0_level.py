"""Size of the stop test when f and g coincide.

Draws Gaussian samples, builds the first-iteration context and evaluates
the standardised statistic at a random direction and for K(g, f) itself.
Prints the mean and spread of z = sqrt(n) * mean / sd next to the
acceptance rate under both threshold conventions.
"""

import argparse
import json

import numpy as np
from scipy import stats

from ppfactor import PursuitConfig, prepare_context, stop_test
from ppfactor.distributions import gaussian, sample
from ppfactor.divergence import K0_values
from ppfactor.optimizer import random_direction
from ppfactor.pursuit import stop_test_values, threshold_quantile


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("options", nargs="*", default=["{}"], help="JSON overrides of PursuitConfig")
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--alpha", type=float, default=0.9)
    args = ap.parse_args()

    g = gaussian(np.zeros(args.d), np.eye(args.d))
    cut = {m: threshold_quantile(args.alpha, m) for m in ("paper", "corrected")}
    for raw in args.options:
        cfg = PursuitConfig(**json.loads(raw))
        z = {"K0": [], "ours": [], "huber": []}
        for r in range(args.reps):
            ctx = prepare_context(sample(g, args.n, r), cfg=cfg, seed=r).context
            b = random_direction(args.d, np.random.default_rng(10_000 + r))
            z["K0"].append(stop_test_values(K0_values(ctx)).z)
            z["ours"].append(stop_test(ctx, b, method="ours").z)
            z["huber"].append(stop_test(ctx, b, method="huber").z)
        for name, vals in z.items():
            v = np.asarray(vals)
            print(f"{raw} {name:5s} z mean {v.mean():6.2f} sd {v.std(ddof=1):5.2f} "
                  f"accept paper {np.mean(v <= cut['paper']):.2f} corrected {np.mean(v <= cut['corrected']):.2f} "
                  f"KS p {stats.kstest(v, 'norm').pvalue:.3g}", flush=True)


if __name__ == "__main__":
    main()
