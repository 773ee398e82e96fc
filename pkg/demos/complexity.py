"""Integrated autocorrelation time of one coordinate grows linearly in d.

Run: python3 demos/complexity.py
"""
import math

from rwmscale import build_hier_gauss, build_iid_product, synth_data
from rwmscale.diffusion import complexity_scan

rep = complexity_scan(lambda d: build_iid_product("standard-normal", d), [25, 50, 100, 200], seed=0)
for d, tau in zip(rep.d, rep.values):
    print(f"d={d:4d} tau={tau:7.1f} tau/d={tau / d:.2f}")
print(f"log-log slope {rep.slope:.3f}, 95% interval {rep.slope_ci[0]:.2f}..{rep.slope_ci[1]:.2f}")

# the hierarchy, tracking the last theta coordinate
rep = complexity_scan(lambda n: build_hier_gauss(synth_data(n, seed=n)), [6, 10, 14, 20],
                      ell_rule=lambda d: 2.38 / math.sqrt(3), seed=1, n_chains=32, iter_factor=100,
                      coord=-1)
print(f"hierarchy d={rep.d}: slope {rep.slope:.3f}")
