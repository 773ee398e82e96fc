"""Sped-up first coordinate of RWM against its Langevin (OU) limit.

Chains start at x1 = 2 with the other coordinates stationary; the SDE starts
at the same values.  W1 between the two ensembles shrinks as d grows.

Run: python3 demos/diffusion.py
"""
from rwmscale import build_iid_product
from rwmscale.diffusion import diffusion_compare, w1_trend

reports = diffusion_compare(lambda d: build_iid_product("standard-normal", d), ell=2.38,
                            d_list=[50, 100, 200], T=1.0, start=2.0, n_paths=5000,
                            times=[0.25, 0.5, 1.0], seed=0, n_boot=50)
for r in reports:
    cells = "  ".join(f"t={t:.2f}: {w:.4f}+-{s:.4f}" for t, w, s in zip(r.times, r.plain, r.se))
    print(f"d={r.d:4d} h={r.h:.3f} accept={r.accept_rate:.3f}  {cells}")
print(w1_trend(reports))
