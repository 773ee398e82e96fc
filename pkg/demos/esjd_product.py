"""ESJD sweep on a standard-normal product: the optimum sits near acceptance 0.234.

Run: python3 demos/esjd_product.py [d]
"""
import sys

from rwmscale import build_iid_product, sweep_ell
from rwmscale.scaling import OPT_ACCEPT, OPT_ELL

d = int(sys.argv[1]) if len(sys.argv) > 1 else 200
curve = sweep_ell(build_iid_product("standard-normal", d), n_outer=2000, n_inner=50, seed=0)

print(f"{'ell':>7} {'esjd':>8} {'se':>7} {'accept':>7}")
for p in curve.points:
    print(f"{p.ell:7.3f} {p.esjd_mean:8.4f} {p.esjd_se:7.4f} {p.accept_mean:7.4f}")
print(f"\nell_hat = {curve.ell_hat:.3f}  (limit {OPT_ELL:.3f})")
print(f"acceptance at optimum = {curve.accept_at_opt:.4f}  (limit {OPT_ACCEPT:.4f})")
