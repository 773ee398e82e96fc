"""Assumption audits on a certified target and on two adversarial ones.

Run: python3 demos/audit.py
"""
from rwmscale import build_dense_coupling, build_hier_gauss, build_scale_mixture, synth_data
from rwmscale.audit import run_audit_suite

for target, kw in [
    (build_hier_gauss(synth_data(20, seed=1)), {}),
    (build_dense_coupling(200), {"n_samples": 500, "n_pair_points": 20}),
    (build_scale_mixture(200), {"n_pair_points": 20}),
]:
    print(f"== {target.name} (d={target.dim})")
    print(run_audit_suite(target, seed=0, **kw).table())
    print()
