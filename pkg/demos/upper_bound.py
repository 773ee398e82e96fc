"""When roughness does not concentrate, 0.234 becomes an upper bound.

Under the joint scale mixture the whole state is scaled by 1 or 5, so the
roughness is bimodal in every dimension.  The ESJD optimum then accepts far
less often than 0.234.

Run: python3 demos/upper_bound.py
"""
from rwmscale import build_scale_mixture, check_upper_bound, sweep_ell
from rwmscale.audit import audit_A4_A5

target = build_scale_mixture(200, s1=1.0, s2=5.0, w=0.5)
for seed in range(3):
    curve = sweep_ell(target, n_outer=1000, n_inner=30, seed=seed)
    rep = check_upper_bound(curve)
    print(f"seed {seed}: ell_hat={curve.ell_hat:.3f} accept={curve.accept_at_opt:.4f} "
          f"bound holds={rep.holds}")

_, a5 = audit_A4_A5(curve.roughness, grad_sup=1.0, d=target.dim)
print(f"roughness cv = {a5.statistics['cv']:.3f} -> concentration check {a5.status}")
