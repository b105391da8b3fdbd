"""Convergence order from manufactured solutions.

A trigonometric solution compatible with the walls is inserted into each
system; sympy derives the forcing that makes it exact.  Errors at t = 0.1
should fall by about four per grid doubling.
"""
from machlimit.mms import convergence_study

for kind in ("compressible", "incompressible"):
    r = convergence_study(kind, ns=(16, 32, 64), t_end=0.1)
    errs = ", ".join(f"{e:.2e}" for e in r["errors"])
    print(f"{kind:15s} errors [{errs}]  pairwise {[round(p, 2) for p in r['pairwise']]}"
          f"  fitted order {r['order']:.3f}")
