"""A small Mach-number sweep against the incompressible limit.

Well-prepared data converge to the limit at rate eps.  For ill-prepared
data the pressure keeps oscillating with O(1) amplitude, yet its local time
average still decays as eps shrinks.
"""
import tempfile
from pathlib import Path

from machlimit.harness import SweepConfig, emit_reports, mach_sweep

grid = {"dim": 2, "n1": 32, "n3": 32}
for prepared in ("well", "ill"):
    cfg = SweepConfig(eps_list=[0.2, 0.1, 0.05], prepared=prepared, grid=grid, t_end=0.5)
    result = mach_sweep(cfg)
    print(f"\n{prepared}-prepared data")
    for name in ("linf_du", "avg_q_loc", "linf_q", "sup_E0_W0"):
        vals = ", ".join(f"{v:.4f}" for v in result.metric(name))
        print(f"  {name:10s} [{vals}]  slope {result.slopes[name]['slope']:+.2f}")

out = Path(tempfile.mkdtemp(prefix="machlimit_sweep_"))
for p in emit_reports(result, out):
    print("wrote", p)
