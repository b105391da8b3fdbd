"""One compressible run with ill-prepared data.

The pressure perturbation q and the gradient part of u are O(1), so sound
waves with period ~ eps bounce between the walls.  The L2 energy E0 stays
nearly constant while ||q|| oscillates.
"""
import numpy as np

from machlimit.compressible import CompressibleConfig, integrate
from machlimit.diagnostics import constraint_residuals, energy_probe
from machlimit.fields import BackgroundDeformation, EquationOfState, Grid, l2_norm
from machlimit.harness import make_initial_data

grid = Grid(n1=32, n3=32)
eos = EquationOfState(1.4)
fbar = BackgroundDeformation.default(2)
eps = 0.1

state0 = make_initial_data("ill", grid, eos, fbar, eps, seed=0)
cfg = CompressibleConfig(cfl=0.4, t_end=0.3, snapshot_stride=20, compatibility_tolerance=None)
traj = integrate(state0, cfg, eos, fbar, grid, probes=[energy_probe(eos, fbar, grid)])
print(f"{traj.steps} steps of dt = {traj.dt:.2e}, final CFL {traj.max_cfl:.2f}")

# %% energies and pressure norm at the recorded times
for t, (E0, W0) in zip(traj.report_times, traj.series(0)):
    s = traj.states[traj.times.index(t)]
    print(f"t={t:.3f}  E0={E0:.5f}  W0={W0:.4f}  ||q||={l2_norm(s.q, grid):.4f}")

# %% the divergence constraint on rho (F_j + Fbar_j) is carried, not imposed
for s in (traj.states[0], traj.states[-1]):
    r = constraint_residuals(s, eos, fbar, grid)
    print(f"t={s.t:.3f}  divF residuals {np.round(r['divF_constraint'], 6)}  "
          f"wall traces {r['wall_traces']:.1e}")
