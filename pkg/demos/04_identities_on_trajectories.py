"""Structural identities measured on solver output.

Three quantities vanish for the continuum system: the transport of
(F_j + Fbar_j).grad S, the pressure wave equation, and the divergence
constraint.  On the discrete trajectory they shrink like h^2 when the grid
and time step are refined together.
"""
from machlimit.compressible import CompressibleConfig, integrate, stable_dt
from machlimit.diagnostics import commutator_residual, constraint_residuals, wave_residual
from machlimit.fields import BackgroundDeformation, EquationOfState, Grid
from machlimit.harness import DataParams, make_initial_data

eos = EquationOfState(1.4)
fbar = BackgroundDeformation.default(2)
smooth = DataParams(u_amplitude=0.05, gradient_amplitude=0.05, q_amplitude=0.05,
                    F_amplitude=0.02, N0=0.2, modes=1, entropy="smooth")
dt16 = stable_dt(make_initial_data("ill", Grid(n1=16, n3=16), eos, fbar, 0.5, 0, smooth),
                 eos, Grid(n1=16, n3=16), 0.4, fbar)

for n in (16, 32, 64):
    grid = Grid(n1=n, n3=n)
    s0 = make_initial_data("ill", grid, eos, fbar, 0.5, seed=0, params=smooth)
    cfg = CompressibleConfig(t_end=0.25, dt=dt16 * 16 / n, snapshot_stride=10 ** 6,
                             compatibility_tolerance=None)
    traj = integrate(s0, cfg, eos, fbar, grid)
    window = list(traj.window)
    print(f"n={n:3d}  commutator {max(commutator_residual(window, fbar, grid)):.2e}  "
          f"wave eq {wave_residual(window, eos, fbar, grid):.2e}  "
          f"divF {max(constraint_residuals(window[-1], eos, fbar, grid)['divF_constraint']):.2e}")
