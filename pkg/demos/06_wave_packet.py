"""Gaussian wave-packet transform of an acoustic signal.

The transform maps a time series to the (t, tau) plane; a signal
oscillating like cos(w t / eps) concentrates near tau = +-w.  Here the input
is the mean of q over a ball from an ill-prepared run, so the peak
frequency reveals the dominant sound mode.
"""
import numpy as np

from machlimit.compressible import CompressibleConfig, integrate
from machlimit.diagnostics import isometry_ratio, wave_packet_transform
from machlimit.fields import BackgroundDeformation, EquationOfState, Grid
from machlimit.harness import ball_mask, make_initial_data

grid = Grid(n1=16, n3=16)
eos = EquationOfState(1.4)
fbar = BackgroundDeformation.default(2)
eps = 0.05

s0 = make_initial_data("ill", grid, eos, fbar, eps, seed=2)
traj = integrate(s0, CompressibleConfig(t_end=1.0, snapshot_stride=1,
                                        compatibility_tolerance=None), eos, fbar, grid)
mask = ball_mask(grid, 0.25) * grid.weights
times = np.array(traj.times)
signal = np.array([np.sum(s.q * mask) for s in traj.states]) / np.sum(mask)
signal -= signal.mean()

tau = np.linspace(-12, 12, 241)
W = wave_packet_transform(signal, eps, tau, times)
print(f"isometry ratio {isometry_ratio(W, times, tau, signal, times):.4f} "
      "(below 1 because the window truncates the Gaussian tails)")
power = np.sum(np.abs(W) ** 2, axis=0)
peak = tau[tau > 0][np.argmax(power[tau > 0])]
print(f"dominant |tau| = {peak:.2f}, i.e. angular frequency {peak / eps:.1f} in t")
