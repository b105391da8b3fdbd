"""Leray projection and the limit initial velocity.

P keeps the divergence-free part of a field with zero normal wall trace; Q
is the gradient remainder.  The limit velocity w0 instead removes a
density-weighted gradient, so that curl(rho0 w0) matches curl(rho0 u0).
"""
import numpy as np

from machlimit.fields import Grid, curl, div, l2_norm
from machlimit.incompressible import construct_w0, leray_project

grid = Grid(n1=64, n3=64)
x1, x3 = grid.coords()
rng = np.random.default_rng(1)
X = np.stack([np.cos(2 * np.pi * x1 + rng.uniform()) * np.cos(np.pi * x3),
              np.sin(4 * np.pi * x1) * np.sin(np.pi * x3)])

PX, QX = leray_project(X, grid)
PPX, _ = leray_project(PX, grid)
w = grid.weights
print("||P P X - P X||_inf =", np.max(np.abs(PPX - PX)))
print("<PX, QX> / ||X||^2   =", np.sum(PX * QX * w) / l2_norm(X, grid) ** 2)
print("||div PX||           =", l2_norm(div(PX, grid, parity=1), grid))

# %% weighted version with a non-uniform density
rho0 = np.exp(-0.3 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x3))
w0, residuals = construct_w0(X, rho0, grid)
print("w0 residuals:", {k: f"{v:.2e}" for k, v in residuals.items()})
print("curl(rho0 w0) vs curl(rho0 X):",
      l2_norm(curl(rho0 * w0, grid) - curl(rho0 * X, grid), grid))
