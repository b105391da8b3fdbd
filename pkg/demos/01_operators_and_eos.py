"""Grids, difference operators and the gas law.

The slab is periodic in x1 and has walls at x3 = -1 and x3 = 0.  Nodes sit
on both walls, so arrays have n3 + 1 entries along the last axis.
"""
import numpy as np

from machlimit.fields import EquationOfState, Grid, curl, eos_eval, grad, laplacian

# %% truncation error of the centred gradient
for n in (16, 32, 64, 128):
    g = Grid(n1=n, n3=n)
    x1, x3 = g.coords()
    f = np.sin(2 * np.pi * x1) * np.exp(x3)
    err = np.max(np.abs(grad(f, g)[1] - f))  # one-sided at the walls
    print(f"n={n:4d}  max error of d3 f: {err:.3e}")

# %% curl of a gradient is zero to rounding
g = Grid(n1=32, n3=32)
x1, x3 = g.coords()
f = np.cos(2 * np.pi * x1) * np.cos(np.pi * x3)
print("max |curl grad f| =", np.max(np.abs(curl(grad(f, g), g))))
print("laplacian of a constant:", np.max(np.abs(laplacian(np.ones(g.shape), g))))

# %% gas law: rho = p^(1/gamma) exp(-S/gamma) at p = 1 + eps q
eos = EquationOfState(gamma=1.4)
q = np.array([[0.0, (2 ** 1.4 - 1) / 0.5]])
rho, a, b = eos_eval(eos, q, np.zeros_like(q), eps=0.5)
print("rho:", rho.ravel(), " a:", a.ravel(), " b:", b.ravel())
