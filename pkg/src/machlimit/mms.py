"""Manufactured solutions and symbolic forcing for both solvers.

The closed forms use cosines in ``x3`` for fields that are even across the
walls and sines for the wall-normal components, so they satisfy the slip and
degeneracy conditions and every compatibility condition.  Forcing terms are
derived with sympy and passed to the solvers through their ``source`` hook.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

from .compressible import CompressibleConfig, Tendency, integrate
from .fields import EquationOfState, Grid, State, as_background, l2_norm
from .incompressible import IncompressibleState, integrate_incompressible

x1, x3, t = sp.symbols("x1 x3 t", real=True)


def _profiles(L1, L3):
    kx = 2 * sp.pi / L1
    kz = sp.pi / L3
    c = lambda m: sp.cos(m * kz * x3)  # noqa: E731
    s = lambda m: sp.sin(m * kz * x3)  # noqa: E731
    return kx, c, s


def compressible_solution(L1=1.0, L3=1.0):
    """Symbolic ``(q, u, F, S)`` in 2D."""
    kx, c, s = _profiles(L1, L3)
    q = sp.Rational(3, 10) * sp.cos(kx * x1) * c(1) * sp.cos(t)
    u = [sp.Rational(1, 5) * sp.sin(kx * x1) * c(1) * (1 + sp.sin(t) / 2),
         sp.Rational(1, 5) * sp.cos(kx * x1) * s(1) * sp.cos(t)]
    F = [[sp.Rational(1, 10) * sp.cos(kx * x1) * c(1) * sp.sin(t),
          sp.Rational(1, 10) * sp.sin(kx * x1) * c(2) * sp.cos(t)],
         [sp.Rational(1, 10) * sp.sin(kx * x1) * s(1) * sp.cos(t),
          sp.Rational(1, 10) * sp.cos(kx * x1) * s(2) * sp.sin(t)]]
    S = sp.Rational(1, 5) * sp.cos(kx * x1) * c(1) * sp.cos(2 * t)
    return q, u, F, S


def _g(f, i):
    return sp.diff(f, (x1, x3)[i])


def compressible_forcing(eps, gamma, fbar, L1=1.0, L3=1.0):
    """Symbolic forcing ``f = d_t U - rhs(U)`` for the manufactured solution."""
    q, u, F, S = compressible_solution(L1, L3)
    fb = np.asarray(fbar, dtype=float)
    p = 1 + eps * q
    rho = p ** (1 / sp.S(gamma)) * sp.exp(-S / gamma)
    a = 1 / (gamma * p)
    Fc = [[F[i][j] + sp.nsimplify(fb[i, j]) for j in range(2)] for i in range(2)]

    def adv(v, f):
        return sum(v[k] * _g(f, k) for k in range(2))

    divu = _g(u[0], 0) + _g(u[1], 1)
    fq = sp.diff(q, t) + adv(u, q) + divu / (eps * a)
    fu = [sp.diff(u[i], t) + adv(u, u[i]) + _g(q, i) / (eps * rho)
          - sum(adv([Fc[0][j], Fc[1][j]], F[i][j]) for j in range(2)) for i in range(2)]
    fF = [[sp.diff(F[i][j], t) + adv(u, F[i][j]) - adv([Fc[0][j], Fc[1][j]], u[i])
           for j in range(2)] for i in range(2)]
    fS = sp.diff(S, t) + adv(u, S)
    return fq, fu, fF, fS


def _lam(expr):
    f = sp.lambdify((t, x1, x3), expr, "numpy")

    def g(tt, X1, X3):
        return np.broadcast_to(f(tt, X1, X3), X1.shape).astype(float)

    return g


@dataclass
class CompressibleMMS:
    eps: float = 1.0
    gamma: float = 1.4
    fbar: tuple = ((1.0, 0.5), (0.0, 0.0))

    def __post_init__(self):
        q, u, F, S = compressible_solution()
        self._exact = [_lam(q)] + [_lam(c) for c in u] + [_lam(F[i][j]) for i in range(2)
                                                         for j in range(2)] + [_lam(S)]
        fq, fu, fF, fS = compressible_forcing(self.eps, self.gamma, self.fbar)
        self._force = [_lam(fq)] + [_lam(c) for c in fu] + [_lam(fF[i][j]) for i in range(2)
                                                           for j in range(2)] + [_lam(fS)]

    def exact(self, grid, time):
        X1, X3 = grid.coords()
        arr = np.stack([f(time, X1, X3) for f in self._exact])
        return State.unpack(arr, self.eps, time)

    def source(self, grid):
        X1, X3 = grid.coords()

        def src(time, state):
            arr = np.stack([f(time, X1, X3) for f in self._force])
            return Tendency(arr[0], arr[1:3], arr[3:7].reshape((2, 2) + grid.shape), arr[7])

        return src

    def error(self, n, t_end=0.1, cfl=0.4):
        grid = Grid(n1=n, n3=n)
        eos = EquationOfState(self.gamma)
        cfg = CompressibleConfig(cfl=cfl, t_end=t_end, snapshot_stride=10 ** 9,
                                 compatibility_tolerance=None)
        traj = integrate(self.exact(grid, 0.0), cfg, eos, np.array(self.fbar), grid,
                         source=self.source(grid))
        num = traj.states[-1].pack()
        ref = self.exact(grid, traj.times[-1]).pack()
        return l2_norm(num - ref, grid)


def incompressible_solution(L1=1.0, L3=1.0):
    """Symbolic ``(u, F, S, varrho, pi)``; ``u`` derives from a stream function."""
    kx, c, s = _profiles(L1, L3)
    psi = sp.sin(kx * x1) * s(1) * (1 + sp.sin(t) / 2) / (5 * sp.pi)
    u = [sp.diff(psi, x3), -sp.diff(psi, x1)]
    F = [[sp.Rational(1, 10) * sp.cos(kx * x1) * c(1) * sp.sin(t),
          sp.Rational(1, 10) * sp.sin(kx * x1) * c(2) * sp.cos(t)],
         [sp.Rational(1, 10) * sp.sin(kx * x1) * s(1) * sp.cos(t),
          sp.Rational(1, 10) * sp.cos(kx * x1) * s(2) * sp.sin(t)]]
    S = sp.Rational(1, 5) * sp.cos(kx * x1) * c(1) * sp.cos(2 * t)
    varrho = 1 + sp.Rational(1, 5) * sp.sin(kx * x1) * c(1) * sp.cos(t)
    pi = sp.Rational(1, 10) * sp.cos(kx * x1) * c(1) * sp.cos(t)
    return u, F, S, varrho, pi


def incompressible_forcing(fbar, L1=1.0, L3=1.0):
    u, F, S, varrho, pi = incompressible_solution(L1, L3)
    fb = np.asarray(fbar, dtype=float)
    Fc = [[F[i][j] + sp.nsimplify(fb[i, j]) for j in range(2)] for i in range(2)]

    def adv(v, f):
        return sum(v[k] * _g(f, k) for k in range(2))

    fu = [sp.diff(u[i], t) + adv(u, u[i]) + _g(pi, i) / varrho
          - sum(adv([Fc[0][j], Fc[1][j]], F[i][j]) for j in range(2)) for i in range(2)]
    fF = [[sp.diff(F[i][j], t) + adv(u, F[i][j]) - adv([Fc[0][j], Fc[1][j]], u[i])
           for j in range(2)] for i in range(2)]
    fS = sp.diff(S, t) + adv(u, S)
    fr = sp.diff(varrho, t) + adv(u, varrho)
    return fu, fF, fS, fr


@dataclass
class IncompressibleMMS:
    fbar: tuple = ((1.0, 0.5), (0.0, 0.0))

    def __post_init__(self):
        u, F, S, varrho, pi = incompressible_solution()
        self._exact = ([_lam(c) for c in u] + [_lam(F[i][j]) for i in range(2) for j in range(2)]
                       + [_lam(S), _lam(varrho)])
        self._pi_grad = [_lam(_g(pi, i)) for i in range(2)]
        fu, fF, fS, fr = incompressible_forcing(self.fbar)
        self._force = ([_lam(c) for c in fu] + [_lam(fF[i][j]) for i in range(2)
                                                for j in range(2)] + [_lam(fS), _lam(fr)])

    def exact(self, grid, time):
        X1, X3 = grid.coords()
        arr = np.stack([f(time, X1, X3) for f in self._exact])
        pg = np.stack([f(time, X1, X3) for f in self._pi_grad])
        return IncompressibleState.unpack(arr, time, pg)

    def source(self, grid):
        X1, X3 = grid.coords()

        def src(time, state):
            arr = np.stack([f(time, X1, X3) for f in self._force])
            return arr[0:2], arr[2:6].reshape((2, 2) + grid.shape), arr[6], arr[7]

        return src

    def error(self, n, t_end=0.1, cfl=0.4):
        grid = Grid(n1=n, n3=n)
        cfg = CompressibleConfig(cfl=cfl, t_end=t_end, snapshot_stride=10 ** 9)
        traj = integrate_incompressible(self.exact(grid, 0.0), cfg, np.array(self.fbar), grid,
                                        source=self.source(grid))
        num = traj.states[-1].pack()
        ref = self.exact(grid, traj.times[-1]).pack()
        return l2_norm(num - ref, grid)


def observed_orders(errors, ns):
    """Pairwise orders ``log(e_k/e_{k+1}) / log(n_{k+1}/n_k)`` and the least-squares slope."""
    errors = np.asarray(errors, dtype=float)
    ns = np.asarray(ns, dtype=float)
    pair = np.log(errors[:-1] / errors[1:]) / np.log(ns[1:] / ns[:-1])
    slope = -np.polyfit(np.log(ns), np.log(errors), 1)[0]
    return pair.tolist(), float(slope)


def convergence_study(kind="compressible", ns=(32, 64, 128), t_end=0.1):
    """Errors and observed orders for one solver."""
    mms = CompressibleMMS() if kind == "compressible" else IncompressibleMMS()
    errors = [mms.error(n, t_end=t_end) for n in ns]
    pair, slope = observed_orders(errors, ns)
    return {"kind": kind, "n": list(ns), "errors": errors, "pairwise": pair, "order": slope}
