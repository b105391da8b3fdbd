"""Projection solver for the incompressible inhomogeneous limit system.

Both projectors act on collocated fields with the solver's reflected-ghost
operators ``D`` (divergence) and ``G`` (gradient).  With trapezoidal weights
these satisfy ``<D X, psi> = -<X, G psi>`` for fields with zero normal trace,
so the unweighted projector is exactly idempotent and orthogonal.

* :func:`leray_project` solves ``D G psi = D X`` by FFT in the periodic
  directions and a type-I cosine transform across the slab.
* :class:`WeightedProjector` solves ``D (w G psi) = D X`` with a sparse LU
  factorisation; it backs both the density-weighted pressure projection and
  the construction of the limit initial velocity.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .compressible import CompressibleConfig, IntegrationError, Trajectory, packed_gradient
from .fields import (
    HyperbolicityError,
    as_background,
    curl,
    div,
    grad,
    l2_norm,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def _null_mask(lam):
    return np.abs(lam) <= 1e-9 * np.max(np.abs(lam))


@lru_cache(maxsize=16)
def _symbol(grid):
    """Fourier/cosine symbol of the wide-stencil ``D G`` operator."""
    lam = np.zeros(grid.shape)
    for axis, (n, h) in enumerate(zip(grid.counts, grid.spacing)):
        if axis < grid.dim - 1:
            theta = 2.0 * np.pi * np.fft.fftfreq(n)
        else:
            theta = np.pi * np.arange(n + 1) / n
        shape = [1] * grid.dim
        shape[axis] = theta.size
        lam = lam - (np.sin(theta) / h).reshape(shape) ** 2
    return lam


def solve_neumann_poisson(b, grid):
    """Solve ``D G psi = b`` (pseudo-inverse; null modes of ``G`` set to zero)."""
    periodic = tuple(range(grid.dim - 1))
    bh = scipy.fft.dct(b, type=1, axis=-1)
    bh = scipy.fft.fftn(bh, axes=periodic)
    lam = _symbol(grid)
    null = _null_mask(lam)
    psi_h = np.where(null, 0.0, bh / np.where(null, 1.0, lam))
    psi = scipy.fft.ifftn(psi_h, axes=periodic).real
    return scipy.fft.idct(psi, type=1, axis=-1)


def _lift_normal_trace(bottom, top, grid):
    """Gradient of a potential whose normal derivative is ``bottom``/``top`` at the walls."""
    x3 = grid.coords()[-1]
    L3 = grid.L3
    chi = top[..., None] * (x3 + L3) ** 2 / (2 * L3) - bottom[..., None] * x3 ** 2 / (2 * L3)
    return grad(chi, grid)


def _zero_normal_trace(X):
    X[-1][..., 0] = 0.0
    X[-1][..., -1] = 0.0
    return X


def leray_project(X, grid):
    """Split ``X = PX + QX`` with ``PX`` discretely divergence free, zero normal trace.

    Nonzero normal traces are first removed by a smooth gradient lifting, so
    for such inputs orthogonality holds to truncation order only.
    """
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise SolverError("non-finite input to projection")
    Y = X.copy()
    bottom, top = X[-1][..., 0], X[-1][..., -1]
    if np.any(bottom != 0.0) or np.any(top != 0.0):
        Y -= _lift_normal_trace(bottom, top, grid)
    _zero_normal_trace(Y)
    b = div(Y, grid, parity=1)
    psi = solve_neumann_poisson(b, grid)
    PX = _zero_normal_trace(Y - grad(psi, grid, parity=1))
    resid = l2_norm(div(PX, grid, parity=1), grid)
    scale = max(l2_norm(b, grid), l2_norm(X, grid) / grid.hmin, 1e-300)
    if resid > 1e-10 * scale:
        raise SolverError(f"Poisson residual {resid:.3e} too large", resid)
    return PX, X - PX


# --- sparse weighted projector ---------------------------------------------

def _periodic_diff_1d(n, h):
    m = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n), format="lil")
    m[0, n - 1] = -1.0
    m[n - 1, 0] = 1.0
    return m.tocsr() / (2.0 * h)


def _wall_diff_1d(n_nodes, h, parity):
    m = sp.diags([np.ones(n_nodes - 1), -np.ones(n_nodes - 1)], [1, -1],
                 shape=(n_nodes, n_nodes), format="lil")
    m[0, :] = 0.0
    m[n_nodes - 1, :] = 0.0
    if parity < 0:
        m[0, 1] = 2.0
        m[n_nodes - 1, n_nodes - 2] = -2.0
    return m.tocsr() / (2.0 * h)


def _embed(m, axis, shape):
    out = sp.identity(1, format="csr")
    for d, n in enumerate(shape):
        out = sp.kron(out, m if d == axis else sp.identity(n, format="csr"), format="csr")
    return out


@lru_cache(maxsize=16)
def _difference_operators(grid):
    """``(G, D)``: per-axis gradient of an even scalar and divergence pieces."""
    G, D = [], []
    for axis, h in enumerate(grid.spacing):
        n = grid.shape[axis]
        if axis < grid.dim - 1:
            m = _periodic_diff_1d(n, h)
            G.append(_embed(m, axis, grid.shape))
            D.append(G[-1])
        else:
            G.append(_embed(_wall_diff_1d(n, h, 1), axis, grid.shape))
            D.append(_embed(_wall_diff_1d(n, h, -1), axis, grid.shape))
    return tuple(G), tuple(D)


class WeightedProjector:
    """Projection ``X -> X - w G psi`` with ``D(w G psi) = D X``.

    ``weight`` is the pointwise coefficient ``w > 0`` (``1/rho`` for the
    density-weighted projection).  The operator decouples into independent
    sub-lattices; one node per connected component is pinned.
    """

    def __init__(self, weight, grid):
        self.grid = grid
        w = np.asarray(weight, dtype=float)
        if np.any(~(w > 0.0)):
            raise ValueError("projection weight must be positive")
        self.weight = w
        G, D = _difference_operators(grid)
        W = sp.diags(w.ravel())
        A = sum(D[d] @ W @ G[d] for d in range(grid.dim)).tocsr()
        ncomp, labels = connected_components(abs(A) + abs(A.T), directed=False)
        _, first = np.unique(labels, return_index=True)
        mask = np.ones(A.shape[0])
        mask[first] = 0.0
        self.pins = first
        A = (sp.diags(mask) @ A + sp.diags(1.0 - mask)).tocsc()
        self._A = A
        self._lu = splu(A)
        self._G = G

    def solve(self, b):
        rhs = b.ravel().copy()
        rhs[self.pins] = 0.0
        psi = self._lu.solve(rhs)
        resid = np.linalg.norm(self._A @ psi - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(resid) or resid > 1e-8 * scale:
            raise SolverError(f"weighted Poisson residual {resid:.3e}", resid)
        return psi.reshape(self.grid.shape)

    def project(self, X):
        """Return ``(PX, G psi)`` where ``PX = X - w G psi``."""
        grid = self.grid
        Y = np.array(X, dtype=float)
        bottom, top = Y[-1][..., 0], Y[-1][..., -1]
        if np.any(bottom != 0.0) or np.any(top != 0.0):
            Y -= self.weight * _lift_normal_trace(bottom / self.weight[..., 0],
                                                  top / self.weight[..., -1], grid)
        _zero_normal_trace(Y)
        b = div(Y, grid, parity=1)
        psi = self.solve(b)
        gpsi = grad(psi, grid, parity=1)
        PX = _zero_normal_trace(Y - self.weight * gpsi)
        return PX, gpsi


def construct_w0(u0_comp, rho0, grid):
    """Limit initial velocity with zero normal trace, zero divergence and the
    same curl of ``rho0 * w0`` as of ``rho0 * u0_comp``.

    Returns ``(w0, residuals)``; the residuals are measured with the one-sided
    field operators.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(~(rho0 > 0.0)):
        raise ValueError("rho0 must be positive")
    w0, _ = WeightedProjector(1.0 / rho0, grid).project(u0_comp)
    residuals = {
        "divergence": l2_norm(div(w0, grid), grid),
        "curl_mismatch": l2_norm(curl(rho0 * w0, grid) - curl(rho0 * u0_comp, grid), grid),
    }
    return w0, residuals


# --- limit system ----------------------------------------------------------

@dataclass
class IncompressibleState:
    u: np.ndarray
    F: np.ndarray
    S: np.ndarray
    varrho: np.ndarray
    pi_grad: np.ndarray | None = None
    t: float = 0.0

    @property
    def dim(self):
        return self.u.shape[0]

    def copy(self):
        pg = None if self.pi_grad is None else self.pi_grad.copy()
        return IncompressibleState(self.u.copy(), self.F.copy(), self.S.copy(),
                                   self.varrho.copy(), pg, self.t)

    def pack(self):
        d = self.dim
        sh = self.S.shape
        return np.concatenate([self.u, self.F.reshape((d * d,) + sh),
                               self.S[None], self.varrho[None]])

    @classmethod
    def unpack(cls, arr, t, pi_grad=None):
        d = 2 if arr.shape[0] == 2 + 2 + 4 else 3
        sh = arr.shape[1:]
        return cls(arr[:d], arr[d:d + d * d].reshape((d, d) + sh), arr[-2], arr[-1],
                   pi_grad, t)


class IncTendency(NamedTuple):
    u: np.ndarray
    F: np.ndarray
    S: np.ndarray
    varrho: np.ndarray

    def pack(self):
        d = self.u.shape[0]
        sh = self.S.shape
        return np.concatenate([self.u, self.F.reshape((d * d,) + sh),
                               self.S[None], self.varrho[None]])


def incompressible_parities(dim):
    p = [1] * (dim - 1) + [-1]
    for i in range(dim):
        p += [1 if i < dim - 1 else -1] * dim
    return np.array(p + [1, 1])


def rhs_incompressible(istate, fbar, grid, source=None, rho_floor=0.0):
    """Tendencies of ``(u, F, S, varrho)`` and the recovered pressure gradient.

    ``d_t u = P_varrho[-u.grad u + sum_j (F_j+Fbar_j).grad F_j]``; the part
    removed by the weighted projection is ``grad(pi)/varrho``.
    Returns ``(IncTendency, pi_grad)``.
    """
    d = grid.dim
    fb = as_background(fbar, d)
    if np.any(~(istate.varrho > rho_floor)):
        raise HyperbolicityError("transported density left the admissible range")
    G = packed_gradient(istate.pack(), grid, incompressible_parities(d))
    J = G[:d]
    GF = G[d:d + d * d].reshape((d, d, d) + grid.shape)
    u = istate.u
    Fc = fb.columns(istate.F)
    N = -np.einsum("k...,ik...->i...", u, J) + np.einsum("kj...,ijk...->i...", Fc, GF)
    dF = (-np.einsum("k...,ijk...->ij...", u, GF)
          + np.einsum("kj...,ik...->ij...", Fc, J))
    dS = -np.einsum("k...,k...->...", u, G[-2])
    dr = -np.einsum("k...,k...->...", u, G[-1])
    if source is not None:
        fu, fF, fS, fr = source(istate.t, istate)
        N = N + fu
        dF, dS, dr = dF + fF, dS + fS, dr + fr
    proj = WeightedProjector(1.0 / istate.varrho, grid)
    du, pi_grad = proj.project(N)
    return IncTendency(du, dF, dS, dr), pi_grad


def _inc_wall_rows(dim):
    rows = [dim - 1]
    base = dim + (dim - 1) * dim
    return np.array(rows + list(range(base, base + dim)))


def incompressible_stable_dt(istate, fbar, grid, cfl):
    fb = as_background(fbar, grid.dim)
    speed = (np.sqrt(np.sum(istate.u ** 2, axis=0))
             + np.sqrt(np.sum(fb.columns(istate.F) ** 2, axis=(0, 1))))
    c = float(np.max(speed))
    if not math.isfinite(c):
        raise IntegrationError("non-finite transport speed", istate.t)
    return cfl * grid.hmin / max(c, 1e-12)


def integrate_incompressible(istate0, config, fbar, grid, probes=(), source=None):
    """RK4 for the limit system; every stage derivative is projected.

    Mirrors :func:`machlimit.compressible.integrate` (fixed step, history
    window, stride-based output).  Stored states carry the pressure gradient
    at their time.
    """
    fb = as_background(fbar, grid.dim)
    rows = _inc_wall_rows(grid.dim)
    dt = config.dt if config.dt is not None else incompressible_stable_dt(
        istate0, fb, grid, config.cfl)
    n_steps = max(1, math.ceil(config.t_end / dt - 1e-9)) if config.t_end > 0 else 0
    if n_steps:
        dt = config.t_end / n_steps
    t0 = istate0.t

    def f(t, y):
        s = IncompressibleState.unpack(y, t)
        tend, _ = rhs_incompressible(s, fb, grid, source)
        return tend.pack()

    def enforce(y):
        y[rows, ..., 0] = 0.0
        y[rows, ..., -1] = 0.0
        return y

    traj = Trajectory(grid=grid, eps=0.0, dt=dt, window=deque(maxlen=config.history_depth))
    u_ref = max(float(np.max(np.abs(istate0.u))), config.instability_floor)

    def record(step, y):
        s = IncompressibleState.unpack(y.copy(), t0 + step * dt)
        traj.window.append(s)
        if step % config.snapshot_stride == 0 or step == n_steps:
            _, s.pi_grad = rhs_incompressible(s, fb, grid, source)
            traj.times.append(s.t)
            traj.states.append(s)
            if probes and len(traj.window) == config.history_depth:
                traj.report_times.append(s.t)
                traj.reports.append([p(list(traj.window)) for p in probes])

    y = enforce(istate0.pack().copy())
    record(0, y)
    for n in range(n_steps):
        t = t0 + n * dt
        k1 = f(t, y)
        k2 = f(t + 0.5 * dt, enforce(y + 0.5 * dt * k1))
        k3 = f(t + 0.5 * dt, enforce(y + 0.5 * dt * k2))
        k4 = f(t + dt, enforce(y + dt * k3))
        y_new = enforce(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.all(np.isfinite(y_new)):
            traj.status = "nan"
            traj.message = f"non-finite values after step {n + 1}"
            raise IntegrationError(traj.message, t, traj)
        umax = float(np.max(np.abs(y_new[:grid.dim])))
        if umax > config.instability_factor * u_ref:
            traj.status = "unstable"
            traj.message = f"|u|_inf = {umax:.3e} exceeds threshold"
            raise IntegrationError(traj.message, t, traj)
        y = y_new
        traj.steps = n + 1
        record(n + 1, y)
    log.debug("incompressible: %d steps, dt=%.3e", n_steps, dt)
    return traj


def initial_limit_state(w0, F0, S0, eos):
    """Limit-system state with ``varrho = rho(0, S0)``."""
    return IncompressibleState(np.array(w0, dtype=float), np.array(F0, dtype=float),
                               np.array(S0, dtype=float), eos.rho0(np.asarray(S0)), None, 0.0)
