"""Explicit time integration of the Mach-scaled compressible elastodynamic system.

Unknowns are the rescaled pressure ``q`` (``p = 1 + eps q``), velocity ``u``,
deformation perturbation columns ``F_j`` and entropy ``S``.  Spatial
derivatives are centred with reflected ghost layers at the walls (even for
``q``, ``S`` and tangential components, odd for wall-normal ones), so the
semi-discrete operator is the restriction of a doubled periodic problem.
"""
from __future__ import annotations

import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .fields import (
    DomainError,
    HyperbolicityError,
    State,
    as_background,
    diff,
    eos_eval,
    pad_wall,
    state_parities,
)

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """Raised when a run is aborted; carries the partial trajectory."""

    def __init__(self, message, last_good_time=None, trajectory=None):
        super().__init__(message)
        self.last_good_time = last_good_time
        self.trajectory = trajectory


class Tendency(NamedTuple):
    q: np.ndarray
    u: np.ndarray
    F: np.ndarray
    S: np.ndarray

    def pack(self):
        d = self.u.shape[0]
        sh = self.q.shape
        return np.concatenate([self.q[None], self.u, self.F.reshape((d * d,) + sh),
                               self.S[None]])


def packed_gradient(arr, grid, parities):
    """Gradient of every packed variable using reflected ghosts
    (one-sided wall stencils when ``parities`` is None).

    Returns an array of shape ``(nvar, dim, *grid.shape)``.
    """
    out = np.empty((arr.shape[0], grid.dim) + arr.shape[1:])
    for axis, h in enumerate(grid.spacing[:-1]):
        ax = 1 + axis
        out[:, axis] = (np.roll(arr, -1, ax) - np.roll(arr, 1, ax)) / (2.0 * h)
    if parities is None:
        out[:, -1] = diff(arr, grid.dim - 1, grid)
        return out
    g = np.pad(arr, [(0, 0)] * (arr.ndim - 1) + [(1, 1)], mode="reflect")
    odd = parities < 0
    g[odd, ..., 0] *= -1.0
    g[odd, ..., -1] *= -1.0
    out[:, -1] = (g[..., 2:] - g[..., :-2]) / (2.0 * grid.spacing[-1])
    return out


def rhs(state, eos, fbar, grid, source=None, one_sided=False):
    """Time derivative of ``(q, u, F, S)``.

    The divergence constraint on ``rho (F_j + Fbar_j)`` is not imposed here;
    it is carried by the dynamics and monitored by the diagnostics.
    ``source`` is an optional callable ``source(t, state) -> Tendency`` added
    to the result (used for manufactured solutions).  ``one_sided`` swaps
    the reflected ghosts for one-sided wall stencils, which do not build the
    wall conditions into the operator.
    """
    d = grid.dim
    fb = as_background(fbar, d)
    eps = state.eps
    rho, a, _ = eos_eval(eos, state.q, state.S, eps)
    G = packed_gradient(state.pack(), grid, None if one_sided else state_parities(d))
    gq = G[0]
    J = G[1:1 + d]
    GF = G[1 + d:1 + d + d * d].reshape((d, d, d) + grid.shape)
    gS = G[-1]
    u = state.u
    Fc = fb.columns(state.F)

    dq = -np.einsum("k...,k...->...", u, gq) - np.trace(J) / (eps * a)
    du = (-np.einsum("k...,ik...->i...", u, J) - gq / (eps * rho)
          + np.einsum("kj...,ijk...->i...", Fc, GF))
    dF = (-np.einsum("k...,ijk...->ij...", u, GF)
          + np.einsum("kj...,ik...->ij...", Fc, J))
    dS = -np.einsum("k...,k...->...", u, gS)
    out = Tendency(dq, du, dF, dS)
    if source is not None:
        extra = source(state.t, state)
        out = Tendency(*(x + y for x, y in zip(out, extra)))
    return out


def wall_rows(dim):
    """Packed-variable indices of the wall-normal components of u and F."""
    rows = [dim]
    base = 1 + dim + (dim - 1) * dim
    rows += list(range(base, base + dim))
    return np.array(rows)


def _enforce_packed(y, rows):
    y[rows, ..., 0] = 0.0
    y[rows, ..., -1] = 0.0
    return y


def enforce_boundary(state):
    """Zero ``u_3`` and ``F_3j`` on both walls; returns a new state."""
    s = state.copy()
    for arr in (s.u[-1], s.F[-1]):
        arr[..., 0] = 0.0
        arr[..., -1] = 0.0
    return s


def ghost_layers(state, width=1):
    """Fields padded with the reflected ghost layers the solver uses."""
    from .fields import component_names

    d = state.dim
    packed = state.pack()
    return {name: pad_wall(comp, p, width)
            for name, comp, p in zip(component_names(d), packed, state_parities(d))}


def wave_speed(state, eos, fbar, grid):
    """Pointwise bound ``|u| + 1/(eps sqrt(a rho)) + |F + Fbar|``."""
    fb = as_background(fbar, grid.dim)
    rho, a, _ = eos_eval(eos, state.q, state.S, state.eps)
    Fc = fb.columns(state.F)
    speed_u = np.sqrt(np.sum(state.u ** 2, axis=0))
    acoustic = 1.0 / (state.eps * np.sqrt(a * rho))
    elastic = np.sqrt(np.sum(Fc ** 2, axis=(0, 1)))
    return speed_u + acoustic + elastic


def stable_dt(state, eos, grid, cfl, fbar=None):
    c_max = float(np.max(wave_speed(state, eos, fbar, grid)))
    if not math.isfinite(c_max) or c_max <= 0.0:
        raise IntegrationError(f"non-finite or zero wave speed {c_max}", state.t)
    return cfl * grid.hmin / c_max


@dataclass
class CompressibleConfig:
    cfl: float = 0.4
    t_end: float = 0.5
    boundary_tolerance: float = 1e-12
    snapshot_stride: int = 1
    history_depth: int = 4
    dt: float | None = None
    clean_F: bool = False
    clean_every: int = 50
    instability_factor: float = 1e3
    instability_floor: float = 1.0
    compatibility_tolerance: float | None = 0.2

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.history_depth < 4:
            raise ValueError("history_depth must be at least 4")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be positive")
        if self.t_end < 0.0:
            raise ValueError("t_end must be non-negative")


@dataclass
class Trajectory:
    grid: Any
    eps: float
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    report_times: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    window: deque = field(default_factory=deque)
    steps: int = 0
    max_cfl: float = 0.0
    status: str = "ok"
    message: str = ""

    def series(self, probe=0):
        return [r[probe] for r in self.reports]


def compatibility_residuals(state, eos, fbar, grid, delta=1e-6):
    """Wall size of ``d_t^k u_3`` for ``k = 0, 1, 2`` relative to ``max |d_t^k u|``.

    Time derivatives come from chained RHS calls with one-sided wall
    stencils: the reflected-ghost operator satisfies the wall conditions by
    construction and would hide incompatible data.  The values therefore
    carry an ``O(h^2)`` truncation floor.
    """
    d = grid.dim

    def f(s):
        return rhs(s, eos, fbar, grid, one_sided=True)

    def relative(normal, full):
        wall = max(np.max(np.abs(normal[..., 0])), np.max(np.abs(normal[..., -1])))
        scale = float(np.max(np.abs(full)))
        return float(wall / scale) if scale > 0 else 0.0

    r0 = f(state)
    y = state.pack()
    r = r0.pack()
    plus = State.unpack(y + delta * r, state.eps, state.t)
    minus = State.unpack(y - delta * r, state.eps, state.t)
    r2 = (f(plus).pack() - f(minus).pack()) / (2 * delta)
    return [relative(state.u[-1], state.u), relative(r0.u[-1], r0.u),
            relative(r2[d], r2[1:1 + d])]


def _clean_columns(y, eps, t, eos, fb, grid):
    from .incompressible import leray_project

    s = State.unpack(y, eps, t)
    rho, _, _ = eos_eval(eos, s.q, s.S, eps)
    Fc = fb.columns(s.F)
    for j in range(grid.dim):
        pj, _ = leray_project(rho * Fc[:, j], grid)
        s.F[:, j] = pj / rho - fb.fbar[:, j].reshape((-1,) + (1,) * grid.dim)
    return s.pack()


def integrate(state0, config, eos, fbar, grid, probes: Sequence[Callable] = (),
              source=None):
    """Advance ``state0`` to ``config.t_end`` with classical RK4.

    The step is fixed for the whole run (``config.dt`` or the CFL step of the
    initial state, shrunk so that an integer number of steps hits ``t_end``),
    which keeps the history window equispaced.  Every ``snapshot_stride``
    steps the state is stored and each probe is called with the window of the
    last ``history_depth`` states (once the window is full).
    """
    fb = as_background(fbar, grid.dim)
    eps = state0.eps
    rows = wall_rows(grid.dim)

    if config.compatibility_tolerance is not None and config.t_end > 0:
        try:
            res = compatibility_residuals(enforce_boundary(state0), eos, fb, grid)
        except (DomainError, HyperbolicityError) as err:
            err.last_good_time = state0.t
            raise
        if max(res) > config.compatibility_tolerance:
            warnings.warn(f"initial data violates wall compatibility: {res}", stacklevel=2)

    dt = config.dt if config.dt is not None else stable_dt(state0, eos, grid, config.cfl, fb)
    n_steps = max(1, math.ceil(config.t_end / dt - 1e-9)) if config.t_end > 0 else 0
    if n_steps:
        dt = config.t_end / n_steps

    def f(t, y):
        s = State.unpack(y, eps, t)
        return rhs(s, eos, fb, grid, source).pack()

    y = _enforce_packed(enforce_boundary(state0).pack(), rows)
    t0 = state0.t
    traj = Trajectory(grid=grid, eps=eps, dt=dt, window=deque(maxlen=config.history_depth))
    u_ref = max(float(np.max(np.abs(state0.u))), config.instability_floor)

    def record(step, y):
        s = State.unpack(y.copy(), eps, t0 + step * dt)
        traj.window.append(s)
        if step % config.snapshot_stride == 0 or step == n_steps:
            traj.times.append(s.t)
            traj.states.append(s)
            if probes and len(traj.window) == config.history_depth:
                traj.report_times.append(s.t)
                traj.reports.append([p(list(traj.window)) for p in probes])

    record(0, y)
    for n in range(n_steps):
        t = t0 + n * dt
        try:
            k1 = f(t, y)
            y2 = _enforce_packed(y + 0.5 * dt * k1, rows)
            k2 = f(t + 0.5 * dt, y2)
            y3 = _enforce_packed(y + 0.5 * dt * k2, rows)
            k3 = f(t + 0.5 * dt, y3)
            y4 = _enforce_packed(y + dt * k3, rows)
            k4 = f(t + dt, y4)
        except (DomainError, HyperbolicityError) as err:
            traj.status = "eos_error"
            traj.message = str(err)
            err.last_good_time = t
            err.trajectory = traj
            raise
        y_new = _enforce_packed(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), rows)
        if config.clean_F and (n + 1) % config.clean_every == 0:
            y_new = _enforce_packed(_clean_columns(y_new, eps, t + dt, eos, fb, grid), rows)

        if not np.all(np.isfinite(y_new)):
            traj.status = "nan"
            traj.message = f"non-finite values after step {n + 1}"
            raise IntegrationError(traj.message, t, traj)
        umax = float(np.max(np.abs(y_new[1:1 + grid.dim])))
        if umax > config.instability_factor * u_ref:
            traj.status = "unstable"
            traj.message = f"|u|_inf = {umax:.3e} exceeds {config.instability_factor:g} x {u_ref:.3e}"
            raise IntegrationError(traj.message, t, traj)
        y = y_new
        traj.steps = n + 1
        record(n + 1, y)
    if n_steps:
        s_end = traj.window[-1]
        traj.max_cfl = dt * float(np.max(wave_speed(s_end, eos, fb, grid))) / grid.hmin
    log.debug("eps=%g: %d steps, dt=%.3e", eps, n_steps, dt)
    return traj
