"""Energies, constraint residuals and identity checks evaluated on trajectories.

Time derivatives come from backward differences over a window of equispaced
snapshots (oldest first); the solver is never called from here.  Unless noted
otherwise quantities are evaluated at the newest snapshot of the window.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fields import (
    as_background,
    curl,
    div,
    diff,
    eos_eval,
    grad,
    l2_norm,
    sobolev_sq,
    write_component,
)


class ArityError(ValueError):
    """The history window is too short for the requested derivative."""


class SamplingError(ValueError):
    pass


# --- time differences ------------------------------------------------------

def backward_weights(order, npts):
    """Weights ``w`` with ``d^order f/dt^order (t_n) ~ sum_i w_i f_{n-npts+1+i} / dt**order``."""
    if npts < order + 1:
        raise ArityError(f"derivative of order {order} needs {order + 1} points, got {npts}")
    x = np.arange(-(npts - 1), 1, dtype=float)
    A = np.vander(x, increasing=True).T
    rhs = np.zeros(npts)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


def time_derivative(history, order, dt, npts=None):
    """Backward difference of ``history[-1]``; uses ``order + 2`` points when available."""
    if order == 0:
        return np.asarray(history[-1], dtype=float)
    if npts is None:
        npts = min(len(history), order + 2)
    if len(history) < npts:
        raise ArityError(f"need {npts} snapshots, have {len(history)}")
    w = backward_weights(order, npts)
    last = np.asarray(history[-1], dtype=float)
    # differences against the newest snapshot make constant histories exact
    out = np.zeros_like(last)
    for wi, f in zip(w[:-1], history[-npts:-1]):
        out += wi * (np.asarray(f, dtype=float) - last)
    return out / dt ** order


def window_dt(window):
    times = np.array([s.t for s in window])
    if len(times) < 2:
        return None
    steps = np.diff(times)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(abs(steps[0]), 1e-300) + 1e-14:
        raise ValueError("window snapshots must be equispaced and increasing")
    return float(np.mean(steps))


def _mixed_sq(history, s, eps, dt, grid, kmax=None):
    """``sum_k ||(eps d_t)^k f||^2_{s-k}`` for ``k <= min(s, kmax)``."""
    kmax = s if kmax is None else min(s, kmax)
    total = 0.0
    for k in range(kmax + 1):
        fk = time_derivative(history, k, dt) if k else np.asarray(history[-1], dtype=float)
        total += eps ** (2 * k) * sobolev_sq(fk, s - k, grid)
    return total


def sobolev_norm(f_history, s, eps, grid, dt=None):
    """Mixed space-time norm ``||f||_{s,eps}`` at the newest snapshot."""
    if not 0 <= s <= 3:
        raise ValueError("s must lie in 0..3")
    if len(f_history) < s + 1:
        raise ArityError(f"order {s} needs {s + 1} snapshots, have {len(f_history)}")
    if s > 0 and dt is None:
        raise ValueError("dt is required for time derivatives")
    return math.sqrt(_mixed_sq(list(f_history), s, eps, dt, grid))


# --- energies --------------------------------------------------------------

@dataclass
class EnergyReport:
    t: float
    E0: float
    W0: float
    E1: float
    E2: float
    E: float
    sobolev: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    truncated: list = field(default_factory=list)

    def flat(self):
        row = {"t": self.t, "E0": self.E0, "W0": self.W0, "E1": self.E1,
               "E2": self.E2, "E": self.E}
        row.update({f"norm_{k}": v for k, v in self.sobolev.items()})
        for k, v in self.residuals.items():
            if isinstance(v, (list, tuple)):
                row.update({f"{k}_{j + 1}": x for j, x in enumerate(v)})
            else:
                row[k] = v
        row["truncated"] = ";".join(self.truncated)
        return row

    def to_dict(self):
        return asdict(self)


def _material_dt_q(window, dt, grid):
    s = window[-1]
    qt = time_derivative([w.q for w in window], 1, dt)
    return qt + np.einsum("k...,k...->...", s.u, grad(s.q, grid, parity=1))


def energy_E0(state, eos, fbar, grid):
    rho, a, _ = eos_eval(eos, state.q, state.S, state.eps)
    dens = (rho * (np.sum(state.u ** 2, axis=0) + np.sum(state.F ** 2, axis=(0, 1))
                   + state.S ** 2) + a * state.q ** 2)
    return 0.5 * float(np.sum(dens * grid.weights))


def energy_W0(window, eos, fbar, grid, dt):
    s = window[-1]
    fb = as_background(fbar, grid.dim)
    eps = s.eps
    rho, a, _ = eos_eval(eos, s.q, s.S, eps)
    gq = grad(s.q, grid, parity=1)
    Dq = _material_dt_q(window, dt, grid)
    Fq = np.einsum("kj...,k...->j...", fb.columns(s.F), gq)
    dens = a * (eps * Dq) ** 2 + np.sum(gq ** 2, axis=0) / rho + a * eps ** 2 * np.sum(Fq ** 2, axis=0)
    return 0.5 * float(np.sum(dens * grid.weights))


def _directional_S(state, fb, grid):
    """Columns ``(F_j + Fbar_j) . grad S`` stacked as ``(dim, *shape)``."""
    gS = grad(state.S, grid)
    return np.einsum("kj...,k...->j...", fb.columns(state.F), gS)


def energy_suite(window, eos, fbar, grid):
    """All energy functionals at the newest snapshot of ``window``.

    Mixed norms ask for up to three time derivatives; with fewer than four
    snapshots the families are cut at the available order and the affected
    entries are listed in ``truncated``.
    """
    window = list(window)
    if len(window) < 2:
        raise ArityError("energy_suite needs at least two snapshots")
    d = grid.dim
    fb = as_background(fbar, d)
    dt = window_dt(window)
    s = window[-1]
    eps = s.eps
    kmax = len(window) - 1
    truncated = []

    def mixed(name, hist, order):
        if order > kmax:
            truncated.append(name)
        return _mixed_sq(hist, order, eps, dt, grid, kmax)

    def time_l2(name, hist, kk=3):
        if kk > kmax:
            truncated.append(name)
        return sum(eps ** (2 * k) * l2_norm(time_derivative(hist, k, dt), grid) ** 2
                   for k in range(min(kk, kmax) + 1))

    q_h = [w.q for w in window]
    u_h = [w.u for w in window]
    F_h = [w.F for w in window]
    S_h = [w.S for w in window]
    FS_h = [_directional_S(w, fb, grid) for w in window]
    rho0_h = [eos.rho0(w.S) for w in window]

    sob = {
        "q": mixed("q", q_h, 3), "u": mixed("u", u_h, 3), "S": mixed("S", S_h, 3),
    }
    for j in range(d):
        sob[f"F{j + 1}"] = mixed(f"F{j + 1}", [F[:, j] for F in F_h], 3)
        sob[f"FS{j + 1}"] = mixed(f"FS{j + 1}", [x[j] for x in FS_h], 3)
    E = sum(sob.values())

    E1 = (time_l2("dt_q", q_h) + time_l2("dt_u", u_h) + time_l2("dt_F", F_h)
          + sob["S"] + sum(sob[f"FS{j + 1}"] for j in range(d))
          + mixed("curl_rho0_u", [curl(r * u, grid) for r, u in zip(rho0_h, u_h)], 2)
          + sum(mixed(f"curl_rho0_F{j + 1}",
                      [curl(r * F[:, j], grid) for r, F in zip(rho0_h, F_h)], 2)
                for j in range(d)))
    E2 = (mixed("grad_q", [grad(q, grid) for q in q_h], 2)
          + mixed("div_u", [div(u, grid) for u in u_h], 2)
          + mixed("curl_u", [curl(u, grid) for u in u_h], 2))
    for j in range(d):
        E2 += mixed(f"div_F{j + 1}", [div(F[:, j], grid) for F in F_h], 2)
        E2 += mixed(f"curl_F{j + 1}", [curl(F[:, j], grid) for F in F_h], 2)

    residuals = constraint_residuals(s, eos, fb, grid)
    residuals["wave_eq"] = wave_residual(window, eos, fb, grid) if len(window) >= 3 else float("nan")
    residuals["commutator"] = commutator_residual(window, fb, grid)
    return EnergyReport(
        t=float(s.t), E0=energy_E0(s, eos, fb, grid), W0=energy_W0(window, eos, fb, grid, dt),
        E1=E1, E2=E2, E=E, sobolev={k: math.sqrt(v) for k, v in sob.items()},
        residuals=residuals, truncated=sorted(set(truncated)))


def energy_probe(eos, fbar, grid):
    """Probe for :func:`machlimit.compressible.integrate` returning ``(E0, W0)``.

    The full :func:`energy_suite` is considerably more expensive; sweeps only
    need the two lowest-order functionals.
    """
    fb = as_background(fbar, grid.dim)

    def probe(window):
        dt = window_dt(window)
        return (energy_E0(window[-1], eos, fb, grid), energy_W0(window, eos, fb, grid, dt))

    return probe


# --- residuals -------------------------------------------------------------

def _wall_trace_max(state):
    vals = [np.abs(state.u[-1][..., 0]), np.abs(state.u[-1][..., -1]),
            np.abs(state.F[-1][..., 0]), np.abs(state.F[-1][..., -1])]
    return float(max(np.max(v) for v in vals))


def constraint_residuals(state, eos, fbar, grid):
    """``||div(rho (F_j + Fbar_j))||_0`` per column and the max wall trace."""
    fb = as_background(fbar, grid.dim)
    rho, _, _ = eos_eval(eos, state.q, state.S, state.eps)
    Fc = fb.columns(state.F)
    divF = [l2_norm(div(rho * Fc[:, j], grid, parity=1), grid) for j in range(grid.dim)]
    return {"divF_constraint": divF, "wall_traces": _wall_trace_max(state)}


def _interior(f):
    return f[..., 1:-1]


def _interior_norm(f, grid):
    w = grid.weights[..., 1:-1]
    sq = np.asarray(f) ** 2
    while sq.ndim > grid.dim:
        sq = sq.sum(axis=0)
    return float(np.sqrt(np.sum(_interior(sq) * w)))


def wave_source(window, eos, fbar, grid):
    """Source of the pressure wave equation at the newest snapshot."""
    fb = as_background(fbar, grid.dim)
    dt = window_dt(window)
    s = window[-1]
    eps = s.eps
    p = 1.0 + eps * s.q
    a_p = eos.a_p(p, s.S)
    b = eos.b(p, s.S)
    cross = eos.a_S(p, s.S) + eos.b_p(p, s.S)
    b_S = eos.b_S(p, s.S)
    Fc = fb.columns(s.F)
    gq = grad(s.q, grid, parity=1)
    gS = grad(s.S, grid, parity=1)
    J = np.stack([grad(s.u[i], grid, parity=1 if i < grid.dim - 1 else -1)
                  for i in range(grid.dim)])
    Dq = _material_dt_q(window, dt, grid)

    G = eps * np.einsum("ik...,ki...->...", J, J) - eps ** 3 * a_p * Dq ** 2
    for j in range(grid.dim):
        c = Fc[:, j]
        Fq = np.einsum("k...,k...->...", c, gq)
        FS = np.einsum("k...,k...->...", c, gS)
        FFS = np.einsum("k...,k...->...", c, grad(FS, grid, parity=1))
        GFj = np.stack([grad(s.F[i, j], grid, parity=1 if i < grid.dim - 1 else -1)
                        for i in range(grid.dim)])
        G = G + (eps * b * FFS + eps ** 3 * a_p * Fq ** 2 + eps ** 2 * cross * Fq * FS
                 + eps * b_S * FS ** 2 - eps * np.einsum("ik...,ki...->...", GFj, GFj))
    return G


def wave_residual(window, eos, fbar, grid, as_field=False):
    """L2 norm over interior nodes of the pressure wave-equation residual."""
    window = list(window)
    if len(window) < 3:
        raise ArityError("wave_residual needs at least three snapshots")
    fb = as_background(fbar, grid.dim)
    dt = window_dt(window)
    s = window[-1]
    eps = s.eps
    rho, a, _ = eos_eval(eos, s.q, s.S, eps)
    q_h = [w.q for w in window]
    qt = time_derivative(q_h, 1, dt)
    qtt = time_derivative(q_h, 2, dt)
    ut = time_derivative([w.u for w in window], 1, dt)
    gq = grad(s.q, grid, parity=1)

    def adv(v, f, parity=1):
        return np.einsum("k...,k...->...", v, grad(f, grid, parity=parity))

    ugq = np.einsum("k...,k...->...", s.u, gq)
    D2q = qtt + 2.0 * adv(s.u, qt) + np.einsum("k...,k...->...", ut, gq) + adv(s.u, ugq)
    lhs = eps ** 2 * a * D2q - div(gq / rho, grid, parity=1)
    Fc = fb.columns(s.F)
    for j in range(grid.dim):
        Fq = np.einsum("k...,k...->...", Fc[:, j], gq)
        lhs = lhs - eps ** 2 * a * adv(Fc[:, j], Fq)
    r = lhs - wave_source(window, eos, fb, grid)
    return r if as_field else _interior_norm(r, grid)


def commutator_residual(window, fbar, grid):
    """``||D_t((F_j + Fbar_j).grad S)||_0`` for each column ``j``."""
    window = list(window)
    if len(window) < 2:
        raise ArityError("commutator_residual needs at least two snapshots")
    fb = as_background(fbar, grid.dim)
    dt = window_dt(window)
    hist = [np.einsum("kj...,k...->j...", fb.columns(w.F), grad(w.S, grid, parity=1))
            for w in window]
    ddt = time_derivative(hist, 1, dt, npts=min(len(hist), 3))
    u = window[-1].u
    out = []
    for j in range(grid.dim):
        r = ddt[j] + np.einsum("k...,k...->...", u, grad(hist[-1][j], grid, parity=1))
        out.append(l2_norm(r, grid))
    return out


# --- elliptic and curl quantities -----------------------------------------

def trace_seminorm_sq(trace, r, grid):
    """Tangential-Fourier weighted norm ``sum (1+|k|^2)^r |c_k|^2 * area``."""
    axes = tuple(range(grid.dim - 1))
    n = [grid.counts[a] for a in axes]
    c = np.fft.fftn(trace, axes=axes) / np.prod(n)
    ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(grid.counts[a], grid.spacing[a])
                       for a in axes], indexing="ij")
    k2 = sum(k ** 2 for k in ks)
    area = np.prod([grid.lengths[a] for a in axes])
    return float(np.sum((1.0 + k2) ** r * np.abs(c) ** 2) * area)


def hodge_bound_check(X, s, grid):
    """``||X||_s^2`` and the four controlling quantities of the div-curl estimate."""
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    X = np.asarray(X, dtype=float)
    lhs = sobolev_sq(X, s, grid)
    normal = X[-1]
    boundary = (trace_seminorm_sq(normal[..., 0], s - 0.5, grid)
                + trace_seminorm_sq(normal[..., -1], s - 0.5, grid))
    rhs = (l2_norm(X, grid) ** 2, sobolev_sq(div(X, grid), s - 1, grid),
           sobolev_sq(curl(X, grid), s - 1, grid), boundary)
    return {"lhs": lhs, "rhs_components": rhs}


def fit_hodge_constant(fields, s, grid):
    """Smallest ``C`` with ``lhs <= C * sum(rhs)`` over a corpus of fields."""
    ratios = []
    for X in fields:
        r = hodge_bound_check(X, s, grid)
        denom = sum(r["rhs_components"])
        if denom > 0:
            ratios.append(r["lhs"] / denom)
    return max(ratios) if ratios else 0.0


def curl_weighted(state, eos, grid):
    """``curl(rho0 u)`` and the list ``[curl(rho0 F_j)]`` with ``rho0 = rho(0, S)``."""
    rho0 = eos.rho0(state.S)
    cu = curl(rho0 * state.u, grid)
    cF = [curl(rho0 * state.F[:, j], grid) for j in range(grid.dim)]
    return cu, cF


# --- wave packet transform -------------------------------------------------

def wave_packet_transform(signal, eps, tau_grid, times, t_grid=None):
    """Gaussian-windowed transform
    ``W(t, tau) = (2 pi^3)^(-1/4) eps^(-3/4) int exp((i (t-s) tau - (t-s)^2)/eps) v(s) ds``.

    ``signal`` is sampled on the uniform grid ``times`` and treated as zero
    outside it.  Returns the complex array indexed ``(t, tau)``; ``t_grid``
    defaults to ``times``.
    """
    v = np.asarray(signal, dtype=float)
    s = np.asarray(times, dtype=float)
    tau = np.asarray(tau_grid, dtype=float)
    t = s if t_grid is None else np.asarray(t_grid, dtype=float)
    if v.shape != s.shape or s.size < 2:
        raise ValueError("signal and times must be 1D arrays of equal length")
    ds = s[1] - s[0]
    if not np.allclose(np.diff(s), ds, rtol=1e-9, atol=0.0):
        raise SamplingError("signal must be uniformly sampled")
    if ds > math.sqrt(eps) / 8.0:
        raise SamplingError(f"sample spacing {ds:g} exceeds sqrt(eps)/8 = {math.sqrt(eps) / 8:g}")
    w = np.full(s.size, ds)
    w[[0, -1]] *= 0.5
    gauss = np.exp(-(t[None, :] - s[:, None]) ** 2 / eps) * (v * w)[:, None]
    phase = np.exp(-1j * np.outer(tau, s) / eps)
    core = phase @ gauss
    pref = (2.0 * math.pi ** 3) ** -0.25 * eps ** -0.75
    return (pref * np.exp(1j * np.outer(tau, t) / eps) * core).T


def isometry_ratio(W, t_grid, tau_grid, signal, times):
    """``||W||_{L2(t, tau)} / ||v||_{L2}`` by trapezoidal quadrature."""
    num = np.trapezoid(np.trapezoid(np.abs(W) ** 2, tau_grid, axis=1), t_grid)
    den = np.trapezoid(np.asarray(signal) ** 2, times)
    return math.sqrt(num / den)


def write_wave_packet(path_stem, W, t_grid, tau_grid, eps):
    """Store real and imaginary parts in the snapshot binary format, axes ``(t, tau)``."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    meta = {"axes": ["t", "tau"], "eps": float(eps),
            "t": [float(t_grid[0]), float(t_grid[-1]), len(t_grid)],
            "tau": [float(tau_grid[0]), float(tau_grid[-1]), len(tau_grid)]}
    paths = []
    for part, arr in (("re", W.real), ("im", W.imag)):
        p = stem.with_name(f"{stem.name}_{part}.bin")
        write_component(p, arr, dict(meta, component=f"W_{part}"))
        paths.append(p)
    return paths


# --- report series ---------------------------------------------------------

def write_reports_csv(reports, path):
    rows = [r.flat() for r in reports]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    fields = list(rows[0])
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_reports_jsonl(reports, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict()) + "\n")
    return path
