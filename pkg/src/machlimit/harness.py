"""Initial data, Mach-number sweeps and convergence metrics against the limit run."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .compressible import CompressibleConfig, IntegrationError, integrate, stable_dt
from .diagnostics import energy_probe
from .fields import (
    BackgroundDeformation,
    DomainError,
    EquationOfState,
    Grid,
    HyperbolicityError,
    State,
    as_background,
    div,
    eos_eval,
    l2_norm,
)
from .incompressible import (
    IncompressibleState,
    construct_w0,
    incompressible_stable_dt,
    integrate_incompressible,
    leray_project,
)

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    pass


# --- initial data ----------------------------------------------------------

@dataclass(frozen=True)
class DataParams:
    """Amplitude and shape knobs of the generated data family."""

    u_amplitude: float = 0.5
    gradient_amplitude: float = 0.25
    q_amplitude: float = 0.25
    F_amplitude: float = 0.2
    N0: float = 0.5
    sigma: float = 0.35
    modes: int = 2
    entropy: str = "bump"


def _trig_field(grid, rng, modes, kind):
    """Random trigonometric sum; ``kind`` 'even' (cos in x3) or 'odd' (sin in x3)."""
    coords = grid.coords()
    X3 = coords[-1]
    out = np.zeros(grid.shape)
    for k in range(modes + 1):
        for m in range(modes + 1):
            if k == 0 and m == 0:
                continue
            amp, phase = rng.normal(), rng.uniform(0, 2 * np.pi)
            tang = np.cos(2 * np.pi * k * coords[0] / grid.L1 + phase)
            if grid.dim == 3:
                tang = tang * np.cos(2 * np.pi * rng.integers(0, modes + 1) * coords[1] / grid.L2
                                     + rng.uniform(0, 2 * np.pi))
            prof = np.cos(m * np.pi * X3 / grid.L3) if kind == "even" else np.sin(m * np.pi * X3 / grid.L3)
            out += amp * tang * prof / (1.0 + k * k + m * m)
    return out


def _random_vector(grid, rng, modes):
    comps = [_trig_field(grid, rng, modes, "even") for _ in range(grid.dim - 1)]
    comps.append(_trig_field(grid, rng, modes, "odd"))
    return np.stack(comps)


def _normalise(X, amplitude):
    peak = float(np.max(np.abs(X)))
    return X * (amplitude / peak) if peak > 0 else X


def entropy_bump(grid, N0=0.5, sigma=0.35):
    """Smooth compactly supported bump of height ``N0`` centred mid-slab."""
    coords = grid.coords()
    centre = [L / 2 for L in grid.lengths[:-1]] + [-grid.L3 / 2]
    r2 = sum((c - x0) ** 2 for c, x0 in zip(coords, centre)) / sigma ** 2
    out = np.zeros(grid.shape)
    inside = r2 < 1.0
    out[inside] = N0 * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def entropy_smooth(grid, N0=0.5):
    """Single even cosine mode; used where refinement studies need low derivatives."""
    coords = grid.coords()
    return N0 * np.cos(2 * np.pi * coords[0] / grid.L1) * np.cos(np.pi * coords[-1] / grid.L3)


def entropy_stratified(grid, N0=0.5):
    """Entropy depending on x3 only; with ``F = 0`` it gives a rest state."""
    return N0 * np.cos(np.pi * grid.coords()[-1] / grid.L3)


def _gradient_part(grid, rng, amplitude):
    """Analytic gradient of ``cos(2 pi x1/L1 + phi) cos(pi x3/L3)`` (zero normal trace)."""
    coords = grid.coords()
    phase = rng.uniform(0, 2 * np.pi)
    k, m = 2 * np.pi / grid.L1, np.pi / grid.L3
    X1, X3 = coords[0], coords[-1]
    g = np.zeros((grid.dim,) + grid.shape)
    g[0] = -k * np.sin(k * X1 + phase) * np.cos(m * X3)
    g[-1] = -m * np.cos(k * X1 + phase) * np.sin(m * X3)
    return _normalise(g, amplitude)


def data_fields(mode, grid, eos, fbar, eps, seed, params=DataParams()):
    """Arrays ``(q, u, F, S)`` of the data family; ``eps = 0`` gives the limit profile."""
    if mode not in ("well", "ill", "rest"):
        raise ValueError(f"unknown data mode {mode!r}")
    fb = as_background(fbar, grid.dim)
    rng = np.random.default_rng(seed)
    if mode == "rest":
        S = entropy_stratified(grid, params.N0)
        z = np.zeros(grid.shape)
        return z, np.zeros((grid.dim,) + grid.shape), np.zeros((grid.dim,) * 2 + grid.shape), S
    if params.entropy == "bump":
        S = entropy_bump(grid, params.N0, params.sigma)
    elif params.entropy == "smooth":
        S = entropy_smooth(grid, params.N0)
    else:
        raise ValueError(f"unknown entropy profile {params.entropy!r}")
    base, _ = leray_project(_random_vector(grid, rng, params.modes), grid)
    u = _normalise(base, params.u_amplitude)
    grad_part = _gradient_part(grid, rng, params.gradient_amplitude)
    q_rand = _normalise(_trig_field(grid, rng, params.modes, "even"), params.q_amplitude)
    V = [_random_vector(grid, rng, params.modes) for _ in range(grid.dim)]
    if mode == "ill":
        u = u + grad_part
        q = q_rand
    else:
        q = np.zeros(grid.shape)
    rho, _, _ = eos_eval(eos, q, S, eps)
    F = np.zeros((grid.dim, grid.dim) + grid.shape)
    for j in range(grid.dim):
        target = rho * fb.fbar[:, j].reshape((-1,) + (1,) * grid.dim) + params.F_amplitude * V[j]
        pj, _ = leray_project(target, grid)
        F[:, j] = pj / rho - fb.fbar[:, j].reshape((-1,) + (1,) * grid.dim)
    return q, u, F, S


def make_initial_data(mode, grid, eos, fbar, eps, seed, params=DataParams()):
    """Compressible data: ``mode`` is 'well', 'ill' or 'rest' (stratified equilibrium)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    q, u, F, S = data_fields(mode, grid, eos, fbar, eps, seed, params)
    return State(q, u, F, S, float(eps), 0.0)


def make_limit_data(mode, grid, eos, fbar, seed, params=DataParams()):
    """Limit-system data: ``w0`` from the common velocity profile, ``varrho = rho(0, S0)``."""
    _, u, F, S = data_fields(mode, grid, eos, fbar, 0.0, seed, params)
    rho0 = eos.rho0(S)
    w0, residuals = construct_w0(u, rho0, grid)
    return IncompressibleState(w0, F, S, rho0, None, 0.0), residuals


# --- sweep -----------------------------------------------------------------

@dataclass
class SweepConfig:
    eps_list: list
    prepared: str = "ill"
    grid: dict = field(default_factory=lambda: {"dim": 2, "n1": 32, "n3": 32})
    gamma: float = 1.4
    rho_floor: float = 0.05
    fbar: list | None = None
    cfl: float = 0.4
    t_end: float = 0.5
    T: float | None = None
    n_out: int = 25
    seed: int = 0
    locality: float | None = None
    threads: int = 1

    def __post_init__(self):
        eps = list(map(float, self.eps_list))
        if any(not 0.0 < e <= 1.0 for e in eps):
            raise ValueError("eps_list entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        self.eps_list = eps
        if self.prepared not in ("well", "ill", "rest"):
            raise ValueError("prepared must be 'well', 'ill' or 'rest'")
        if self.T is None:
            self.T = self.t_end
        if self.T > self.t_end:
            raise ValueError("metric window T must not exceed t_end")
        if self.n_out < 1:
            raise ValueError("n_out must be positive")

    def make_grid(self):
        return Grid(**self.grid)

    def background(self):
        g = self.make_grid()
        if self.fbar is None:
            return BackgroundDeformation.default(g.dim)
        return as_background(self.fbar, g.dim)

    def radius(self):
        return self.locality if self.locality is not None else self.make_grid().L3 / 4

    def to_dict(self):
        d = asdict(self)
        if self.fbar is not None:
            d["fbar"] = np.asarray(self.fbar, dtype=float).tolist()
        return d


@dataclass
class SweepResult:
    config: dict
    runs: list = field(default_factory=list)
    limit: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    energies: dict = field(default_factory=dict)

    def metric(self, name):
        return [r["metrics"].get(name, float("nan")) if r["status"] == "ok" else float("nan")
                for r in self.runs]

    @property
    def eps(self):
        return [r["eps"] for r in self.runs]

    @property
    def ok(self):
        return all(r["status"] == "ok" for r in self.runs) and self.limit.get("status", "ok") == "ok"

    def to_dict(self):
        return {"config": self.config, "runs": self.runs, "limit": self.limit,
                "slopes": self.slopes}


def ball_mask(grid, radius, centre=None):
    coords = grid.coords()
    if centre is None:
        centre = [L / 2 for L in grid.lengths[:-1]] + [-grid.L3 / 2]
    r2 = sum((c - x0) ** 2 for c, x0 in zip(coords, centre))
    return r2 <= radius ** 2


def _local_norm(f, grid, mask):
    sq = np.asarray(f) ** 2
    while sq.ndim > grid.dim:
        sq = sq.sum(axis=0)
    return float(np.sqrt(np.sum(sq * grid.weights * mask)))


def _time_l2(values, times):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.sqrt(np.trapezoid(values ** 2, times)))


def _comp_fields(s):
    return s.q, s.u


def convergence_metrics(comp_traj, incomp_traj, window, locality, grid=None):
    """Metrics of one compressible run against the limit run on ``[0, window]``.

    ``l2t_*`` are ``L2([0,T]; L2(B))`` norms; ``avg_*`` divide by ``sqrt(T)``
    (root-mean-square in time).  ``linf_*`` are sup-in-time global L2 norms.
    """
    grid = grid or comp_traj.grid
    tc = np.asarray(comp_traj.times)
    sel = tc <= window + 1e-12
    times = tc[sel]
    states = [s for s, keep in zip(comp_traj.states, sel) if keep]
    if incomp_traj is not None:
        ti = np.asarray(incomp_traj.times)
        if len(ti) < len(times) or np.max(np.abs(ti[:len(times)] - times)) > 1e-9 * max(1.0, window):
            raise AlignmentError("compressible and limit trajectories have different output times")
        limits = incomp_traj.states[:len(times)]
    else:
        limits = [None] * len(times)
    mask = ball_mask(grid, locality)
    series = {k: [] for k in ("q_loc", "divu_loc", "Qu_loc", "du_loc", "q", "du")}
    for s, lim in zip(states, limits):
        _, Qu = leray_project(s.u, grid)
        series["q_loc"].append(_local_norm(s.q, grid, mask))
        series["divu_loc"].append(_local_norm(div(s.u, grid), grid, mask))
        series["Qu_loc"].append(_local_norm(Qu, grid, mask))
        series["q"].append(l2_norm(s.q, grid))
        if lim is not None:
            series["du_loc"].append(_local_norm(s.u - lim.u, grid, mask))
            series["du"].append(l2_norm(s.u - lim.u, grid))
    T = float(times[-1] - times[0]) if len(times) > 1 else 0.0
    out = {"T": T, "n_times": int(len(times))}
    for key in ("q_loc", "divu_loc", "Qu_loc", "du_loc"):
        if series[key]:
            l2t = _time_l2(series[key], times)
            out[f"l2t_{key}"] = l2t
            out[f"avg_{key}"] = l2t / math.sqrt(T) if T > 0 else series[key][0]
    out["linf_q"] = max(series["q"])
    out["osc_q"] = max(series["q"]) - float(np.mean(series["q"]))
    if series["du"]:
        out["linf_du"] = max(series["du"])
    return out, {k: v for k, v in series.items() if v}, times


def _output_schedule(cfg, state0, eos, fb, grid):
    """Step ``dt`` and stride so that outputs land on ``k * t_end / n_out``."""
    d_out = cfg.t_end / cfg.n_out
    dt = stable_dt(state0, eos, grid, cfg.cfl, fb)
    m = max(1, math.ceil(d_out / dt - 1e-9))
    return d_out / m, m


def _run_compressible(args):
    cfg_dict, eps = args
    cfg = SweepConfig(**cfg_dict)
    grid = cfg.make_grid()
    eos = EquationOfState(cfg.gamma, cfg.rho_floor)
    fb = cfg.background()
    record = {"eps": eps, "status": "ok", "message": ""}
    try:
        state0 = make_initial_data(cfg.prepared, grid, eos, fb, eps, cfg.seed)
        dt, m = _output_schedule(cfg, state0, eos, fb, grid)
        ccfg = CompressibleConfig(cfl=cfg.cfl, t_end=cfg.t_end, dt=dt, snapshot_stride=m,
                                  compatibility_tolerance=None)
        traj = integrate(state0, ccfg, eos, fb, grid, probes=[energy_probe(eos, fb, grid)])
    except (IntegrationError, DomainError, HyperbolicityError) as err:
        record.update(status="failed", message=str(err),
                      last_good_time=getattr(err, "last_good_time", None))
        return record, None
    record.update(dt=dt, steps=traj.steps, max_cfl=traj.max_cfl)
    return record, traj


def _run_limit(cfg):
    grid = cfg.make_grid()
    eos = EquationOfState(cfg.gamma, cfg.rho_floor)
    fb = cfg.background()
    istate, res = make_limit_data(cfg.prepared, grid, eos, fb, cfg.seed)
    d_out = cfg.t_end / cfg.n_out
    dt = incompressible_stable_dt(istate, fb, grid, cfg.cfl)
    m = max(1, math.ceil(d_out / dt - 1e-9))
    icfg = CompressibleConfig(cfl=cfg.cfl, t_end=cfg.t_end, dt=d_out / m, snapshot_stride=m)
    return integrate_incompressible(istate, icfg, fb, grid), res


def _fit_slope(eps, values):
    eps = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "residual": float("nan"), "n": int(ok.sum())}
    x, y = np.log(eps[ok]), np.log(v[ok])
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / ok.sum())) if res.size else 0.0
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "residual": rms, "n": int(ok.sum())}


def mach_sweep(cfg, threads=None):
    """Run every ``eps`` of the sweep plus the limit system; compute metrics and slopes."""
    if threads is None:
        threads = int(os.environ.get("MACHLIMIT_THREADS", cfg.threads))
    threads = max(1, threads)
    grid = cfg.make_grid()
    jobs = [(cfg.to_dict(), e) for e in cfg.eps_list]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            outcomes = list(pool.map(_run_compressible, jobs))
    else:
        outcomes = [_run_compressible(j) for j in jobs]

    result = SweepResult(config=cfg.to_dict())
    try:
        limit_traj, w0_res = _run_limit(cfg)
        result.limit = {"status": "ok", "w0_residuals": w0_res, "steps": limit_traj.steps,
                        "div_max": max(l2_norm(div(s.u, grid, parity=1), grid)
                                       for s in limit_traj.states)}
    except (IntegrationError, HyperbolicityError, ValueError) as err:
        limit_traj = None
        result.limit = {"status": "failed", "message": str(err)}

    for record, traj in outcomes:
        if traj is not None:
            metrics, _, _ = convergence_metrics(traj, limit_traj, cfg.T, cfg.radius(), grid)
            energies = [(t, e0, w0) for t, (e0, w0) in
                        zip(traj.report_times, traj.series(0)) if t <= cfg.T + 1e-12]
            metrics["sup_E0_W0"] = max(e0 + w0 for _, e0, w0 in energies) if energies else float("nan")
            record["metrics"] = metrics
            result.energies[record["eps"]] = energies
        else:
            record["metrics"] = {}
        result.runs.append(record)

    names = sorted({k for r in result.runs for k in r["metrics"]} - {"T", "n_times"})
    result.slopes = {k: _fit_slope(result.eps, result.metric(k)) for k in names}
    return result


# --- reports ---------------------------------------------------------------

def run_hash(payload):
    blob = json.dumps(payload, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def emit_reports(result, out_dir):
    """Write ``sweep_summary.json``, one energy CSV per run and ``sweep_plot.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = result.to_dict()
        summary["run_hash"] = run_hash(summary)
        summary["geometry"] = "slab: periodic x1, slip walls at x3 = -L3 and x3 = 0"
        paths = [out / "sweep_summary.json"]
        paths[0].write_text(json.dumps(summary, indent=1, allow_nan=True))
        for i, run in enumerate(result.runs):
            rows = result.energies.get(run["eps"])
            if rows is None:
                continue
            p = out / f"energy_eps{i:02d}_{run['eps']:.6g}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "E0", "W0"])
                w.writerows([[repr(float(x)) for x in row] for row in rows])
            paths.append(p)
        if result.runs:
            names = sorted({k for r in result.runs for k in r["metrics"]} - {"T", "n_times"})
            p = out / "sweep_plot.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["eps", "log10_eps"] + [c for n in names for c in (n, f"log10_{n}")])
                for run in result.runs:
                    row = [run["eps"], math.log10(run["eps"])]
                    for n in names:
                        v = run["metrics"].get(n, float("nan"))
                        row += [v, math.log10(v) if v > 0 else float("nan")]
                    w.writerow(row)
            paths.append(p)
    except OSError as err:
        raise OSError(f"cannot write reports to {out}: {err}") from err
    return paths


def load_summary(path):
    return json.loads(Path(path).read_text())
