"""Command-line front end: ``machlimit run|sweep|verify|mms``.

Exit codes: 0 all checks passed, 1 a check or run failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
log = logging.getLogger("machlimit")

GRID_DEFAULTS = {"dim": 2, "n1": 64, "n3": 64, "L1": 1.0, "L3": 1.0, "n2": None, "L2": None}
EOS_DEFAULTS = {"gamma": 1.4, "rho_floor": 0.05}
RUN_DEFAULTS = {
    "mode": "compressible", "grid": GRID_DEFAULTS, "eos": EOS_DEFAULTS, "eps": None,
    "fbar": None, "cfl": 0.4, "t_end": 0.5, "prepared": "ill", "seed": 0,
    "snapshot_stride": 50, "clean_F": False, "boundary_tolerance": 1e-12,
}
SWEEP_DEFAULTS = {
    "grid": GRID_DEFAULTS, "eos": EOS_DEFAULTS, "eps_list": None, "fbar": None,
    "prepared": "ill", "cfl": 0.4, "t_end": 0.5, "T": None, "n_out": 25, "seed": 0,
    "locality": None,
}


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None, column=None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column


def _merge(defaults, given, prefix=""):
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        key = prefix + unknown[0]
        raise ConfigError(f"unknown configuration key {key!r}", key=key)
    out = {}
    for k, d in defaults.items():
        v = given.get(k, copy.deepcopy(d))
        if isinstance(d, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{prefix}{k} must be an object", key=prefix + k)
            v = _merge(d, v, prefix=f"{prefix}{k}.")
        out[k] = v
    return out


def _check_number(cfg, key, lo=None, hi=None, lo_open=False, integer=False):
    v = cfg[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{key} must be a number", key=key)
    if integer and int(v) != v:
        raise ConfigError(f"{key} must be an integer", key=key)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{key} = {v} is below the allowed range", key=key)
    if hi is not None and v > hi:
        raise ConfigError(f"{key} = {v} exceeds {hi}", key=key)


def _validate_common(cfg):
    g = cfg["grid"]
    if g["dim"] not in (2, 3):
        raise ConfigError("grid.dim must be 2 or 3", key="grid.dim")
    axes = ["n1", "n3"] + (["n2"] if g["dim"] == 3 else [])
    for k in axes:
        if not isinstance(g[k], int) or g[k] < 8:
            raise ConfigError(f"grid.{k} must be an integer >= 8", key=f"grid.{k}")
    for k in ["L1", "L3"] + (["L2"] if g["dim"] == 3 else []):
        if not isinstance(g[k], (int, float)) or g[k] <= 0:
            raise ConfigError(f"grid.{k} must be positive", key=f"grid.{k}")
    if not cfg["eos"]["gamma"] > 1:
        raise ConfigError("eos.gamma must exceed 1", key="eos.gamma")
    if not cfg["eos"]["rho_floor"] > 0:
        raise ConfigError("eos.rho_floor must be positive", key="eos.rho_floor")
    _check_number(cfg, "cfl", 0.0, 1.0, lo_open=True)
    _check_number(cfg, "t_end", 0.0)
    _check_number(cfg, "seed", 0, integer=True)
    if cfg["prepared"] not in ("well", "ill", "rest"):
        raise ConfigError("prepared must be 'well', 'ill' or 'rest'", key="prepared")
    if cfg["fbar"] is not None:
        fb = np.asarray(cfg["fbar"], dtype=float)
        if fb.shape != (g["dim"], g["dim"]) or np.any(fb[-1] != 0):
            raise ConfigError("fbar must be dim x dim with a zero last row", key="fbar")


def validate_run(cfg):
    _validate_common(cfg)
    if cfg["mode"] not in ("compressible", "incompressible"):
        raise ConfigError("mode must be 'compressible' or 'incompressible'", key="mode")
    if cfg["mode"] == "compressible":
        if cfg["eps"] is None:
            raise ConfigError("eps is required", key="eps")
        _check_number(cfg, "eps", 0.0, 1.0, lo_open=True)
    _check_number(cfg, "snapshot_stride", 1, integer=True)
    return cfg


def validate_sweep(cfg):
    _validate_common(cfg)
    eps = cfg["eps_list"]
    if not isinstance(eps, list) or not all(isinstance(e, (int, float)) for e in eps):
        raise ConfigError("eps_list must be a list of numbers", key="eps_list")
    if any(not 0 < e <= 1 for e in eps):
        raise ConfigError("eps_list entries must lie in (0, 1]", key="eps_list")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps_list must be strictly decreasing", key="eps_list")
    if cfg["T"] is None:
        cfg["T"] = cfg["t_end"]
    _check_number(cfg, "T", 0.0, cfg["t_end"])
    _check_number(cfg, "n_out", 1, integer=True)
    return cfg


def parse_config(path, kind=None):
    """Read, default-fill and validate a JSON config; ``kind`` is 'run' or 'sweep'
    (inferred from the presence of ``eps_list`` when omitted)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: {err.msg} at line {err.lineno} column {err.colno}",
                          line=err.lineno, column=err.colno) from err
    return resolve_config(raw, kind)


def resolve_config(raw, kind=None):
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    if kind is None:
        kind = "sweep" if "eps_list" in raw else "run"
    if kind == "sweep":
        return validate_sweep(_merge(SWEEP_DEFAULTS, raw))
    if kind == "run":
        return validate_run(_merge(RUN_DEFAULTS, raw))
    raise ConfigError(f"unknown config kind {kind!r}")


# --- logging and manifest -------------------------------------------------

class JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"time": self.formatTime(record), "level": record.levelname,
                           "logger": record.name, "message": record.getMessage()})


def setup_logging(fmt="text", level=logging.INFO):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if fmt == "json"
                         else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("machlimit")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    logging.captureWarnings(True)
    pw = logging.getLogger("py.warnings")
    pw.handlers[:] = [handler]
    pw.propagate = False


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def write_manifest(path, config, started, outputs, checks):
    """Write the run manifest atomically (temp file + rename)."""
    path = Path(path)
    manifest = {"schema_version": SCHEMA_VERSION, "tool": "machlimit", "version": __version__,
                "config": config, "started": started, "finished": _now(),
                "outputs": [str(p) for p in outputs], "checks": checks}
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp, path)
    return manifest


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MACHLIMIT_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


# --- subcommands ----------------------------------------------------------

def _cmd_run(args):
    from .compressible import CompressibleConfig, IntegrationError, integrate
    from .diagnostics import energy_suite, write_reports_csv, write_reports_jsonl
    from .fields import EquationOfState, Grid, HyperbolicityError, DomainError, as_background
    from .fields import BackgroundDeformation, write_component, write_snapshot
    from .harness import make_initial_data, make_limit_data
    from .incompressible import integrate_incompressible

    started = _now()
    cfg = parse_config(args.config, "run")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = Grid(**cfg["grid"])
    eos = EquationOfState(**cfg["eos"])
    fb = (BackgroundDeformation.default(grid.dim) if cfg["fbar"] is None
          else as_background(cfg["fbar"], grid.dim))
    ccfg = CompressibleConfig(cfl=cfg["cfl"], t_end=cfg["t_end"],
                              boundary_tolerance=cfg["boundary_tolerance"],
                              snapshot_stride=cfg["snapshot_stride"], clean_F=cfg["clean_F"])
    outputs, checks = [], {}
    try:
        if cfg["mode"] == "compressible":
            state0 = make_initial_data(cfg["prepared"], grid, eos, fb, cfg["eps"], cfg["seed"])
            probe = lambda w: energy_suite(w, eos, fb, grid)  # noqa: E731
            log.info("integrating compressible system, eps=%g, grid %s", cfg["eps"], grid.shape)
            traj = integrate(state0, ccfg, eos, fb, grid, probes=[probe])
            for k, s in enumerate(traj.states):
                outputs += write_snapshot(s, grid, out / "snapshots" / f"{k:05d}")
            reports = traj.series(0)
            outputs.append(write_reports_csv(reports, out / "energy.csv"))
            outputs.append(write_reports_jsonl(reports, out / "energy.jsonl"))
            walls = max((r.residuals["wall_traces"] for r in reports), default=0.0)
            checks["wall_traces"] = bool(walls <= cfg["boundary_tolerance"])
        else:
            istate, res = make_limit_data(cfg["prepared"], grid, eos, fb, cfg["seed"])
            log.info("integrating limit system, grid %s", grid.shape)
            traj = integrate_incompressible(istate, ccfg, fb, grid)
            names = ([f"u{i}" for i in ([1, 3] if grid.dim == 2 else [1, 2, 3])])
            for k, s in enumerate(traj.states):
                d = out / "snapshots" / f"{k:05d}"
                d.mkdir(parents=True, exist_ok=True)
                meta = dict(grid.to_dict(), t=float(s.t), eps=0.0)
                comps = list(zip(names, s.u)) + [("S", s.S), ("varrho", s.varrho)]
                comps += [(f"dpi{n[1:]}", g) for n, g in zip(names, s.pi_grad)]
                for name, arr in comps:
                    write_component(d / f"{name}.bin", arr, dict(meta, component=name))
                    outputs.append(d / f"{name}.bin")
            checks["w0_residuals"] = res
        checks["integration"] = True
        code = 0
    except (IntegrationError, HyperbolicityError, DomainError) as err:
        log.error("run aborted: %s", err)
        checks["integration"] = False
        checks["message"] = str(err)
        code = 1
    if code == 0 and not all(v for k, v in checks.items() if isinstance(v, bool)):
        code = 1
    write_manifest(out / "manifest.json", cfg, started, outputs, checks)
    return code


def _cmd_sweep(args):
    from .harness import SweepConfig, emit_reports, mach_sweep

    started = _now()
    cfg = parse_config(args.config, "sweep")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scfg = SweepConfig(eps_list=cfg["eps_list"], prepared=cfg["prepared"],
                       grid={k: v for k, v in cfg["grid"].items() if v is not None},
                       gamma=cfg["eos"]["gamma"], rho_floor=cfg["eos"]["rho_floor"],
                       fbar=cfg["fbar"], cfl=cfg["cfl"],
                       t_end=cfg["t_end"], T=cfg["T"], n_out=cfg["n_out"], seed=cfg["seed"],
                       locality=cfg["locality"])
    log.info("sweeping %d Mach numbers on %s", len(cfg["eps_list"]), scfg.make_grid().shape)
    result = mach_sweep(scfg, threads=_threads(args))
    paths = emit_reports(result, out)
    checks = {f"eps={r['eps']:g}": r["status"] == "ok" for r in result.runs}
    checks["limit"] = result.limit.get("status", "ok") == "ok"
    write_manifest(out / "manifest.json", cfg, started, paths, checks)
    for r in result.runs:
        if r["status"] != "ok":
            log.error("eps=%g failed: %s", r["eps"], r["message"])
    return 0 if all(checks.values()) else 1


def _cmd_verify(args):
    from .verify import CHECKS, run_all

    selected = None
    if args.only:
        try:
            selected = [int(x) for x in args.only.split(",")]
        except ValueError:
            raise ConfigError("--only expects comma-separated check numbers")
        bad = [n for n in selected if n not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check numbers {bad}")
    results = run_all(selected, threads=_threads(args), report=lambda r: print(r.line(), flush=True))
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} checks passed")
    return 0 if n_ok == len(results) else 1


def _cmd_mms(args):
    from .mms import convergence_study

    if args.refinements < 2:
        raise ConfigError("--refinements must be at least 2")
    ns = tuple(args.base * 2 ** k for k in range(args.refinements))
    ok = True
    for kind in ("compressible", "incompressible"):
        r = convergence_study(kind, ns, t_end=args.t_end)
        passed = 1.7 <= r["order"] <= 2.3
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {kind}: n={r['n']} errors="
              f"{['%.3e' % e for e in r['errors']]} order={r['order']:.3f}", flush=True)
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="machlimit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"machlimit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log", choices=("text", "json"), default="text",
                        help="log line format on stderr")
    common.add_argument("--threads", type=int, default=None,
                        help="parallel runs (overrides MACHLIMIT_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="integrate one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="machlimit_run")
    s = sub.add_parser("sweep", parents=[common], help="Mach-number sweep with reports")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    v = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    v.add_argument("--only", default=None, help="comma-separated check numbers")
    m = sub.add_parser("mms", parents=[common], help="manufactured-solution convergence")
    m.add_argument("--refinements", type=int, default=3)
    m.add_argument("--base", type=int, default=32)
    m.add_argument("--t-end", type=float, default=0.1)
    return p


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "mms": _cmd_mms}


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    setup_logging(args.log)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        log.error("%s", err)
        print(f"machlimit: configuration error: {err}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
