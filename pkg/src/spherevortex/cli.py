"""Command-line driver: ``spherevortex {grid-check,solve,sweep,pv,dynamics}``.

Parameters come from an optional JSON config file (``--config``) and are
overridden by flags.  Every output file starts with ``#`` lines carrying the
schema version and the resolved config.

Exit codes: 0 success, 1 numerical acceptance failure, 2 usage or config
error, 3 runtime abort (vortex collision, equator crossing).
"""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import pointvortex as pv
from .field import RearrangementClass, build_grid, read_field_csv, write_field_csv
from .green import GreenOperator
from .maximizer import (
    SWEEP_COLUMNS,
    MaximizerConfig,
    ascend,
    grid_for_epsilon,
    level_set_certificate,
    objective_is_monotone,
    sweep_row,
    sweep_summary,
)

SCHEMA_VERSION = 1
WORKERS_ENV = "SPHEREVORTEX_WORKERS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("spherevortex")


class UsageError(Exception):
    pass


class RunAbort(Exception):
    pass


# key -> (type, default, help); None defaults mean "derived" or "required"
SCHEMAS = {
    "grid-check": {
        "n_phi": (int, 128, "longitude cells"),
        "n_theta": (int, 64, "latitude bands"),
    },
    "solve": {
        "n_phi": (int, 128, "longitude cells"),
        "n_theta": (int, 64, "latitude bands"),
        "lam": (float, 1.0, "impulse multiplier lambda"),
        "kappa": (float, 1.0, "total circulation"),
        "epsilon": (float, 0.2, "patch cap radius"),
        "p": (float, 2.0, "Lebesgue exponent of the class bound"),
        "init": (str, "auto", "auto | predicted | x1,x2,x3"),
        "tol_area": (float, 1e-3, "relative area-change tolerance"),
        "tol_obj": (float, 1e-10, "relative objective-change tolerance"),
        "max_iter": (int, 500, "iteration cap"),
        "out": (str, "solve_out", "output directory"),
    },
    "sweep": {
        "lam": (float, 1.0, "impulse multiplier lambda"),
        "kappa": (float, 1.0, "total circulation"),
        "epsilons": (list, [0.4, 0.2, 0.1, 0.05], "strictly decreasing cap radii"),
        "n_phi": (int, None, "fixed grid (default: sized per epsilon)"),
        "n_theta": (int, None, "fixed grid (default: sized per epsilon)"),
        "p": (float, 2.0, "Lebesgue exponent of the class bound"),
        "tol_area": (float, 1e-3, "relative area-change tolerance"),
        "tol_obj": (float, 1e-10, "relative objective-change tolerance"),
        "max_iter": (int, 500, "iteration cap"),
        "out": (str, "sweep.csv", "output CSV"),
    },
    "pv": {
        "theta0": (float, math.pi / 6, "latitude of the odd pair"),
        "phi0": (float, 0.0, "initial longitude of the pair"),
        "kappa": (float, 1.0, "pair strength"),
        "omega": (float, 0.0, "frame rotation rate"),
        "positions": (list, None, "explicit positions [[x1,x2,x3], ...] instead of the pair"),
        "strengths": (list, None, "strengths matching positions"),
        "T": (float, None, "end time (default: one pair period)"),
        "dt": (float, None, "step (default: 1e-3 / lambda)"),
        "stride": (int, 100, "sample every stride steps"),
        "min_separation": (float, pv.ABORT_SEPARATION, "abort below this chord separation"),
        "out": (str, "trajectory.csv", "output CSV"),
    },
    "dynamics": {
        "field": (str, None, "field CSV written by solve (required)"),
        "lam": (float, 1.0, "impulse multiplier of the objective surrogate"),
        "T": (float, None, "end time (default: 10 / lam)"),
        "dt": (float, 0.025, "time step"),
        "delta": (float, None, "smoothing length (default: 2 cell diagonals)"),
        "regularize_image": (bool, True, "smooth the image term with the same delta"),
        "omega": (float, 0.0, "frame rotation rate"),
        "sample_every": (int, 10, "diagnostics every n steps"),
        "perturb_fraction": (float, 0.0, "fraction of particles displaced"),
        "perturb_distance": (float, 0.0, "geodesic displacement"),
        "seed": (int, 0, "seed for the displacement"),
        "out": (str, "diagnostics.csv", "output CSV"),
    },
}


def _coerce(key, typ, value):
    if value is None:
        return None
    try:
        if typ is list:
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else \
                    [float(s) for s in value.split(",")]
            if not isinstance(value, list):
                raise TypeError
            return value
        if typ is bool:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0"):
                    raise ValueError
                return low in ("true", "1")
            return bool(value)
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return typ(value)
    except (TypeError, ValueError, json.JSONDecodeError):
        raise UsageError(f"{key}: cannot interpret {value!r} as {typ.__name__}") from None


def resolve_config(cmd, file_cfg, overrides):
    """Defaults, then the config file, then flags.  Unknown keys are rejected."""
    schema = SCHEMAS[cmd]
    file_cfg = dict(file_cfg or {})
    version = file_cfg.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UsageError(f"unsupported schema_version {version!r}")
    unknown = sorted(set(file_cfg) - set(schema))
    if unknown:
        raise UsageError(f"unknown config key(s) for {cmd}: {', '.join(unknown)}")
    cfg = {k: spec[1] for k, spec in schema.items()}
    for source in (file_cfg, overrides):
        for k, v in source.items():
            if v is not None:
                cfg[k] = _coerce(k, schema[k][0], v)
    return cfg


def header_lines(cmd, cfg):
    return [
        f"schema_version={SCHEMA_VERSION}",
        f"spherevortex={__version__} command={cmd}",
        "config=" + json.dumps(cfg, sort_keys=True),
    ]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return ",".join(_fmt(v) for v in x)
    return str(x)


def write_report(path, cmd, cfg, items):
    with open(path, "w") as fh:
        for line in header_lines(cmd, cfg):
            fh.write(f"# {line}\n")
        for k, v in items.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def _workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# ----------------------------------------------------------------------------
# grid-check
# ----------------------------------------------------------------------------


def grid_tolerances(n_theta):
    """Oracle tolerances.

    Area and impulse quadrature are exact up to rounding.  The operator error
    was measured as 0.43 / n_theta^2 (8x4) to 0.56 / n_theta^2 (256x128); the
    table allows 0.8 / n_theta^2.
    """
    return {
        "area_rel": 1e-12,
        "impulse_rel": 1e-12,
        "operator_rel": 0.8 / n_theta ** 2,
        "symmetry_abs": 1e-10,
        "min_mode_eigenvalue": 0.0,
    }


def grid_check(n_phi, n_theta, seed=0):
    g = build_grid(n_phi, n_theta)
    gp = GreenOperator.build(g)
    x3 = g.x3
    w = g.weights
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, g.size))
    spec = gp.mode_spectrum()
    errs = {
        "area_rel": abs(w.sum() - 2.0 * np.pi) / (2.0 * np.pi),
        "impulse_rel": abs(w @ x3 - np.pi) / np.pi,
        "operator_rel": float(np.max(np.abs(gp.apply_values(2.0 * x3) - x3)) / np.max(x3)),
        "symmetry_abs": abs(u @ (w * gp.apply_values(v)) - v @ (w * gp.apply_values(u))),
        "min_mode_eigenvalue": float(spec.min()),
    }
    tol = grid_tolerances(n_theta)
    ok = {k: (errs[k] > tol[k]) if k == "min_mode_eigenvalue" else (errs[k] <= tol[k])
          for k in errs}
    return errs, tol, ok


def cmd_grid_check(cfg):
    errs, tol, ok = grid_check(cfg["n_phi"], cfg["n_theta"])
    print(f"# grid {cfg['n_phi']}x{cfg['n_theta']}")
    for k in errs:
        rel = ">" if k == "min_mode_eigenvalue" else "<="
        print(f"{k:22s} {errs[k]:.3e}  {rel} {tol[k]:.3e}  {'PASS' if ok[k] else 'FAIL'}")
    return EXIT_OK if all(ok.values()) else EXIT_FAIL


# ----------------------------------------------------------------------------
# solve / sweep
# ----------------------------------------------------------------------------


def _parse_init(text):
    if text in ("auto", "predicted"):
        return text
    try:
        x = np.array([float(s) for s in text.split(",")])
    except ValueError:
        raise UsageError(f"init must be auto, predicted or x1,x2,x3; got {text!r}") from None
    if x.shape != (3,):
        raise UsageError("init point needs three coordinates")
    return x / np.linalg.norm(x)


def _solve_one(n_phi, n_theta, lam, kappa, eps, p, init, tol_area, tol_obj, max_iter):
    grid = build_grid(n_phi, n_theta)
    gp = GreenOperator.build(grid)
    cls = RearrangementClass.patch(kappa, eps, p)
    mcfg = MaximizerConfig(lam=lam, cls=cls, init_center=init, tol_area=tol_area,
                           tol_obj=tol_obj, max_iter=max_iter, n_phi=n_phi, n_theta=n_theta)
    report = ascend(mcfg, gp)
    return report, cls, mcfg, gp


def cmd_solve(cfg):
    try:
        report, cls, mcfg, gp = _solve_one(
            cfg["n_phi"], cfg["n_theta"], cfg["lam"], cfg["kappa"], cfg["epsilon"], cfg["p"],
            _parse_init(cfg["init"]), cfg["tol_area"], cfg["tol_obj"], cfg["max_iter"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    items = report.to_dict()
    history = items.pop("objective_history")
    monotone = objective_is_monotone(history)
    cert = level_set_certificate(report, mcfg, gp)
    items.update({
        "epsilon": cls.epsilon,
        "kappa": cls.kappa,
        "gamma": cls.gamma,
        "objective_monotone": monotone,
        "level_set_certificate": cert,
        "level_set_certificate_cells": cert / gp.grid.max_cell_area,
        "weak_residuals": report.weak_residuals,
        "objective_history": history,
    })
    write_report(os.path.join(out, "report.txt"), "solve", cfg, items)
    write_field_csv(report.field, os.path.join(out, "field.csv"),
                    header_lines("solve", cfg))
    ok = report.converged and monotone and all(report.class_preserved)
    print(f"objective {float(report.objective)!r} x3_center {float(report.mass_center[2])!r} "
          f"iterations {report.iterations} converged {report.converged}")
    return EXIT_OK if ok else EXIT_FAIL


def _sweep_point(args):
    (n_phi, n_theta), lam, kappa, eps, p, tol_area, tol_obj, max_iter = args
    report, cls, _, _ = _solve_one(n_phi, n_theta, lam, kappa, eps, p, "auto",
                                   tol_area, tol_obj, max_iter)
    row = sweep_row(report, cls)
    row["n_phi"], row["n_theta"] = n_phi, n_theta
    row["monotone"] = objective_is_monotone(report.objective_history)
    row["class_preserved"] = bool(all(report.class_preserved))
    return row


def run_sweep(cfg, workers=1):
    eps = [float(e) for e in cfg["epsilons"]]
    if not eps or any(e <= 0 or e > math.pi / 2 for e in eps):
        raise UsageError("epsilons must lie in (0, pi/2]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise UsageError("epsilons must be strictly decreasing")
    if (cfg["n_phi"] is None) != (cfg["n_theta"] is None):
        raise UsageError("give both n_phi and n_theta or neither")
    jobs = []
    for e in eps:
        grid = (cfg["n_phi"], cfg["n_theta"]) if cfg["n_phi"] else grid_for_epsilon(e)
        jobs.append((grid, cfg["lam"], cfg["kappa"], e, cfg["p"], cfg["tol_area"],
                     cfg["tol_obj"], cfg["max_iter"]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))  # results come back in epsilon order
    else:
        rows = [_sweep_point(j) for j in jobs]
    return rows, sweep_summary(rows, cfg["lam"], cfg["kappa"])


SWEEP_CSV_COLUMNS = SWEEP_COLUMNS + ("n_phi", "n_theta", "monotone", "class_preserved")


def cmd_sweep(cfg):
    rows, summary = run_sweep(cfg, _workers())
    with open(cfg["out"], "w") as fh:
        for line in header_lines("sweep", cfg):
            fh.write(f"# {line}\n")
        fh.write(",".join(SWEEP_CSV_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in SWEEP_CSV_COLUMNS) + "\n")
        status = "checked" if summary["all_converged"] else "warning: non-converged points"
        fh.write(f"# summary ({status})\n")
        for k, v in summary.items():
            fh.write(f"# {k}={_fmt(v)}\n")
    checks = ("x3_gap_decreasing", "diameter_over_eps_trend_ok",
              "mu_normalized_trend_ok", "E_normalized_trend_ok")
    for k in checks:
        print(f"{k:28s} {'PASS' if summary[k] else 'FAIL'}")
    if not summary["all_converged"]:
        print("warning: some sweep points did not converge")
        return EXIT_FAIL
    return EXIT_OK if all(summary[k] for k in checks) else EXIT_FAIL


# ----------------------------------------------------------------------------
# pv / dynamics
# ----------------------------------------------------------------------------


def cmd_pv(cfg):
    try:
        if cfg["positions"] is not None:
            if cfg["strengths"] is None:
                raise UsageError("positions need matching strengths")
            config = pv.VortexConfiguration(cfg["positions"], cfg["strengths"], cfg["omega"])
            rate = None
        else:
            config = pv.explicit_pair(cfg["theta0"], cfg["phi0"], cfg["kappa"], cfg["omega"])
            rate = pv.pair_rate(cfg["theta0"], cfg["kappa"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    T, dt = cfg["T"], cfg["dt"]
    if T is None:
        if rate is None:
            raise UsageError("T is required for explicit positions")
        T = 2.0 * math.pi / abs(rate)
    if dt is None:
        if rate is None:
            raise UsageError("dt is required for explicit positions")
        dt = 1e-3 / abs(rate)
    try:
        traj = pv.integrate(config, T, dt, stride=cfg["stride"], min_sep=cfg["min_separation"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pv.write_trajectory_csv(traj, cfg["out"], header_lines("pv", cfg))
    r = traj.report
    print(f"hamiltonian_drift {r.hamiltonian_drift:.3e} moment_drift {r.moment_drift:.3e} "
          f"norm_drift {r.norm_drift:.3e}")
    if traj.aborted:
        raise RunAbort(traj.message)
    return EXIT_OK


def cmd_dynamics(cfg):
    if not cfg["field"]:
        raise UsageError("dynamics needs --field (a field CSV written by solve)")
    try:
        v = read_field_csv(cfg["field"])
    except OSError as exc:
        raise UsageError(f"cannot read field: {exc}") from None
    lam = cfg["lam"]
    T = cfg["T"] if cfg["T"] is not None else 10.0 / lam
    try:
        pf = dyn.discretize(v, cfg["delta"], cfg["omega"], cfg["regularize_image"])
        if cfg["perturb_fraction"] > 0:
            pf, _ = dyn.displace(pf, cfg["perturb_fraction"], cfg["perturb_distance"],
                                 cfg["seed"])
        result = dyn.evolve(pf, T, cfg["dt"], lam=lam, reference=v,
                            sample_every=cfg["sample_every"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result.meta["deposition_floor"] = dyn.deposition_floor(dyn.discretize(v, cfg["delta"]), v)
    dyn.write_diagnostics_csv(result, cfg["out"], header_lines("dynamics", cfg))
    print(f"particles {pf.n} objective_drift {dyn.drift(result):.3e} "
          f"max_orbit_distance {np.nanmax(result.column('orbit_distance')):.4g}")
    if result.aborted:
        raise RunAbort(result.message)
    return EXIT_OK


COMMANDS = {
    "grid-check": cmd_grid_check,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "pv": cmd_pv,
    "dynamics": cmd_dynamics,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="spherevortex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        for key, (typ, default, text) in schema.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=f"{text} (default: {default})")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        file_cfg = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    file_cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise UsageError("config file must hold a JSON object")
        overrides = {k: getattr(args, k) for k in SCHEMAS[args.command]}
        cfg = resolve_config(args.command, file_cfg, overrides)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"spherevortex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunAbort, pv.SingularityError, dyn.EquatorCrossing) as exc:
        print(f"spherevortex: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
