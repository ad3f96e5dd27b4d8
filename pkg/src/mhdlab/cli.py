"""Command-line front end: ``mhdlab <subcommand> [flags]``.

Exit codes: 0 success, 1 malformed configuration or arguments, 2 numerical
failure (a diagnostic file is written to the output directory).
"""

import argparse
import logging
import os
import sys
import traceback

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, MHDLError
from .reports import emit_report, fit_slope

log = logging.getLogger("mhdlab")

SUBCOMMANDS = ("simulate", "init-data", "limit-sweep", "verify", "energies")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    ap = _Parser(prog="mhdlab", description="Free-boundary compressible MHD numerical lab.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--kappa", type=float, action="append", help="sound-speed parameter (repeatable)")
    ap.add_argument("--lambda", dest="lam", type=float, help="magnetic diffusivity")
    ap.add_argument("--nx", type=int, help="nodes across a diameter")
    ap.add_argument("--tmax", type=float, help="final time")
    ap.add_argument("--order", type=int, help="polynomial degree of the elements")
    ap.add_argument("--seed", type=int, help="random seed for builtin data")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.out is not None:
        over["out"] = args.out
    if args.kappa:
        over["kappa"] = args.kappa[0]
        over["kappas"] = list(args.kappa)
    for name in ("lam", "nx", "tmax", "order", "seed"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg.validate()


def cmd_simulate(cfg):
    from .drivers import energy_rows, initial_state, write_history
    from .dynamics import EosParams, run
    from .snapshot import write_snapshot
    state, _, _, data = initial_state(cfg)
    params = EosParams(cfg.kappa, cfg.lam)
    monitors = list(dict.fromkeys(["energy"] + list(cfg.monitors)))
    dt = cfg.dt if cfg.dt_policy == "fixed" else None
    hist = run(state, params, cfg.tmax, monitor_set=monitors, n_out=cfg.n_out, dt=dt)
    write_history(hist, os.path.join(cfg.out, "snapshots"))
    if data is not None:
        write_snapshot(data, os.path.join(cfg.out, "initial.mhdl"))
    header = ["t"] + ["E_phys" if m == "energy" else m for m in monitors]
    rows = energy_rows(hist, monitors)
    emit_report(rows, "csv", os.path.join(cfg.out, "energy.csv"), header=header)
    emit_report({"E_phys": (hist.times, hist.monitors["energy"])}, "svg",
                os.path.join(cfg.out, "energy.svg"), title="physical energy", xlabel="t",
                ylabel="E_phys")
    return 0


def cmd_init_data(cfg):
    from .drivers import builtin_fields, make_mesh
    from .initial_data import construct_compatible
    from .snapshot import write_snapshot
    mesh = make_mesh(cfg)
    v0, B0 = builtin_fields(cfg, mesh)
    data = construct_compatible(v0, B0, cfg.kappa, cfg.N_order, mesh=mesh, lam=cfg.lam or 1.0)
    write_snapshot(data, os.path.join(cfg.out, "initial.mhdl"))
    rows = [[j, v["p"], v["B"]] for j, v in sorted(data.trace_residuals.items())]
    emit_report(rows, "csv", os.path.join(cfg.out, "residuals.csv"), header=["j", "p_trace", "B_trace"])
    emit_report([[i + 1, r] for i, r in enumerate(data.log)], "csv",
                os.path.join(cfg.out, "iterations.csv"), header=["iteration", "relative_update"])
    return 0


def cmd_limit_sweep(cfg):
    from .drivers import SWEEP_HEADER, limit_sweep
    kappas = cfg.kappas or [1e2, 1e3, 1e4]
    rows = limit_sweep(cfg, kappas, outdir=cfg.out)
    emit_report(rows, "csv", os.path.join(cfg.out, "convergence.csv"), header=SWEEP_HEADER)
    k = [r[0] for r in rows]
    series = {name: (k, [r[SWEEP_HEADER.index(name)] for r in rows])
              for name in ("u_minus_v_L2", "rho_minus_1_max", "h_minus_q_L2")}
    emit_report(series, "svg", os.path.join(cfg.out, "convergence.svg"), title="incompressible limit",
                xlabel="kappa", ylabel="error", loglog=True, slope=fit_slope(*series["u_minus_v_L2"]))
    return 0


def cmd_verify(cfg):
    from .geometry import FlowMapState, compute_geometry
    from .mesh import build_ball_mesh
    from .verification import (IDENTITIES, commutator_residual, make_case, ratio_sweep)
    rows = []
    exact_mesh = build_ball_mesh(cfg.dim, 6, 4)
    smooth_mesh = build_ball_mesh(cfg.dim, 4, 8)
    for ident in IDENTITIES:
        top = 2 if ident == "dtk_laplace" else 3
        for order in range(1, top + 1):
            r = commutator_residual(make_case(ident, order, exact_mesh, "polynomial", seed=cfg.seed))
            rows.append([ident, order, "polynomial", r["max_residual"], ""])
            cases = [make_case(ident, order, smooth_mesh, "smooth", dt=0.4 / 2**j, seed=cfg.seed)
                     for j in range(3)]
            r = commutator_residual(cases[0], cases[1:])
            rows.append([ident, order, "smooth", r["max_residual"], r["slope"]])
    emit_report(rows, "csv", os.path.join(cfg.out, "identities.csv"),
                header=["identity", "order", "case", "max_residual", "slope"])
    from .drivers import make_mesh
    mesh = make_mesh(cfg)
    cache = compute_geometry(FlowMapState(mesh, mesh.y.copy()))
    irows = []
    for ineq in ("hodge", "elliptic_I", "elliptic_II", "tensor"):
        s = ratio_sweep(ineq, cache, n=20, seed=cfg.seed)
        irows.append([ineq, s["n"], s["max_ratio"]])
    emit_report(irows, "csv", os.path.join(cfg.out, "inequalities.csv"),
                header=["inequality", "samples", "max_ratio"])
    return 0


def cmd_energies(cfg):
    from .drivers import load_history
    from .energies import higher_energy
    src = cfg.source if os.path.isdir(cfg.source) else os.path.join(cfg.out, "snapshots")
    hist = load_history(src)
    rows = []
    orders = [r for r in cfg.energy_orders if r <= cfg.R_max]
    for r in orders:
        half = r + 1
        for i in range(half, len(hist) - half):
            rows.append(higher_energy(hist, hist.snapshots[i].t, r, R_max=cfg.R_max))
    by_r = {}
    for rep in rows:
        by_r.setdefault(rep.r, []).append(rep)
    for r in orders:
        reps = by_r.get(r, [])
        path = os.path.join(cfg.out, f"energies_r{r}.csv")
        hdr = reps[0].header() if reps else ["t", "r", "E_phys"]
        emit_report([rep.row() for rep in reps], "csv", path, header=hdr)
    return 0


COMMANDS = {"simulate": cmd_simulate, "init-data": cmd_init_data, "limit-sweep": cmd_limit_sweep,
            "verify": cmd_verify, "energies": cmd_energies}


def _diagnose(cfg_out, exc):
    os.makedirs(cfg_out, exist_ok=True)
    path = os.path.join(cfg_out, "diagnostic.txt")
    with open(path, "w") as fh:
        fh.write(f"{type(exc).__name__}: {exc}\n")
        for attr in ("history", "node", "value"):
            if getattr(exc, attr, None) is not None:
                fh.write(f"{attr}: {getattr(exc, attr)}\n")
        fh.write("\n" + "".join(traceback.format_exception(exc)))
    last = getattr(exc, "last_state", None)
    if last is not None and hasattr(last, "x"):
        try:
            np.savez(os.path.join(cfg_out, "diagnostic_state.npz"), x=last.x, u=last.u, B=last.B,
                     p=last.p, t=last.t)
        except (ValueError, OSError):
            pass
    return path


def run_cli(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"mhdlab: configuration error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    os.makedirs(cfg.out, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"mhdlab: configuration error: {exc}", file=sys.stderr)
        return 1
    except (MHDLError, FloatingPointError, np.linalg.LinAlgError) as exc:
        path = _diagnose(cfg.out, exc)
        print(f"mhdlab: numerical failure: {exc} (see {path})", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
