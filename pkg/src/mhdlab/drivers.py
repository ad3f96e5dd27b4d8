"""Experiment drivers shared by the command line and the acceptance checks."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .builtins import make_builtin
from .dynamics import EosParams, SimState, run, run_incompressible
from .energies import enthalpy, fd_derivative, physical_energy
from .geometry import FlowMapState, compute_geometry
from .initial_data import construct_compatible
from .mesh import build_ball_mesh, resolution_to_K
from .snapshot import read_snapshot, write_snapshot

log = logging.getLogger(__name__)

SWEEP_HEADER = ["kappa", "u_minus_v_L2", "rho_minus_1_max", "p_max", "rho_bound",
                "h_minus_q_L2", "dtu_minus_dtv_L2", "dt2u_minus_dt2v_L2", "u0_minus_v0_L2"]


def worker_count(n_tasks):
    cap = os.environ.get("MHDL_THREADS")
    cores = os.cpu_count() or 1
    n = cores if not cap else max(1, int(cap))
    return max(1, min(n, n_tasks))


def make_mesh(cfg):
    return build_ball_mesh(cfg.dim, resolution_to_K(cfg.nx, cfg.order), cfg.order)


def builtin_fields(cfg, mesh):
    return make_builtin(cfg.source, mesh, seed=cfg.seed, amplitude=cfg.amplitude, b=cfg.b)


def initial_state(cfg, mesh=None):
    """Starting state for a run: (state, v0, B0, compatible data or None)."""
    if cfg.source.endswith(".mhdl"):
        snap = read_snapshot(cfg.source)
        st = snap.state
        return st, st.u.copy(), st.B.copy(), None
    mesh = mesh or make_mesh(cfg)
    v0, B0 = builtin_fields(cfg, mesh)
    if cfg.compatible:
        data = construct_compatible(v0, B0, cfg.kappa, cfg.N_order, mesh=mesh, lam=cfg.lam or 1.0)
        return data.state(), v0, B0, data
    st = SimState(mesh, mesh.y.copy(), v0.copy(), B0.copy(), np.zeros(mesh.nnode))
    return st, v0, B0, None


def snapshot_paths(directory):
    names = sorted(n for n in os.listdir(directory) if n.endswith(".mhdl"))
    return [os.path.join(directory, n) for n in names]


def write_history(hist, directory):
    os.makedirs(directory, exist_ok=True)
    p = hist.params
    for i, st in enumerate(hist.snapshots):
        write_snapshot(st, os.path.join(directory, f"snap_{i:05d}.mhdl"), kappa=p.kappa, lam=p.lam)


def load_history(directory):
    from .dynamics import History
    snaps = [read_snapshot(f) for f in snapshot_paths(directory)]
    if len(snaps) < 2:
        raise ValueError(f"need at least two snapshots in {directory}")
    states = [s.state for s in snaps]
    ts = np.array([s.t for s in states])
    dts = np.diff(ts)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(1.0, abs(dts[0])):
        raise ValueError("snapshots are not uniformly spaced in time")
    params = EosParams(snaps[0].kappa, snaps[0].lam)
    return History(states, float(dts[0]), params)


def energy_rows(hist, monitor_names):
    rows = []
    for i, st in enumerate(hist.snapshots):
        row = [st.t]
        for name in monitor_names:
            row.append(float(hist.monitors[name][i]))
        rows.append(row)
    return rows


def _l2(cache, f):
    f = np.asarray(f, dtype=float)
    sq = f**2 if f.ndim == 1 else np.sum(f**2, axis=0)
    return float(np.sqrt(np.sum(cache.V * sq)))


def _end_derivs(snaps, dt, name):
    """First and second backward differences at the last snapshot."""
    vals = [getattr(s, name) for s in snaps[-3:]]
    offs = np.array([-2.0, -1.0, 0.0])
    return (fd_derivative(vals, dt, 1, offsets=offs), fd_derivative(vals, dt, 2, offsets=offs))


def limit_point(mesh, v0, B0, kappa, lam, T, ref, n_out=4, N_order=2):
    """One compressible run against the incompressible reference ``ref``.

    ``ref`` is (snapshots, interval) from :func:`run_incompressible`.
    """
    data = construct_compatible(v0, B0, kappa, N_order, mesh=mesh, lam=lam if lam > 0 else 1.0)
    params = EosParams(kappa, lam)
    hist = run(data.state(), params, T, monitor_set=("energy",), n_out=n_out)
    st = hist.snapshots[-1]
    inc, h_inc = ref
    vT = inc[-1]
    cache = compute_geometry(FlowMapState(mesh, st.x, st.t), distance=False)
    rho = params.rho(st.p)
    pmax = float(np.max(np.abs(st.p)))
    du1, du2 = _end_derivs(hist.snapshots, hist.interval, "u")
    dv1, dv2 = _end_derivs(inc, h_inc, "u")
    row = {
        "kappa": float(kappa),
        "u_minus_v_L2": _l2(cache, st.u - vT.u),
        "rho_minus_1_max": float(np.max(np.abs(rho - 1.0))),
        "p_max": pmax,
        "rho_bound": 2.0 * pmax / kappa,
        "h_minus_q_L2": _l2(cache, enthalpy(params, rho) - vT.p),
        "dtu_minus_dtv_L2": _l2(cache, du1 - dv1),
        "dt2u_minus_dt2v_L2": _l2(cache, du2 - dv2),
        "u0_minus_v0_L2": _l2(cache, data.u0 - v0),
    }
    return row, hist


def incompressible_reference(mesh, v0, B0, lam, T, n_out=4):
    st = SimState(mesh, mesh.y.copy(), v0.copy(), B0.copy(), np.zeros(mesh.nnode))
    snaps = run_incompressible(st, T, lam=lam, n_out=n_out)
    ts = np.array([s.t for s in snaps])
    return snaps, float(ts[-1] - ts[-2])


def _sweep_task(args):
    dim, K, p, source, seed, amplitude, b, kappa, lam, T, n_out, N_order, ref, outdir = args
    mesh = build_ball_mesh(dim, K, p)
    v0, B0 = make_builtin(source, mesh, seed=seed, amplitude=amplitude, b=b)
    row, hist = limit_point(mesh, v0, B0, kappa, lam, T, ref, n_out=n_out, N_order=N_order)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        write_snapshot(hist.snapshots[-1], os.path.join(outdir, "final.mhdl"), kappa=kappa, lam=lam)
    return row


def limit_sweep(cfg, kappas, outdir=None):
    """Rows of SWEEP_HEADER, one per kappa (in the given order)."""
    mesh = make_mesh(cfg)
    v0, B0 = builtin_fields(cfg, mesh)
    lam = cfg.lam
    ref = incompressible_reference(mesh, v0, B0, lam, cfg.tmax, n_out=cfg.n_out)
    if outdir:
        d = os.path.join(outdir, "incompressible")
        os.makedirs(d, exist_ok=True)
        write_snapshot(ref[0][-1], os.path.join(d, "final.mhdl"), kappa=float("inf"), lam=lam)
    K = resolution_to_K(cfg.nx, cfg.order)
    tasks = [(cfg.dim, K, cfg.order, cfg.source, cfg.seed, cfg.amplitude, cfg.b, float(k), lam,
              cfg.tmax, cfg.n_out, cfg.N_order, ref,
              os.path.join(outdir, f"kappa_{k:g}") if outdir else None) for k in kappas]
    nw = worker_count(len(tasks))
    if nw == 1:
        rows = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            rows = list(ex.map(_sweep_task, tasks))
    return [[r[c] for c in SWEEP_HEADER] for r in rows]


def energy_series(hist):
    return [physical_energy(s, hist.params) for s in hist.snapshots]
