"""Acceptance checks, one per criterion.

Each check prints a single ``criterion N: PASS|FAIL ...`` line. Run with
``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""

import os
import sys
import tempfile
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import oracles  # noqa: E402
from mhdlab.builtins import make_builtin  # noqa: E402
from mhdlab.cli import run_cli  # noqa: E402
from mhdlab.config import RunConfig  # noqa: E402
from mhdlab.drivers import initial_state, limit_sweep  # noqa: E402
from mhdlab.dynamics import (EosParams, History, SimState, cfl_dt, residual_wave,  # noqa: E402
                             run, _geom, _l2)
from mhdlab.energies import (higher_energy, integrated_dissipation_residual,  # noqa: E402
                             physical_energy, rt_margin)
from mhdlab.errors import IntegrityError  # noqa: E402
from mhdlab.geometry import FlowMapState, compute_geometry  # noqa: E402
from mhdlab.initial_data import construct_compatible  # noqa: E402
from mhdlab.mesh import build_ball_mesh  # noqa: E402
from mhdlab.reports import fit_slope  # noqa: E402
from mhdlab.snapshot import decode, encode, read_snapshot, write_snapshot  # noqa: E402
from mhdlab.verification import IDENTITIES, commutator_residual, make_case  # noqa: E402

KAPPAS = (1e2, 1e3, 1e4)


def _emit(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


# 1 --------------------------------------------------------------------------------
def criterion_1():
    t0 = time.time()
    cfg = RunConfig(nx=48, lam=0.0, tmax=0.2)
    st, _, _, _ = initial_state(cfg)
    params = EosParams(cfg.kappa, 0.0)
    dt = cfl_dt(st, params)
    drift = []
    for f in (1.0, 0.5):
        h = run(st, params, cfg.tmax, n_out=4, dt=dt * f)
        E = h.monitors["energy"]
        drift.append(abs(E[-1] - E[0]) / max(E[0], 1e-12))
    elapsed = time.time() - t0
    ratio = drift[0] / drift[1]
    ok = drift[0] <= 1e-6 and ratio >= 8 and elapsed < 60
    return ok, f"drift={drift[0]:.3e} drift(dt/2)={drift[1]:.3e} ratio={ratio:.1f} runtime={elapsed:.1f}s"


# 2 --------------------------------------------------------------------------------
def criterion_2():
    params = EosParams(100.0, 0.1)
    fine, _, _, _ = initial_state(RunConfig(nx=48, lam=0.1))
    dt = cfl_dt(fine, params)
    res = []
    for nx, step in ((25, 2 * dt), (48, dt)):
        st, _, _, _ = initial_state(RunConfig(nx=nx, lam=0.1))
        h = run(st, params, 0.1, dt=step, out_every=2)
        r, E0 = integrated_dissipation_residual(h)
        res.append(r / E0)
    order = float(np.log2(res[0] / res[1]))
    # RK4 in time; the residual should fall at (close to) fourth order
    ok = res[1] <= 1e-3 and res[0] <= 1e-3 and order >= 3.5
    return ok, f"residual={res[0]:.3e} refined={res[1]:.3e} observed_order={order:.2f}"


# 3 --------------------------------------------------------------------------------
def criterion_3():
    params = EosParams(100.0, 0.0)
    out = []
    for nx in (25, 48):
        st, _, _, _ = initial_state(RunConfig(nx=nx))
        h = run(st, params, 0.1, monitor_set=("divB",), n_out=10)
        d = h.monitors["divB"]
        out.append((d[0], float(np.max(d)), st.mesh))
    (d0c, mc, meshc), (d0f, mf, meshf) = out
    hc = 1.0 / (meshc.K * meshc.p)
    C = max(0.0, mc - 10 * d0c) / hc**4
    hf = hc / 2
    ratio = mc / mf
    ok = mc <= 10 * d0c + C * hc**4 and mf <= 10 * d0f + C * hf**4 and ratio >= 8
    return ok, (f"max_divB={mc:.3e} (divB0={d0c:.3e}) refined max={mf:.3e} (divB0={d0f:.3e}) "
                f"C={C:.3e} reduction={ratio:.1f}")


# 4 --------------------------------------------------------------------------------
def criterion_4():
    exact_mesh = build_ball_mesh(2, 6, 4)
    smooth_mesh = build_ball_mesh(2, 4, 8)
    worst_exact, worst_slope = 0.0, np.inf
    for ident in IDENTITIES:
        top = 2 if ident == "dtk_laplace" else 3
        for order in range(1, top + 1):
            r = commutator_residual(make_case(ident, order, exact_mesh, "polynomial"))
            worst_exact = max(worst_exact, r["max_residual"])
            cases = [make_case(ident, order, smooth_mesh, "smooth", dt=0.4 / 2**j) for j in range(3)]
            worst_slope = min(worst_slope, commutator_residual(cases[0], cases[1:])["slope"])
    ok = worst_exact <= 1e-10 and worst_slope >= 3
    return ok, f"max_exact_residual={worst_exact:.3e} min_smooth_order={worst_slope:.2f}"


# 5 --------------------------------------------------------------------------------
def criterion_5():
    params = EosParams(100.0, 0.0)
    st, _, _, _ = initial_state(RunConfig(nx=25))
    dt0 = cfl_dt(st, params)
    norms = []
    for nx, dt in ((25, dt0), (48, dt0 / 2)):
        st, _, _, _ = initial_state(RunConfig(nx=nx))
        h = run(st, params, 8 * dt, dt=dt, out_every=1)
        s = h.snapshots[4]
        norms.append(_l2(_geom(s), residual_wave(h, s.t)))
    ratio = norms[0] / norms[1]
    return ratio >= 4, f"residual={norms[0]:.3e} refined={norms[1]:.3e} reduction={ratio:.2f}"


# 6 --------------------------------------------------------------------------------
def criterion_6():
    mesh = build_ball_mesh(2, 4, 4)  # 48 nodes across
    v0, B0 = make_builtin("solenoidal-random", mesh)
    cache = compute_geometry(FlowMapState(mesh, mesh.y.copy()), distance=False)
    worst, diffs = 0.0, []
    for kappa in KAPPAS:
        data = construct_compatible(v0, B0, kappa, 2, cache=cache, lam=1.0)
        worst = max(worst, max(max(v["p"], v["B"]) for v in data.trace_residuals.values()))
        diffs.append(_l2(cache, data.u0 - v0))
    slope = fit_slope(KAPPAS, diffs)
    ok = worst <= 1e-8 and abs(slope + 1) <= 0.15
    return ok, f"max_trace={worst:.3e} slope={slope:.3f} diffs={', '.join(f'{d:.3e}' for d in diffs)}"


# 7 --------------------------------------------------------------------------------
def criterion_7():
    cfg = RunConfig(nx=37, lam=0.1, tmax=0.1, n_out=4)
    rows = limit_sweep(cfg, KAPPAS)
    uv = [r[1] for r in rows]
    hq = [r[5] for r in rows]
    dec = all(a > b for a, b in zip(uv, uv[1:]))
    quarter = uv[-1] <= 0.25 * uv[0]
    rho_ok = all(r[2] <= r[4] for r in rows)
    hq_dec = all(a > b for a, b in zip(hq, hq[1:]))
    ok = dec and quarter and rho_ok and hq_dec
    return ok, (f"u-v={', '.join(f'{v:.3e}' for v in uv)} rho_bound={rho_ok} "
                f"h-q={', '.join(f'{v:.3e}' for v in hq)}")


# 8 --------------------------------------------------------------------------------
T_SMALL = 0.03


def criterion_8():
    cfg = RunConfig(nx=37, lam=1.0, kappa=100.0, source="strain", b=0.5, compatible=True)
    st, _, _, _ = initial_state(cfg)
    eps0 = rt_margin(st)["eps0"]
    params = EosParams(cfg.kappa, cfg.lam)
    h = run(st, params, T_SMALL, monitor_set=("rt_margin",), n_out=12)
    marg = h.monitors["rt_margin"]
    # E_1 needs a centred five-point window in time
    E = [higher_energy(h, h.snapshots[i].t, 1, with_apriori=False).E_r for i in range(2, len(h) - 2)]
    growth = max(E) / E[0]
    ok = eps0 > 0 and float(np.min(marg)) >= eps0 / 2 and growth <= 10
    return ok, (f"eps0={eps0:.4f} min_margin={np.min(marg):.4f} T_small={T_SMALL} "
                f"E1_growth={growth:.4f}")


# 9 --------------------------------------------------------------------------------
def criterion_9():
    A = oracles.A_ELLIPSE
    errs = {}
    # metric, Jacobian, normal and distance on an affine ellipse
    mesh = build_ball_mesh(2, 4, 8)
    x = A @ mesh.y
    c = compute_geometry(FlowMapState(mesh, x))
    g, J, _, _ = oracles.ellipse_geometry(A, mesh.y)
    errs["g"] = float(np.max(np.abs(c.g - g[:, :, None])) / np.max(np.abs(g)))
    errs["J"] = float(np.max(np.abs(c.J - J)) / J)
    b = mesh.bnodes
    _, _, N, _ = oracles.ellipse_geometry(A, mesh.y[:, b])
    errs["N"] = float(np.max(np.abs(c.N[:, b] - N)))
    ii = np.flatnonzero(~mesh.bmask)
    dist = oracles.ellipse_distance(A, x[:, ii])
    errs["dist"] = float(np.max(np.abs(c.dist[ii] - dist)) / np.max(dist))
    # mean curvature needs the finer boundary resolution
    mesh12 = build_ball_mesh(2, 4, 12)
    c12 = compute_geometry(FlowMapState(mesh12, A @ mesh12.y), distance=False)
    b12 = mesh12.bnodes
    _, _, _, sig = oracles.ellipse_geometry(A, mesh12.y[:, b12])
    errs["sigma"] = float(np.max(np.abs(c12.sigma[b12] - sig)) / np.max(sig))
    # physical energy on the ellipse
    kappa = 50.0
    p, u, B = oracles.fields(mesh.y, 0.3)
    E = physical_energy(SimState(mesh, x, u, B, p, 0.3), EosParams(kappa))
    Eo = oracles.physical_energy_oracle(A, kappa)
    errs["E_phys"] = abs(E - Eo) / abs(Eo)
    # E_1 on prescribed snapshots of the unit disk
    hstep, lam = 0.05, 0.5
    snaps = []
    for j in range(9):
        p, u, B = oracles.fields(mesh.y, j * hstep)
        snaps.append(SimState(mesh, mesh.y.copy(), u, B, p, j * hstep))
    rep = higher_energy(History(snaps, hstep, EosParams(kappa, lam)), 0.2, 1, with_apriori=False)
    c0 = compute_geometry(FlowMapState(mesh, mesh.y.copy()))
    o = oracles.e1_oracle(mesh.y, c0.V, 0.2, kappa, lam)
    errs["E_1"] = abs(rep.E_r - o["E_1"]) / abs(o["E_1"])
    worst = max(errs.values())
    return worst <= 1e-8, " ".join(f"{k}={v:.2e}" for k, v in errs.items())


# 10 -------------------------------------------------------------------------------
def criterion_10():
    texts = []
    with tempfile.TemporaryDirectory() as tmp:
        cfgp = os.path.join(tmp, "run.cfg")
        with open(cfgp, "w") as fh:
            fh.write("nx = 25\ntmax = 0.01\nn_out = 4\nseed = 3\nlambda = 0.1\nmonitors = energy divB\n")
        for k in range(2):
            out = os.path.join(tmp, f"out{k}")
            rc = run_cli(["simulate", "--config", cfgp, "--out", out])
            with open(os.path.join(out, "energy.csv"), "rb") as fh:
                texts.append((rc, fh.read()))
        same_csv = texts[0] == texts[1] and texts[0][0] == 0
        path = os.path.join(tmp, "out0", "snapshots", "snap_00004.mhdl")
        with open(path, "rb") as fh:
            raw = fh.read()
        snap = read_snapshot(path)
        again = os.path.join(tmp, "again.mhdl")
        write_snapshot(snap.state, again, kappa=snap.kappa, lam=snap.lam)
        with open(again, "rb") as fh:
            round_trip = fh.read() == raw
        bad = bytearray(raw)
        bad[len(bad) // 2] ^= 0x01
        try:
            decode(bytes(bad))
            crc_caught = False
        except IntegrityError:
            crc_caught = True
        round_trip = round_trip and encode(snap.state, snap.kappa, snap.lam) == raw
    ok = same_csv and round_trip and crc_caught
    return ok, f"csv_identical={same_csv} snapshot_bit_identical={round_trip} crc_detects_flip={crc_caught}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n):
    ok, detail = CRITERIA[n - 1]()
    assert _emit(n, ok, detail), detail


if __name__ == "__main__":
    bad = 0
    for n, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        bad += not _emit(n, ok, detail)
    sys.exit(1 if bad else 0)
