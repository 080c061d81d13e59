"""Acceptance criteria 1-13, one test each.

Every test records a single ``criterion N: PASS|FAIL`` line; the lines are
printed together at the end of the pytest run (see ``conftest.py``). Run
this file directly to execute only the acceptance suite.

Runtime limits are measured after a short warm-up call, so one-off numba
compilation is not charged to the criterion.
"""
import math
import subprocess
import sys
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from stokesmf.flows import LinearFlow, RegularizedStokeslet, ZeroFlow
from stokesmf.harness import ExperimentConfig, fit_rate, run_sweep
from stokesmf.kernels import stokeslet, stokeslet_grad
from stokesmf.kinetic import (
    InitialDensitySpec,
    evolve,
    explicit_mf_velocity,
    sample_initial,
    solve_velocity_field,
)
from stokesmf.particles import ActivityModel, SlenderFiber, Sphere, sigma0_apply
from stokesmf.simulation import SuspensionParams, SuspensionState, compute_velocities, simulate
from stokesmf.transport import Cloud, CostSpec, wasserstein_bottleneck, wasserstein_exact

import oracles

CENTER, FORCE, DELTA = (0.1, 0.0, -0.2), (2.0, 0.5, 0.0), 0.5


def report(number, title, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_state(n, seed, spread=3.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-spread, spread, size=(n, 3))
    R = rng.normal(size=(n, 3))
    return SuspensionState(X, R / np.linalg.norm(R, axis=1, keepdims=True))


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "stokesmf.cli", *args], capture_output=True, text=True, cwd=cwd)


def test_criterion_01_kernel_identities():
    rng = np.random.default_rng(101)
    stokeslet(rng.normal(size=(4, 3)))
    clock = time.perf_counter()
    x = rng.normal(size=(1000, 3)) * rng.uniform(0.2, 5.0, size=(1000, 1))
    G = stokeslet(x)
    sym_ok = np.array_equal(G, np.swapaxes(G, 1, 2))
    even_ok = np.array_equal(G, stokeslet(-x))
    # powers of two scale without rounding; other factors agree to a few ulps
    hom_exact = all(np.array_equal(stokeslet(s * x), G / s) for s in (0.5, 2.0, 8.0))
    hom_round = max(np.abs(stokeslet(s * x) * s - G).max() / np.abs(G).max() for s in (0.3, 1.7, 3.1))
    h = 1e-5
    div = np.zeros((1000, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        div += (stokeslet(x + d)[:, k, :] - stokeslet(x - d)[:, k, :]) / (2 * h)
    scale = np.abs(stokeslet_grad(x)).max(axis=(1, 2, 3))
    div_rel = float((np.abs(div).max(axis=1) / scale).max())
    elapsed = time.perf_counter() - clock
    ok = sym_ok and even_ok and hom_exact and hom_round < 1e-15 and div_rel < 1e-6 and elapsed < 1.0
    report(1, "kernel identities", ok,
           f"symmetry {sym_ok}, evenness {even_ok}, homogeneity exact {hom_exact} / {hom_round:.1e}, "
           f"max FD divergence {div_rel:.2e}, {elapsed:.2f} s")


def test_criterion_02_sphere_rotation_period():
    p = SuspensionParams(n=1, volume_fraction=1e-4, shape=Sphere())
    s = SuspensionState([[0.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    flow = LinearFlow.simple_shear(1.0)
    simulate(s, p, flow, "first", 1e-3, 4)
    dt = 1e-3
    n_steps = int(1.01 * 4 * math.pi / dt)
    clock = time.perf_counter()
    _, snaps = simulate(s, p, flow, "first", dt, n_steps, record_every=1)
    R = np.array([st.R[0] for st in snaps])
    t = np.array([st.t for st in snaps])
    phi = np.unwrap(np.arctan2(R[:, 1], R[:, 0]))
    turned = np.abs(phi - phi[0])
    j = int(np.argmax(turned >= 2 * math.pi))
    period = t[j - 1] + (2 * math.pi - turned[j - 1]) * (t[j] - t[j - 1]) / (turned[j] - turned[j - 1])
    elapsed = time.perf_counter() - clock
    rel = abs(period - 4 * math.pi) / (4 * math.pi)
    ok = j > 0 and rel < 1e-3 and elapsed < 1.0
    report(2, "sphere rotation period", ok, f"period {period:.9f} vs 4 pi, rel error {rel:.1e}, {elapsed:.2f} s")


def test_criterion_03_jeffery_orbit():
    B = 0.8
    p = SuspensionParams(n=1, volume_fraction=1e-4, shape=SlenderFiber(alpha1=1.0, alpha2=B))
    r0 = np.array([0.3, 0.8, 0.5])
    r0 /= np.linalg.norm(r0)
    s = SuspensionState([[0.0, 0.0, 0.0]], [r0])
    flow = LinearFlow.simple_shear(1.0)
    simulate(s, p, flow, "first", 1e-2, 4)
    T = oracles.jeffery_period(B, 1.0)
    n_steps = 2000
    clock = time.perf_counter()
    _, snaps = simulate(s, p, flow, "first", T / n_steps, n_steps, record_every=1)
    elapsed = time.perf_counter() - clock
    t = np.array([st.t for st in snaps])
    R = np.array([st.R[0] for st in snaps])
    err = float(np.abs(R - oracles.jeffery_orientation(r0, B, 1.0, t)).max())
    ok = err < 1e-4 and elapsed < 5.0
    report(3, "Jeffery orbit", ok, f"sup error {err:.2e} over one period, {elapsed:.2f} s")


def test_criterion_04_einstein_coefficient():
    factor = oracles.einstein_factor()
    oracle_ok = abs(factor - 2.5) < 1e-3 * 2.5
    rng = np.random.default_rng(104)
    exact = True
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        E = 0.5 * (a + a.T)
        E -= np.trace(E) * np.eye(3) / 3
        r = rng.normal(size=3)
        exact &= np.array_equal(sigma0_apply(Sphere(), r / np.linalg.norm(r), E), 2.5 * E)
    report(4, "Einstein coefficient", oracle_ok and exact,
           f"energy quadrature gives {factor:.6f}, implementation equals 5/2 exactly: {exact}")


def _correction_pairs(state, flow, buoyancy):
    out = []
    for lam in (0.04, 0.02):
        p = SuspensionParams(n=state.n, volume_fraction=lam, buoyancy=buoyancy,
                             shape=SlenderFiber(1.0, 0.8), activity=ActivityModel(kappa0=0.0))
        V1, _ = compute_velocities(state, p, flow, "first")
        V0, _ = compute_velocities(state, p, flow, "zero")
        out.append((V1, V1 - V0))
    return out


def test_criterion_05_lambda_linearity():
    s = random_state(32, 105)
    # sedimenting fibers, no background: the difference is the whole velocity
    (_, d1), (_, d2) = _correction_pairs(s, ZeroFlow(), (0.2, 0.0, 0.9))
    rel = float(np.abs(d1 - 2.0 * d2).max() / np.abs(d1).max())
    # with a background flow V - V0 is a cancellation, so rounding is set by |V|
    flow = RegularizedStokeslet(center=CENTER, force=FORCE, delta=0.8)
    (V1, f1), (_, f2) = _correction_pairs(s, flow, (0.2, 0.0, 0.9))
    rel_v = float(np.abs(f1 - 2.0 * f2).max() / np.abs(V1).max())
    rel_d = float(np.abs(f1 - 2.0 * f2).max() / np.abs(f1).max())
    ok = rel <= 1e-14 and rel_v <= 1e-14
    report(5, "volume-fraction linearity", ok,
           f"defect {rel:.1e} of the difference without background; with background {rel_v:.1e} of |V| "
           f"({rel_d:.1e} of the difference, |V|/|dV| = {np.abs(V1).max() / np.abs(f1).max():.0f})")


def test_criterion_06_beta_oddity():
    s = random_state(32, 106)
    ens = sample_initial(InitialDensitySpec(), 512, seed=106)
    probe = np.random.default_rng(6).normal(size=(50, 3))
    V, U, Usrc = [], [], []
    for beta in (1.3, -1.3):
        act = ActivityModel(kappa0=0.8, beta_f=beta, alpha_f=0.0)
        p = SuspensionParams(n=32, volume_fraction=0.05, activity=act, shape=SlenderFiber(1.0, 0.8))
        V.append(compute_velocities(s, p, ZeroFlow(), "first")[0])
        vf = solve_velocity_field(ens, p, ZeroFlow())
        U.append(vf(probe))
        Usrc.append(vf.at_sources[0])
    nonzero = bool(np.any(V[0]) and np.any(U[0]))
    particle_ok = np.array_equal(V[1], -V[0])
    doi_ok = np.array_equal(U[1], -U[0]) and np.array_equal(Usrc[1], -Usrc[0])
    report(6, "active stresslet oddity", nonzero and particle_ok and doi_ok,
           f"particle velocities negate exactly: {particle_ok}, Doi field negates exactly: {doi_ok}")


def test_criterion_07_mass_conservation():
    ens = sample_initial(InitialDensitySpec(), 256, seed=107)
    p = SuspensionParams(n=256, volume_fraction=0.02, buoyancy=(0.0, 0.0, 0.5), shape=SlenderFiber(1.0, 0.8))
    clouds = evolve(ens, p, RegularizedStokeslet(center=CENTER, force=FORCE, delta=DELTA), 0.01, 500)
    m0 = ens.total_weight
    drift = max(abs(c.total_weight - m0) for c in clouds)
    same = all(np.array_equal(c.w, ens.w) for c in clouds)
    ok = len(clouds) == 501 and drift == 0.0 and same
    report(7, "mass conservation", ok, f"{len(clouds) - 1} steps, max total-weight change {drift:.1e}, weights identical {same}")


def test_criterion_08_lambda_zero_reduction():
    p = SuspensionParams(n=1, volume_fraction=0.0, shape=SlenderFiber(1.0, 0.8))
    ens = sample_initial(InitialDensitySpec(), 32, seed=108)
    flow = RegularizedStokeslet(center=CENTER, force=FORCE, delta=DELTA)
    clouds = evolve(ens, p, flow, 0.01, 100, record_every=25)
    times = [c.t for c in clouds]
    err = 0.0
    for i in range(ens.size):
        xs, rs = oracles.passive_characteristic(ens.x[i], ens.r[i], CENTER, FORCE, DELTA, 0.8, times[-1], times=times)
        for j, c in enumerate(clouds):
            err = max(err, np.abs(c.x[i] - xs[j]).max(), np.abs(c.r[i] - rs[j]).max())
    report(8, "zero volume fraction reduction", err < 1e-10,
           f"max deviation from DOP853 characteristics {err:.1e} at t = {', '.join(f'{t:g}' for t in times)}")


def test_criterion_09_transport_exactness():
    rng = np.random.default_rng(109)
    worst = 0.0
    for trial in range(200):
        n = 1 + trial % 7
        a, b = Cloud(rng.normal(size=(n, 3))), Cloud(rng.normal(size=(n, 3)))
        for p in (1.0, 2.0):
            worst = max(worst, abs(wasserstein_exact(a, b, CostSpec(p=p)).value - oracles.brute_force_wp(a.x, b.x, p)))
        worst = max(worst, abs(wasserstein_bottleneck(a, b).value - oracles.brute_force_bottleneck(a.x, b.x)))
    report(9, "transport exactness", worst < 1e-12, f"200 instances, max deviation from enumeration {worst:.1e}")


def test_criterion_10_doi_explicit_gap():
    cfg = ExperimentConfig()
    ens = sample_initial(InitialDensitySpec(), cfg.kinetic.k, seed=110)
    flow = RegularizedStokeslet(center=cfg.flow.center, force=cfg.flow.force, delta=cfg.flow.delta)
    solve_velocity_field(sample_initial(InitialDensitySpec(), 8, seed=0),
                         SuspensionParams(n=8, volume_fraction=0.01), flow)
    lams = (0.01, 0.02, 0.04, 0.08)
    gaps = []
    clock = time.perf_counter()
    for lam in lams:
        p = SuspensionParams(n=ens.size, volume_fraction=lam, shape=Sphere())
        u_doi = solve_velocity_field(ens, p, flow).at_sources[0]
        u_exp = explicit_mf_velocity(ens, p, flow)(ens.x)
        gaps.append(float(np.linalg.norm(u_doi - u_exp, axis=1).max()))
    elapsed = time.perf_counter() - clock
    slope = fit_rate(lams, gaps).slope
    ok = abs(slope - 2.0) <= 0.3 and elapsed < 120.0
    report(10, "Doi vs explicit gap", ok,
           f"gaps {', '.join(f'{g:.3e}' for g in gaps)}, slope {slope:.3f}, {elapsed:.1f} s")


def test_criterion_11_particle_kinetic_trend():
    cfg = ExperimentConfig()
    for key, value in (("orders", ("first",)), ("modes", ("doi",)), ("metrics", ("W1",)), ("resamples", 8)):
        cfg = cfg.with_value("compare", key, value)
    cfg = cfg.with_value("sweep", "values", (64.0, 128.0, 256.0, 512.0))
    s = cfg.suspension
    assert (s.shape, s.volume_fraction, s.buoyancy, s.kappa0) == ("sphere", 0.02, (0.0, 0.0, 0.0), 0.0)
    assert (cfg.time.t_end, cfg.kinetic.k, cfg.sweep.parameter) == (0.5, 4096, "n")
    clock = time.perf_counter()
    rep = run_sweep(cfg)
    elapsed = time.perf_counter() - clock
    ok_points = all(pt.status == "ok" for pt in rep.points)
    w = [pt.report.summary["final"]["W1/first/doi"] for pt in rep.points] if ok_points else []
    decreasing = ok_points and all(b < a for a, b in zip(w, w[1:]))
    slope = rep.fit.slope if rep.fit else float("nan")
    ok = decreasing and -0.6 <= slope <= -0.1 and elapsed < 600.0
    report(11, "particle-kinetic W1 trend in N", ok,
           f"W1 {', '.join(f'{v:.4f}' for v in w)}, slope {slope:.3f}, {elapsed:.0f} s")


def test_criterion_12_separation_guard(tmp_path):
    (tmp_path / "near.csv").write_text("n,x,y,z,rx,ry,rz\n0,0,0,0,0,0,1\n1,0.01,0,0,0,0,1\n")
    (tmp_path / "near.ini").write_text(
        "[suspension]\nn = 2\nvolume_fraction = 0.01\n[initial]\nstate_csv = near.csv\n[time]\nt_end = 0.1\ndt = 0.05\n"
    )
    res = run_cli("simulate", "--config", str(tmp_path / "near.ini"), "--out", str(tmp_path / "out"))
    ok = res.returncode == 3 and "separation guard" in res.stderr
    report(12, "separation guard", ok, f"exit code {res.returncode}: {res.stderr.strip().splitlines()[-1]}")


def test_criterion_13_determinism(tmp_path):
    (tmp_path / "c.ini").write_text(
        "[scenario]\nseed = 1234\n[suspension]\nn = 48\nvolume_fraction = 0.03\nbuoyancy = 0, 0, 0.5\n"
        "shape = slender\nalpha2 = 0.8\n[kinetic]\nk = 384\n[compare]\nresamples = 3\n"
        "[time]\nt_end = 0.2\ndt = 0.05\n"
    )
    outs = []
    for tag, threads in (("a", "1"), ("b", "2"), ("c", "2")):
        res = run_cli("compare", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / tag), "--threads", threads)
        assert res.returncode == 0, res.stderr
        outs.append((tmp_path / tag / "compare.csv").read_bytes())
    rows = outs[0].count(b"\n") - 1
    ok = rows == 5 * 2 * 2 * 2 and outs[0] == outs[1] == outs[2]
    report(13, "determinism", ok, f"{rows} CSV rows, byte-identical across runs and --threads 1/2: {outs[0] == outs[1] == outs[2]}")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
