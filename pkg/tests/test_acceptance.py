"""The ten acceptance criteria, each at its stated tolerance and runtime limit.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import BASE, BASE_PERT, ORBIT_VORTEX, ORBIT_K, ORBIT_PERT, at_fraction
from vortex_topo.cli import main, run_command
from vortex_topo.field_core import (
    PerturbationParams,
    axis_offset,
    eval_total,
    fd_divergence,
    fd_jacobian,
    flux_representation_residual,
    nondimensionalize,
)
from vortex_topo.orbit import (
    OrbitConfig,
    boris_kick,
    crescent_metrics,
    make_initial_state,
    run_orbit,
    start_on_null_ray,
)
from vortex_topo.perturb_general import (
    PerturbationSpectrum,
    canonical_field,
    longwave_reduce,
    parity_split,
    reduce_spectrum,
    synthesize,
)
from vortex_topo.surface_mesh import classify_by_mesh
from vortex_topo.topology import (
    TopologyClass,
    alpha_critical,
    classify,
    critical_intersections,
    critical_set,
    f_function,
    linearize_at_critical,
    psi_maximum_check,
    separatrix_data,
    simply_connected_fraction,
)
from vortex_topo.tracer import LineStatus, closure_report, seed_for_psi, trace

pytestmark = pytest.mark.acceptance


def record(log, number, checks, detail, elapsed, limit):
    checks = dict(checks)
    if limit is not None:
        checks["runtime"] = elapsed < limit
    failed = [k for k, v in checks.items() if not v]
    line = f"{detail}; {elapsed:.2f} s" + (f" (limit {limit} s)" if limit is not None else "")
    if failed:
        line += f"; failed: {', '.join(failed)}"
    log.append((number, not failed, line))
    print(f"criterion {number}: {'PASS' if not failed else 'FAIL'}  {line}")
    assert not failed, line


def test_criterion_01_thresholds(acceptance_log):
    t0 = time.perf_counter()
    sep = separatrix_data(BASE, BASE_PERT)
    c1 = classify(0.165, BASE, BASE_PERT)
    c2 = classify(0.23, BASE, BASE_PERT)
    elapsed = time.perf_counter() - t0
    checks = {
        "psi_minus": abs(sep.psi_minus - 0.195) <= 0.001,
        "0.165 toroidal": c1 is TopologyClass.TOROIDAL,
        "0.23 simply connected": c2 is TopologyClass.SIMPLY_CONNECTED,
    }
    record(acceptance_log, 1, checks, f"psi_- = {sep.psi_minus:.6f} Wb, classes {c1}, {c2}", elapsed, 1.0)


def test_criterion_02_fractions(acceptance_log):
    t0 = time.perf_counter()
    out = []
    for q, target, at_target in ((0.2, 0.67, 0.11), (0.4, 0.90, 0.23)):
        pert = at_fraction(BASE, 0.25, q)
        frac = simply_connected_fraction(BASE, pert)
        at = pert.alpha * pert.k * BASE.r_s
        out.append((q, frac, at, abs(frac - target) <= 0.02, abs(at - at_target) <= 0.01))
    elapsed = time.perf_counter() - t0
    checks = {}
    for q, _, _, ok_f, ok_a in out:
        checks[f"fraction at {q} alpha_c"] = ok_f
        checks[f"alpha k r_s at {q} alpha_c"] = ok_a
    detail = ", ".join(f"{q} alpha_c: fraction {f:.4f}, alpha k r_s {a:.4f}" for q, f, a, _, _ in out)
    record(acceptance_log, 2, checks, detail, elapsed, 1.0)


def test_criterion_03_mesh_oracle(acceptance_log):
    t0 = time.perf_counter()
    total = agree = stable = 0
    per_alpha = {}
    for q in (0.1, 0.9):
        pert = at_fraction(BASE, 0.25, q)
        sep = separatrix_data(BASE, pert)
        psis = np.geomspace(0.02, 0.98, 24) * sep.psi_plus
        psis = psis[np.abs(psis - sep.psi_minus) > 0.02 * sep.psi_minus]
        per_alpha[q] = len(psis)
        for psi in psis:
            lo = classify_by_mesh(psi, BASE, pert, 128)
            hi = classify_by_mesh(psi, BASE, pert, 256)
            total += 1
            agree += lo.agrees
            stable += lo.chi is not None and lo.chi == hi.chi and hi.agrees
    elapsed = time.perf_counter() - t0
    checks = {
        "at least 20 samples per alpha": min(per_alpha.values()) >= 20,
        "agreement at 128": agree == total,
        "stable at 256": stable == total,
    }
    detail = f"{agree}/{total} agree at res 128, {stable}/{total} unchanged at 256 (samples per alpha {per_alpha})"
    record(acceptance_log, 3, checks, detail, elapsed, 300.0)


def test_criterion_04_field_identities(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-1, 1, size=(4000, 3))
    pts = pts[np.sum(pts**2, axis=1) < 0.95**2][:1000] * np.array([BASE.r_s, BASE.r_s, BASE.z_s])
    y0 = axis_offset(BASE, BASE_PERT)
    # the flux representation is singular on the shifted axis itself
    pts = pts[np.hypot(pts[:, 0], pts[:, 1] - y0) > 1e-2 * BASE.r_s]
    div = np.max(np.abs(fd_divergence(lambda q: eval_total(BASE, BASE_PERT, q), pts, 1e-6 * BASE.r_s)))
    rep = float(np.max(flux_representation_residual(BASE, BASE_PERT, pts)))
    crit = critical_set(BASE, BASE_PERT).all_points(256)
    null = float(np.max(np.linalg.norm(eval_total(BASE, BASE_PERT, crit), axis=-1)))
    elapsed = time.perf_counter() - t0
    checks = {
        "1000 points": len(pts) >= 1000 - 5,
        "divergence": div < 1e-6 * BASE.B0 / BASE.r_s,
        "flux representation": rep < 1e-5,
        "critical set null": null < 1e-12 * BASE.B0,
    }
    detail = (f"{len(pts)} points: max |div B| {div:.2e}, max rel |B - grad psi x grad phi| {rep:.2e}, "
              f"max |B| on {len(crit)} critical points {null:.2e}")
    record(acceptance_log, 4, checks, detail, elapsed, 10.0)


def test_criterion_05_closure_dichotomy(acceptance_log):
    t0 = time.perf_counter()
    sep = separatrix_data(BASE, BASE_PERT)
    fr = np.linspace(0.02, 0.98, 60)
    pos = fr * sep.psi_plus
    pos = pos[np.abs(pos - sep.psi_minus) > 0.02 * sep.psi_minus][:50]
    closed = 0
    worst_drift = 0.0
    for i, psi in enumerate(pos):
        # toroidal surfaces are seeded on both sides of the shifted axis; inner ones only exist towards y_-
        direction = math.pi if psi > sep.psi_minus or i % 2 else 0.0
        line = trace(seed_for_psi(psi, BASE, BASE_PERT, direction), BASE, BASE_PERT)
        rep = closure_report(line)
        worst_drift = max(worst_drift, line.psi_drift)
        closed += line.status is LineStatus.CLOSED and rep.closed and line.psi_drift < 1e-8
    neg = -np.geomspace(1e-3, 0.5, 20)
    escaped = 0
    for psi in neg:
        line = trace(seed_for_psi(psi, BASE, BASE_PERT), BASE, BASE_PERT)
        far = np.linalg.norm(line.points[-1]) > 10 * BASE.r_max
        escaped += line.status is LineStatus.OPEN and far
    elapsed = time.perf_counter() - t0
    checks = {"50 positive lines": len(pos) == 50, "all close": closed == len(pos), "all escape": escaped == 20}
    detail = f"{closed}/{len(pos)} closed (max psi drift {worst_drift:.1e}), {escaped}/20 escaped"
    record(acceptance_log, 5, checks, detail, elapsed, 120.0)


def test_criterion_06_linearization(acceptance_log):
    t0 = time.perf_counter()
    n = total = 0
    worst_re = worst_omega = 0.0
    for params in (BASE, ORBIT_VORTEX):
        k = 0.25 if params is BASE else ORBIT_K
        for q in (0.2, 0.5, 0.8):
            pert = at_fraction(params, k, q)
            dp = nondimensionalize(params, pert)
            sep = separatrix_data(params, pert)
            pts = [p for psi in np.linspace(sep.psi_minus, sep.psi_plus, 6)[1:-1]
                   for p in critical_intersections(psi, params, pert)]
            pts += list(critical_set(params, pert).circle_points(8))
            for p in pts:
                res = linearize_at_critical(p, params, pert)
                ev = np.sort_complex(res.eigenvalues)
                zero = ev[np.argmin(np.abs(ev))]
                worst_re = max(worst_re, float(np.max(np.abs(res.eigenvalues.real))))
                pair_ok = abs(zero) < 1e-10 and np.isclose(np.sum(res.eigenvalues).imag, 0.0, atol=1e-10)
                worst_omega = max(worst_omega, abs(res.omega**2 / (res.f_value / math.sqrt(dp.m)) - 1))
                n += pair_ok
                total += 1
    grid_ok = True
    for m in (1.0 / 9.0, 1.0, 9.0):
        atc = 1 / math.sqrt(m * (1 + 2 * m))
        for at in np.linspace(0, atc, 100, endpoint=False):
            c, R = -at / 4, math.sqrt(0.5 + at * at / 16)
            grid_ok &= bool(np.all(f_function(at, np.linspace(c - R, c + R, 100), m) > 0))
    elapsed = time.perf_counter() - t0
    checks = {"real parts": worst_re < 1e-10, "omega^2": worst_omega < 1e-8, "f > 0 on grid": grid_ok,
              "eigen structure": n == total}
    detail = f"{total} critical points: max |Re| {worst_re:.1e}, max rel omega^2 error {worst_omega:.1e}; f > 0 grid"
    record(acceptance_log, 6, checks, detail, elapsed, 10.0)


def test_criterion_07_psi_maximum(acceptance_log):
    t0 = time.perf_counter()
    res = psi_maximum_check(BASE, BASE_PERT, 1_000_000, seed=7)
    sep = separatrix_data(BASE, BASE_PERT)
    dist = float(np.linalg.norm(res.argmax - np.array([0.0, sep.y_minus, 0.0])))
    elapsed = time.perf_counter() - t0
    checks = {"no psi above psi_+": res.max_psi <= sep.psi_plus * (1 + 1e-9),
              "argmax near null": dist <= 3 * res.spacing}
    detail = (f"max psi / psi_+ = {res.max_psi / sep.psi_plus:.9f}, argmax {dist:.3e} m from (0, y_-, 0) "
              f"(spacing {res.spacing:.3e} m)")
    record(acceptance_log, 7, checks, detail, elapsed, 30.0)


def test_criterion_08_reduction(acceptance_log):
    t0 = time.perf_counter()
    ks = np.linspace(0.08, 0.1, 10) * BASE.r_s / BASE.r_max
    sp = PerturbationSpectrum.from_samples({1: [(k, 0.2 / 0.02) for k in ks]})
    red = longwave_reduce(parity_split(sp))
    sep = separatrix_data(BASE, red.effective)
    rng = np.random.default_rng(8)
    pts = rng.uniform(-1, 1, size=(1000, 3)) * np.array([BASE.r_s, BASE.r_s, BASE.z_s])
    pts = pts[sep.outer.contains(pts)][:100]
    a, b = synthesize(sp, BASE, pts), canonical_field(BASE, red, pts)
    rel = float(np.max(np.linalg.norm(a - b, axis=-1) / np.linalg.norm(b, axis=-1)))
    bound = (sp.k_max * BASE.r_max) ** 2
    worst_curl = worst_div = 0.0
    mixed = PerturbationSpectrum.from_samples({0: [(0.05, 0.02j), (0.1, -0.02j)],
                                               1: [(0.1, 0.2 + 0.05j), (0.3, -0.03 + 0.02j)], 2: [(0.4, 0.1)]})
    for spec in (sp, mixed):
        for p in pts[:40]:
            J = fd_jacobian(lambda q: synthesize(spec, BASE, q), p, 1e-5)
            scale = np.max(np.abs(J))
            curl = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
            worst_curl = max(worst_curl, float(np.max(np.abs(curl)) / scale))
            worst_div = max(worst_div, abs(float(np.trace(J))) / scale)
    flagged = not reduce_spectrum(mixed, BASE).split.closure_preserving
    elapsed = time.perf_counter() - t0
    checks = {
        "k_max r_max = 0.1": abs(sp.k_max * BASE.r_max - 0.1) < 1e-12,
        "100 interior points": len(pts) == 100,
        "pointwise match": rel < bound,
        "curl": worst_curl < 1e-6,
        "divergence": worst_div < 1e-6,
        "even parity flagged": flagged,
    }
    detail = (f"max rel diff {rel:.2e} < {bound:.2e}; curl {worst_curl:.1e}, div {worst_div:.1e} (relative); "
              f"even parity flagged: {flagged}")
    record(acceptance_log, 8, checks, detail, elapsed, 30.0)


def test_criterion_09_orbits(acceptance_log):
    t0 = time.perf_counter()
    cfg = OrbitConfig(dt=0.01, duration=1e4, decimation=10, s_target=800.0)
    short = OrbitConfig(dt=0.01, duration=1e3, decimation=10, s_target=800.0)
    st = make_initial_state(ORBIT_VORTEX, short, start_on_null_ray(ORBIT_VORTEX, ORBIT_PERT, 0.95), 0)
    drift = run_orbit(st, ORBIT_VORTEX, ORBIT_PERT, short).energy_drift

    # uniform field: time-centred midpoints trace a circle of the analytic radius
    qm, B = st.charge / st.mass, 5.0
    omega = abs(qm) * B
    dt = 0.01 * 2 * math.pi / omega
    v, x, pts = (1e6, 0.0, 3e5), (0.0, 0.0, 0.0), []
    for _ in range(1000):
        vn = boris_kick(v, (0.0, 0.0, B), qm, dt)
        xn = tuple(a + b * dt for a, b in zip(x, vn))
        pts.append((0.5 * (x[0] + xn[0]), 0.5 * (x[1] + xn[1])))
        x, v = xn, vn
    pts = np.array(pts)
    c = np.linalg.lstsq(np.c_[2 * pts, np.ones(len(pts))], np.sum(pts**2, axis=1), rcond=None)[0]
    gyro_err = abs(math.sqrt(c[2] + c[0] ** 2 + c[1] ** 2) / (1e6 / omega) - 1)

    # crescent: start 95% of the way from the shifted axis to the null, control without perturbation
    control = PerturbationParams(0.0, ORBIT_K)
    cov, cov0 = [], []
    for seed in range(6):
        s0 = make_initial_state(ORBIT_VORTEX, cfg, start_on_null_ray(ORBIT_VORTEX, ORBIT_PERT, 0.95), seed)
        cov.append(crescent_metrics(run_orbit(s0, ORBIT_VORTEX, ORBIT_PERT, cfg)).phi_coverage)
        cov0.append(crescent_metrics(run_orbit(s0, ORBIT_VORTEX, control, cfg)).phi_coverage)
    # correlation: particles launched at the null itself reach the weak-field region
    lifts = []
    for seed in range(3):
        s0 = make_initial_state(ORBIT_VORTEX, cfg, start_on_null_ray(ORBIT_VORTEX, ORBIT_PERT, 1.0), seed)
        m = crescent_metrics(run_orbit(s0, ORBIT_VORTEX, ORBIT_PERT, cfg))
        lifts.append((m.mu_violation_events, m.p_low_s_given_event, m.p_low_s))
    elapsed = time.perf_counter() - t0
    checks = {
        "energy drift": drift < 1e-9,
        "gyro-radius": gyro_err < 1e-6,
        "bounded crescent": all(c < 2 * math.pi for c in cov),
        "control covers more": all(c0 > c for c, c0 in zip(cov, cov0)),
        "mu events correlate with s_l < 3": all(n > 0 and pe > pb for n, pe, pb in lifts),
    }
    detail = (f"drift {drift:.1e}, gyro err {gyro_err:.1e}; coverage/2pi "
              f"{[round(c / (2 * math.pi), 3) for c in cov]} vs control "
              f"{[round(c / (2 * math.pi), 3) for c in cov0]}; P(s_l<3 | event) vs P(s_l<3) "
              f"{[(round(pe, 3), round(pb, 3)) for _, pe, pb in lifts]}")
    record(acceptance_log, 9, checks, detail, elapsed, 300.0)


DETERMINISM_RUNS = [
    ("classify", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "perturbation": {"alpha": 0.2, "k": 0.25},
                  "psi": [0.165, 0.195, 0.23]}),
    ("trace", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "perturbation": {"alpha": 0.2, "k": 0.25},
               "psi": [0.165, 0.23, -0.05]}),
    ("surface", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "perturbation": {"alpha": 0.2, "k": 0.25},
                 "psi": [0.165, 0.23], "surface": {"resolution": 64}}),
    ("orbit", {"vortex": {"B0": 5, "r_s": 0.25, "z_s": 0.75}, "perturbation": {"alpha": 0.1, "k": ORBIT_K},
               "orbit": {"duration": 100, "n_particles": 2, "control": True}, "seed": 11}),
    ("reduce", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1},
                "spectrum": {"modes": [{"n": 1, "samples": [[0.04, 0.2, 0.0], [0.05, 0.2, 0.0]]}]}}),
    ("fraction-sweep", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}}),
]


def test_criterion_10_determinism(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    differing = []
    n_files = 0
    for command, cfg in DETERMINISM_RUNS:
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for run, threads in (("a", "1"), ("b", "2")):
            out = tmp_path / f"{command}_{run}"
            assert main([command, "--config", str(path), "--out", str(out), "--threads", threads]) == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        if names != sorted(p.name for p in outs[1].iterdir()):
            differing.append(f"{command}: file sets")
        for name in names:
            n_files += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                differing.append(f"{command}/{name}")
        # the in-memory rerun used by verify must agree too
        again = run_command(command, json.loads(json.dumps(cfg)), 1).files
        for name, data in again.items():
            if (outs[0] / name).read_bytes() != data:
                differing.append(f"{command}/{name} (rerun)")
    elapsed = time.perf_counter() - t0
    detail = f"{len(DETERMINISM_RUNS)} commands, {n_files} files byte-identical across runs and thread counts"
    if differing:
        detail += f"; differing: {differing}"
    record(acceptance_log, 10, {"byte-identical": not differing}, detail, elapsed, None)
