"""``vortex-topo`` command-line front end.

Each subcommand builds its outputs in memory, then writes them together with
``manifest.json``.  Errors are reported on stderr as one JSON object and mapped
onto the exit codes 2 (config), 3 (regime) and 4 (numerical).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import ConfigError, ManifestMismatch, RegimeOutOfRange, VortexTopoError
from .export import OutputSet, check_files, mesh_json_obj, read_manifest, stl_bytes
from .field_core import PerturbationParams
from .orbit import ParticleState, crescent_metrics, make_initial_state, run_orbit, start_on_null_ray
from .perturb_general import numerical_psi_thresholds, reduce_spectrum, synthesize_total
from .surface_mesh import critical_points_on_surface, extract_surface, surface_report
from .svg import FigureSpec, emit_svg, field_line_items, region_items, time_buckets
from .topology import (
    alpha_critical,
    classify,
    classify_with_band,
    in_regime,
    model_validity_bounds,
    separatrix_data,
    simply_connected_fraction,
)
from .tracer import closure_report, line_to_rows, seed_for_psi, trace_many

TRAJECTORY_HEADER = ("t", "x", "y", "z", "vx", "vy", "vz", "KE", "mu", "s_l")
LINE_HEADER = ("s", "x", "y", "z", "psi", "varphi")


def resolve_threads(flag: int | None) -> int:
    if flag:
        return max(1, flag)
    env = os.environ.get("VORTEX_TOPO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def _params_dict(cfg: cfgmod.RunConfig) -> dict:
    return dict(cfg.raw.get("vortex", {}))


# ---------------------------------------------------------------------------
# commands


def cmd_classify(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params, pert = cfg.vortex, cfg.perturbation
    ac = alpha_critical(params, pert.k)
    if not in_regime(params, pert):
        raise RegimeOutOfRange(f"alpha={pert.alpha!r} is not below alpha_c={ac!r}")
    sep = separatrix_data(params, pert)
    classes = []
    for psi in cfg.psi:
        band_class, snapped = classify_with_band(psi, params, pert)
        exact = classify(psi, params, pert)
        classes.append({"psi": psi, "class": str(exact), "band_class": str(band_class), "snapped": snapped})
    # the alpha -> 0 limit of the fraction is 0
    fraction = simply_connected_fraction(params, pert) if pert.alpha > 0 else 0.0
    sigma = cfg.edge_layer if cfg.edge_layer is not None else 0.05 * params.r_s
    report = {
        "vortex": _params_dict(cfg),
        "perturbation": {"alpha": pert.alpha, "k": pert.k},
        "alpha_c": ac,
        "alpha_over_alpha_c": pert.alpha / ac,
        "alpha_tilde": pert.alpha * pert.k * params.r_s,
        "thresholds": sep.to_dict(),
        "classes": classes,
        "simply_connected_fraction": fraction,
        "validity": model_validity_bounds(params, pert, sigma).to_dict(),
    }
    out = OutputSet()
    out.add_json("classify.json", report)
    return out


def cmd_trace(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params, pert = cfg.vortex, cfg.perturbation
    seeds = list(cfg.seeds)
    for psi in cfg.psi:
        seeds.append(seed_for_psi(psi, params, pert, cfg.direction))
    if not seeds:
        raise ConfigError("trace needs 'psi' or 'seeds'")
    lines = trace_many(seeds, params, pert, cfg.tracer, threads=threads)
    out = OutputSet()
    summary = []
    for i, ln in enumerate(lines):
        name = f"line_{i:03d}.csv"
        out.add_csv(name, LINE_HEADER, line_to_rows(ln))
        summary.append({
            "file": name,
            "seed": list(ln.seed),
            "status": str(ln.status),
            "psi": ln.label.psi,
            "varphi": ln.label.varphi,
            "psi_drift": ln.psi_drift,
            "varphi_drift": ln.varphi_drift,
            "length": ln.length,
            "n_points": int(len(ln.points)),
            "closure": closure_report(ln).to_dict(),
        })
    out.add_json("lines.json", {"lines": summary})
    out.add("field_lines.svg", emit_svg(FigureSpec(plane="yz", title="field lines"), field_line_items(lines, "yz")))
    return out


def cmd_surface(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params, pert = cfg.vortex, cfg.perturbation
    res = cfg.surface_resolution
    out = OutputSet()
    reports = []
    for i, psi in enumerate(cfg.psi):
        mesh = extract_surface(psi, params, pert, res, threads=threads)
        rep = surface_report(mesh, psi, res, params, pert).to_dict()
        crit = critical_points_on_surface(mesh, psi, params, pert)
        rep["critical_points"] = crit.tolist()
        rep["poincare_hopf_ok"] = rep["chi"] is not None and len(crit) == rep["chi"]
        rep["stl"] = f"surface_{i:03d}.stl"
        rep["mesh_json"] = f"surface_{i:03d}.mesh.json"
        out.add(rep["stl"], stl_bytes(mesh))
        out.add_json(rep["mesh_json"], mesh_json_obj(mesh))
        reports.append(rep)
    out.add_json("surfaces.json", {"surfaces": reports})
    return out


def _particle_seeds(master: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def _one_orbit(args) -> tuple:
    state, params, pert, oc, control = args
    traj = run_orbit(state, params, pert, oc)
    ctrl = None
    if control:
        ctrl = crescent_metrics(run_orbit(state, params, PerturbationParams(0.0, pert.k), oc))
    return traj, crescent_metrics(traj), ctrl


def cmd_orbit(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params, pert = cfg.vortex, cfg.perturbation
    run = cfg.orbit
    start = run.start if run.start is not None else start_on_null_ray(params, pert, run.start_fraction)
    states = [make_initial_state(params, run.config, start, s) for s in _particle_seeds(cfg.seed, run.n_particles)]
    jobs = [(st, params, pert, run.config, run.control) for st in states]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_one_orbit, jobs))
    else:
        results = [_one_orbit(j) for j in jobs]
    out = OutputSet()
    summary = []
    for i, ((traj, metrics, ctrl), st) in enumerate(zip(results, states)):
        name = f"trajectory_{i:03d}.csv"
        out.add_csv(name, TRAJECTORY_HEADER, traj.rows())
        svg_name = f"orbit_xy_{i:03d}.svg"
        items = time_buckets(traj.t / traj.tau_ce, traj.position[:, :2], 10)
        out.add(svg_name, emit_svg(FigureSpec(plane="xy", title="x-y projection, colour = time"), items))
        summary.append({
            "csv": name,
            "svg": svg_name,
            "initial": _state_dict(st),
            "tau_ce": traj.tau_ce,
            "dt": traj.dt,
            "n_samples": len(traj),
            "energy_drift": traj.energy_drift,
            "metrics": metrics.to_dict(),
            "control_metrics": None if ctrl is None else ctrl.to_dict(),
            "warnings": list(traj.warnings),
        })
    out.add_json("orbit.json", {"start": list(start), "particles": summary})
    return out


def _state_dict(st: ParticleState) -> dict:
    return {"position": list(st.position), "velocity": list(st.velocity), "charge": st.charge, "mass": st.mass}


def cmd_reduce(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params, spectrum = cfg.vortex, cfg.spectrum
    rep = reduce_spectrum(spectrum, params)
    result = rep.to_dict()
    red = rep.reduction
    new_params = rep.rescale.new_params
    result["canonical_thresholds"] = None
    if red is not None and in_regime(new_params, red.effective):
        result["canonical_thresholds"] = separatrix_data(new_params, red.effective).to_dict()
    result["numerical_thresholds"] = None
    if rep.split.closure_preserving and not rep.beyond_longwave and spectrum.mode(0) is None:
        num = numerical_psi_thresholds(lambda p: synthesize_total(spectrum, params, p), params)
        result["numerical_thresholds"] = {
            "y_axis": num.y_axis, "y_minus": num.y_minus, "y_plus": num.y_plus,
            "psi_minus": num.psi_minus, "psi_plus": num.psi_plus, "ratio": num.ratio,
        }
    out = OutputSet()
    out.add_json("reduction.json", result)
    return out


def cmd_fraction_sweep(cfg: cfgmod.RunConfig, threads: int) -> OutputSet:
    params = cfg.vortex
    k = cfg.perturbation.k if cfg.perturbation is not None else 1.0 / params.r_s
    ac = alpha_critical(params, k)
    ratios = np.linspace(cfg.sweep.start, cfg.sweep.stop, cfg.sweep.num)
    rows = []
    for q in ratios:
        pert = PerturbationParams(alpha=float(q * ac), k=k)
        sep = separatrix_data(params, pert)
        rows.append((float(q), pert.alpha, pert.alpha * k * params.r_s, sep.psi_minus, sep.psi_plus,
                     sep.psi_minus / sep.psi_plus, simply_connected_fraction(params, pert)))
    out = OutputSet()
    out.add_csv("fraction_sweep.csv",
                ("alpha_over_alpha_c", "alpha", "alpha_tilde", "psi_minus", "psi_plus", "psi_ratio", "fraction"),
                rows)
    spec = FigureSpec(plane=None, x_range=(float(ratios[0]), float(ratios[-1])), y_range=(0.0, 1.0),
                      x_label="alpha / alpha_c", y_label="psi / psi_+", title="compact flux surfaces",
                      equal_aspect=False)
    out.add("fraction_regions.svg", emit_svg(spec, region_items(ratios, [r[5] for r in rows])))
    return out


COMMANDS = {
    "classify": cmd_classify,
    "trace": cmd_trace,
    "surface": cmd_surface,
    "orbit": cmd_orbit,
    "reduce": cmd_reduce,
    "fraction-sweep": cmd_fraction_sweep,
}


def run_command(command: str, raw: dict, threads: int) -> OutputSet:
    cfg = cfgmod.parse(raw, command)
    return COMMANDS[command](cfg, threads)


def verify(out_dir: str, threads: int) -> dict:
    """Check files against the manifest, then re-run the recorded command and compare hashes.

    Raises
    ------
    ManifestMismatch
        If a file on disk or a recomputed output differs from the manifest.
    """
    try:
        manifest = read_manifest(out_dir)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest in {out_dir}: {exc}") from None
    on_disk = check_files(out_dir, manifest)
    fresh = run_command(manifest["command"], manifest["config"], threads).hashes()
    recorded = {e["name"]: e["sha256"] for e in manifest["files"]}
    recomputed = sorted(n for n in set(recorded) | set(fresh) if recorded.get(n) != fresh.get(n))
    result = {"out": str(out_dir), "command": manifest["command"], "files": len(recorded),
              "mismatch_on_disk": on_disk, "mismatch_recomputed": recomputed}
    if on_disk or recomputed:
        raise ManifestMismatch(json.dumps(result, sort_keys=True))
    return result


# ---------------------------------------------------------------------------
# entry point


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="JSON run configuration")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, metavar="N", default=d, help="master random seed (overrides seed)")
    p.add_argument("--threads", type=int, metavar="N", default=d,
                   help="worker threads (fallback: VORTEX_TOPO_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortex-topo", description="Flux-surface topology of a perturbed Hill's vortex")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "classify": "thresholds, per-psi topology classes and the simply connected fraction",
        "trace": "trace field lines from psi values or explicit seeds",
        "surface": "extract flux surfaces and check their Euler characteristic",
        "orbit": "Boris-push electrons and report crescent diagnostics",
        "reduce": "reduce a general perturbation spectrum to the canonical model",
        "fraction-sweep": "psi_-/psi_+ and the simply connected fraction against alpha/alpha_c",
        "verify": "re-run the command recorded in a manifest and compare hashes",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        _global_flags(sp, suppress=True)
    return p


def _error(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = resolve_threads(args.threads)
    try:
        if args.command == "verify":
            if not args.out:
                raise ConfigError("verify needs --out DIR")
            print(json.dumps(verify(args.out, threads), sort_keys=True))
            return 0
        if not args.config:
            raise ConfigError("--config PATH is required")
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        if args.seed is not None:
            raw["seed"] = args.seed
        out_dir = args.out or raw.get("output_dir", "out")
        raw.pop("output_dir", None)
        outputs = run_command(args.command, raw, threads)
        path = outputs.write(out_dir, args.command, raw, int(raw.get("seed", 0)))
        print(json.dumps({"command": args.command, "manifest": str(path), "files": sorted(outputs.files)},
                         sort_keys=True))
        return 0
    except VortexTopoError as exc:
        return _error(exc, exc.exit_code)
    except Exception as exc:  # noqa: BLE001 - anything else is a numerical/internal failure
        return _error(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
