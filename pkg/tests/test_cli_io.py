import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import BASE, BASE_PERT
from vortex_topo import config as cfgmod
from vortex_topo.cli import main, resolve_threads, run_command
from vortex_topo.errors import ConfigError, EmptyData
from vortex_topo.export import csv_bytes, fmt_float, json_bytes, read_stl, stl_bytes
from vortex_topo.surface_mesh import TriMesh, euler_characteristic
from vortex_topo.svg import FigureSpec, Polyline, bucket_colors, emit_svg, field_line_items, region_items, time_buckets
from vortex_topo.tracer import trace_psi

SVG_NS = "{http://www.w3.org/2000/svg}"
BASE_CFG = {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "perturbation": {"alpha": 0.2, "k": 0.25},
            "psi": [0.165, 0.195, 0.23]}
ORBIT_CFG = {"vortex": {"B0": 5, "r_s": 0.25, "z_s": 0.75},
            "perturbation": {"alpha": 0.1, "k": math.pi * 0.1 / 0.75},
            "orbit": {"duration": 50, "n_particles": 2, "control": True}, "seed": 3}


def run_cli(tmp_path, command, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{command}"
    rc = main([command, "--config", str(path), "--out", str(out), "--threads", "1", *extra])
    return rc, out


def stderr_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ---------------------------------------------------------------------------
# configuration


def test_schema_rejects_unknown_and_missing():
    with pytest.raises(ConfigError, match="bogus"):
        cfgmod.parse({**BASE_CFG, "bogus": 1}, "classify")
    with pytest.raises(ConfigError):
        cfgmod.parse({"perturbation": {"alpha": 0.2, "k": 0.25}, "psi": [0.1]}, "classify")
    with pytest.raises(ConfigError):
        cfgmod.parse({"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "psi": [0.1]}, "classify")
    with pytest.raises(ConfigError):
        cfgmod.parse({**BASE_CFG, "tracer": {"rel_tol": 1e-8, "speed": 3}}, "trace")
    with pytest.raises(ConfigError):
        cfgmod.parse({**BASE_CFG, "vortex": {"B0": 2, "r_s": -1, "z_s": 1}}, "classify")
    with pytest.raises(ConfigError):
        cfgmod.parse({**BASE_CFG, "surface": {"resolution": 32}}, "surface")
    cfg = cfgmod.parse(BASE_CFG, "classify")
    assert cfg.vortex == BASE and cfg.perturbation == BASE_PERT


def test_threads_resolution(monkeypatch):
    assert resolve_threads(3) == 3
    monkeypatch.setenv("VORTEX_TOPO_THREADS", "5")
    assert resolve_threads(None) == 5
    monkeypatch.delenv("VORTEX_TOPO_THREADS")
    assert 1 <= resolve_threads(None) <= 8


# ---------------------------------------------------------------------------
# exit codes and stderr


def test_exit_code_config_error(tmp_path, capsys):
    rc, _ = run_cli(tmp_path, "classify", {**BASE_CFG, "bogus": 1})
    assert rc == 2
    err = stderr_json(capsys)
    assert err["exit_code"] == 2 and err["error"] == "ConfigError"


def test_exit_code_regime_error(tmp_path, capsys):
    rc, _ = run_cli(tmp_path, "classify", {**BASE_CFG, "perturbation": {"alpha": 5, "k": 0.25}})
    assert rc == 3
    assert stderr_json(capsys)["exit_code"] == 3


def test_exit_code_missing_config(tmp_path, capsys):
    assert main(["classify", "--config", str(tmp_path / "nope.json")]) == 2
    assert stderr_json(capsys)["error"] == "ConfigError"


def test_exit_code_numerical_failure(tmp_path, capsys):
    (tmp_path / "m").mkdir()
    (tmp_path / "m" / "manifest.json").write_text(json.dumps({"command": "classify", "config": BASE_CFG,
                                                              "seed": 0, "files": []}))
    # an empty recorded file list cannot match the recomputed outputs
    assert main(["verify", "--out", str(tmp_path / "m"), "--threads", "1"]) == 4
    assert stderr_json(capsys)["error"] == "ManifestMismatch"


def test_flags_after_or_before_subcommand(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(BASE_CFG))
    assert main(["--config", str(path), "--out", str(tmp_path / "a"), "classify"]) == 0
    assert main(["classify", "--config", str(path), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "classify.json").read_bytes() == (tmp_path / "b" / "classify.json").read_bytes()


def test_console_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(BASE_CFG))
    res = subprocess.run([sys.executable, "-m", "vortex_topo.cli", "classify", "--config", str(path),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["command"] == "classify"


# ---------------------------------------------------------------------------
# commands


def test_classify_base(tmp_path):
    rc, out = run_cli(tmp_path, "classify", BASE_CFG)
    assert rc == 0
    rep = json.loads((out / "classify.json").read_text())
    assert rep["thresholds"]["psi_minus"] == pytest.approx(0.195, abs=1e-3)
    # 0.195 is the rounded psi_- and falls in the separatrix band; the strict class stays Toroidal
    assert [c["band_class"] for c in rep["classes"]] == ["Toroidal", "InnerSeparatrix", "SimplyConnected"]
    assert [c["class"] for c in rep["classes"]] == ["Toroidal", "Toroidal", "SimplyConnected"]


def test_classify_unperturbed(tmp_path):
    cfg = {**BASE_CFG, "perturbation": {"alpha": 0.0, "k": 0.25}, "psi": [0.05, 0.1, 0.2]}
    rc, out = run_cli(tmp_path, "classify", cfg)
    rep = json.loads((out / "classify.json").read_text())
    assert rc == 0 and rep["simply_connected_fraction"] == 0.0
    assert {c["class"] for c in rep["classes"]} == {"Toroidal"}


def test_classify_fraction(tmp_path):
    from vortex_topo.topology import alpha_critical

    alpha = 0.2 * alpha_critical(BASE, 0.25)
    rc, out = run_cli(tmp_path, "classify", {**BASE_CFG, "perturbation": {"alpha": alpha, "k": 0.25}})
    rep = json.loads((out / "classify.json").read_text())
    assert rep["simply_connected_fraction"] == pytest.approx(0.67, abs=0.02)


def test_fraction_sweep(tmp_path):
    rc, out = run_cli(tmp_path, "fraction-sweep", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}})
    assert rc == 0
    lines = (out / "fraction_sweep.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "alpha_over_alpha_c" and len(lines) == 51
    x = np.array([float(ln.split(",")[0]) for ln in lines[1:]])
    frac = np.array([float(ln.split(",")[-1]) for ln in lines[1:]])
    assert x[0] == pytest.approx(0.05) and x[-1] == pytest.approx(0.95)
    assert np.all(np.diff(frac) > 0)
    root = ET.fromstring((out / "fraction_regions.svg").read_bytes())
    assert len([p for p in root.iter(SVG_NS + "path") if p.get("class") == "region"]) == 2


def test_trace_outputs(tmp_path):
    rc, out = run_cli(tmp_path, "trace", {**BASE_CFG, "psi": [0.165, 0.23, -0.05]})
    assert rc == 0
    summary = json.loads((out / "lines.json").read_text())["lines"]
    assert [s["status"] for s in summary] == ["Closed", "Closed", "Open"]
    header = (out / "line_000.csv").read_text().splitlines()[0]
    assert header == "s,x,y,z,psi,varphi"


def test_surface_outputs(tmp_path):
    cfg = {**BASE_CFG, "psi": [0.23], "surface": {"resolution": 64}}
    rc, out = run_cli(tmp_path, "surface", cfg)
    assert rc == 0
    rep = json.loads((out / "surfaces.json").read_text())["surfaces"][0]
    assert rep["chi"] == 2 and rep["poincare_hopf_ok"]
    mesh = read_stl((out / "surface_000.stl").read_bytes())
    assert euler_characteristic(mesh) == 2


def test_orbit_outputs(tmp_path):
    rc, out = run_cli(tmp_path, "orbit", ORBIT_CFG)
    assert rc == 0
    rep = json.loads((out / "orbit.json").read_text())
    assert len(rep["particles"]) == 2
    header = (out / "trajectory_000.csv").read_text().splitlines()[0].split(",")
    assert header == ["t", "x", "y", "z", "vx", "vy", "vz", "KE", "mu", "s_l"]
    root = ET.fromstring((out / "orbit_xy_000.svg").read_bytes())
    strokes = [p.get("stroke") for p in root.iter(SVG_NS + "path") if p.get("class") == "line"]
    assert len(strokes) == 10 and len(set(strokes)) == 10


def test_reduce_outputs(tmp_path):
    spec = {"modes": [{"n": 1, "samples": [[0.04, 0.2, 0.0], [0.05, 0.2, 0.0], [0.06, 0.2, 0.0]]}]}
    rc, out = run_cli(tmp_path, "reduce", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}, "spectrum": spec})
    assert rc == 0
    rep = json.loads((out / "reduction.json").read_text())
    assert rep["closure_preserving"]
    ratio_c = rep["canonical_thresholds"]["psi_minus"] / rep["canonical_thresholds"]["psi_plus"]
    ratio_n = rep["numerical_thresholds"]["psi_minus"] / rep["numerical_thresholds"]["psi_plus"]
    assert ratio_n == pytest.approx(ratio_c, rel=0.01)


# ---------------------------------------------------------------------------
# determinism and manifests


@pytest.mark.parametrize("command, cfg", [("classify", BASE_CFG), ("trace", BASE_CFG),
                                          ("fraction-sweep", {"vortex": {"B0": 2, "r_s": 1, "z_s": 1}}),
                                          ("orbit", ORBIT_CFG)])
def test_byte_identical_reruns(tmp_path, command, cfg):
    a = run_command(command, json.loads(json.dumps(cfg)), 1).files
    b = run_command(command, json.loads(json.dumps(cfg)), 2).files
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_seed_changes_orbit(tmp_path):
    a = run_command("orbit", ORBIT_CFG, 1).files
    b = run_command("orbit", {**ORBIT_CFG, "seed": 4}, 1).files
    assert a["trajectory_000.csv"] != b["trajectory_000.csv"]


def test_manifest_lists_every_file(tmp_path):
    rc, out = run_cli(tmp_path, "trace", BASE_CFG)
    man = json.loads((out / "manifest.json").read_text())
    names = {e["name"] for e in man["files"]}
    assert names == {p.name for p in out.iterdir()} - {"manifest.json"}
    assert man["command"] == "trace" and "output_dir" not in man["config"]


def test_verify_detects_tampering(tmp_path, capsys):
    rc, out = run_cli(tmp_path, "classify", BASE_CFG)
    capsys.readouterr()
    assert main(["verify", "--out", str(out), "--threads", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["mismatch_recomputed"] == []
    with open(out / "classify.json", "ab") as fh:
        fh.write(b" ")
    assert main(["verify", "--out", str(out), "--threads", "1"]) == 4
    err = stderr_json(capsys)
    assert "classify.json" in err["message"]


# ---------------------------------------------------------------------------
# writers


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(x):
    assert float(fmt_float(x)) == x


def test_csv_and_json_format():
    data = csv_bytes(("a", "b", "c"), [(0.1, 3, True)])
    assert data == b"a,b,c\n0.10000000000000001,3,1\n"
    assert json.loads(json_bytes({"b": float("nan"), "a": np.float64(0.1)})) == {"a": 0.1, "b": None}
    assert json_bytes({"b": 1, "a": 2}).index(b'"a"') < json_bytes({"b": 1, "a": 2}).index(b'"b"')


def test_stl_layout():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    data = stl_bytes(TriMesh(v, t))
    assert len(data) == 84 + 4 * 50
    assert int.from_bytes(data[80:84], "little") == 4
    back = read_stl(data)
    assert back.V == 4 and euler_characteristic(back) == 2


# ---------------------------------------------------------------------------
# SVG


def test_svg_empty():
    with pytest.raises(EmptyData):
        emit_svg(FigureSpec(), [])
    with pytest.raises(EmptyData):
        emit_svg(FigureSpec(), [Polyline(np.empty((0, 2)))])


def test_svg_single_closed_line():
    line = trace_psi(0.165, BASE, BASE_PERT)
    svg = emit_svg(FigureSpec(plane="yz"), field_line_items([line], "yz"))
    root = ET.fromstring(svg)
    paths = [p for p in root.iter(SVG_NS + "path") if p.get("class") == "line"]
    assert len(paths) == 1 and paths[0].get("d").endswith(" Z")
    texts = [t.text for t in root.iter(SVG_NS + "text")]
    assert "y [m]" in texts and "z [m]" in texts


def test_svg_time_buckets():
    t = np.linspace(0, 1, 1000)
    pts = np.stack([np.cos(20 * t), np.sin(20 * t)], axis=-1)
    items = time_buckets(t, pts, 10)
    root = ET.fromstring(emit_svg(FigureSpec(plane="xy"), items))
    strokes = [p.get("stroke") for p in root.iter(SVG_NS + "path") if p.get("class") == "line"]
    assert len(strokes) == 10 and len(set(strokes)) == 10
    assert strokes == bucket_colors(10)
    # neighbouring segments share their boundary sample
    for a, b in zip(items, items[1:]):
        assert np.array_equal(a.points[-1], b.points[0])
    assert sum(len(it.points) for it in items) == 1000 + 9


def test_svg_regions():
    x = np.linspace(0.05, 0.95, 20)
    root = ET.fromstring(emit_svg(FigureSpec(plane=None), region_items(x, 0.5 + 0.3 * x)))
    paths = list(root.iter(SVG_NS + "path"))
    regions = [p for p in paths if p.get("class") == "region"]
    assert len(regions) == 2 and regions[0].get("fill") != regions[1].get("fill")
    dashed = [p for p in paths if p.get("stroke-dasharray")]
    assert len(dashed) == 1 and dashed[0].get("stroke") == "#000000"


def test_svg_deterministic():
    t = np.linspace(0, 1, 200)
    pts = np.stack([t, t**2], axis=-1)
    assert emit_svg(FigureSpec(), time_buckets(t, pts)) == emit_svg(FigureSpec(), time_buckets(t.copy(), pts.copy()))
