"""JSON run configuration: schema, validation and typed access.

Every object in the schema rejects unknown keys, and each subcommand adds its
own required blocks on top of the shared ``vortex`` block.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError, VortexTopoError
from .field_core import PerturbationParams, VortexParams
from .orbit import OrbitConfig
from .perturb_general import PerturbationSpectrum
from .tracer import TracerSettings

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "required": ["vortex"],
    "properties": {
        "vortex": {
            "type": "object",
            "additionalProperties": False,
            "required": ["B0", "r_s", "z_s"],
            "properties": {"B0": _POS, "r_s": _POS, "z_s": _POS},
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha", "k"],
            "properties": {"alpha": _NONNEG, "k": _POS},
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "required": ["modes"],
            "properties": {
                "modes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["n", "samples"],
                        "properties": {
                            "n": {"type": "integer", "minimum": 0},
                            "samples": {
                                "type": "array",
                                "items": {"type": "array", "items": {"type": "number"}, "minItems": 3,
                                          "maxItems": 3},
                            },
                        },
                    },
                }
            },
        },
        "psi": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "seeds": {"type": "array", "items": _VEC3, "minItems": 1},
        "tracer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rel_tol": _POS,
                "abs_tol": _POS,
                "max_arc_length": _POS,
                "closure_eps": _POS,
                "escape_radius": _POS,
                "tangent_tol_deg": _POS,
                "max_step": _POS,
                "direction": {"type": "number"},
            },
        },
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"resolution": {"type": "integer", "minimum": 64}},
        },
        "orbit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _POS,
                "duration": _POS,
                "decimation": {"type": "integer", "minimum": 1},
                "s_target": _POS,
                "start": _VEC3,
                "start_fraction": _NONNEG,
                "n_particles": {"type": "integer", "minimum": 1},
                "full_length": {"type": "boolean"},
                "control": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "start": _POS,
                "stop": _POS,
                "num": {"type": "integer", "minimum": 2},
            },
        },
        "edge_layer": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

COMMAND_REQUIRES: dict[str, list[str]] = {
    "classify": ["perturbation", "psi"],
    "trace": ["perturbation"],
    "surface": ["perturbation", "psi"],
    "orbit": ["perturbation"],
    "reduce": ["spectrum"],
    "fraction-sweep": [],
}

FULL_LENGTH_DURATION = 2e5  # cyclotron periods


def schema_for(command: str | None) -> dict:
    s = copy.deepcopy(SCHEMA)
    if command is not None:
        s["required"] = s["required"] + COMMAND_REQUIRES.get(command, [])
    return s


@dataclass
class SweepConfig:
    start: float = 0.05
    stop: float = 0.95
    num: int = 50


@dataclass
class OrbitRun:
    config: OrbitConfig
    start: tuple[float, float, float] | None = None
    start_fraction: float = 0.95
    n_particles: int = 1
    control: bool = False


@dataclass
class RunConfig:
    vortex: VortexParams
    raw: dict
    perturbation: PerturbationParams | None = None
    spectrum: PerturbationSpectrum | None = None
    psi: list[float] = field(default_factory=list)
    seeds: list[tuple[float, float, float]] = field(default_factory=list)
    tracer: TracerSettings = field(default_factory=TracerSettings)
    direction: float | None = None
    surface_resolution: int = 128
    orbit: OrbitRun = field(default_factory=lambda: OrbitRun(OrbitConfig()))
    sweep: SweepConfig = field(default_factory=SweepConfig)
    edge_layer: float | None = None  # metres; defaults to 0.05 r_s
    seed: int = 0
    output_dir: str = "out"


def validate(obj: dict, command: str | None = None) -> None:
    """Reject schema violations before any computation.

    Raises
    ------
    ConfigError
        With the offending JSON path in the message.
    """
    try:
        jsonschema.validate(obj, schema_for(command))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def parse(obj: dict, command: str | None = None) -> RunConfig:
    """Validate ``obj`` against the schema for ``command`` and build a :class:`RunConfig`."""
    validate(obj, command)
    try:
        return _build(obj)
    except VortexTopoError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build(obj: dict) -> RunConfig:
    v = obj["vortex"]
    cfg = RunConfig(vortex=VortexParams(B0=v["B0"], r_s=v["r_s"], z_s=v["z_s"]), raw=copy.deepcopy(obj))
    if "perturbation" in obj:
        cfg.perturbation = PerturbationParams(alpha=obj["perturbation"]["alpha"], k=obj["perturbation"]["k"])
    if "spectrum" in obj:
        cfg.spectrum = PerturbationSpectrum.from_json_obj(obj["spectrum"])
    cfg.psi = [float(p) for p in obj.get("psi", [])]
    cfg.seeds = [tuple(map(float, s)) for s in obj.get("seeds", [])]
    tr = dict(obj.get("tracer", {}))
    cfg.direction = tr.pop("direction", None)
    cfg.tracer = TracerSettings(**tr)
    cfg.surface_resolution = int(obj.get("surface", {}).get("resolution", 128))
    ob = dict(obj.get("orbit", {}))
    full = ob.pop("full_length", False)
    run_keys = {k: ob.pop(k) for k in ("start", "start_fraction", "n_particles", "control") if k in ob}
    if full:
        ob["duration"] = FULL_LENGTH_DURATION
    oc = OrbitConfig(**ob)
    start = run_keys.get("start")
    cfg.orbit = OrbitRun(
        config=oc,
        start=None if start is None else tuple(map(float, start)),
        start_fraction=float(run_keys.get("start_fraction", 0.95)),
        n_particles=int(run_keys.get("n_particles", 1)),
        control=bool(run_keys.get("control", False)),
    )
    sw = obj.get("sweep", {})
    cfg.sweep = SweepConfig(**sw)
    if not cfg.sweep.start < cfg.sweep.stop < 1.0:
        raise ConfigError("sweep requires 0 < start < stop < 1 (fractions of alpha_c)")
    cfg.edge_layer = obj.get("edge_layer")
    cfg.seed = int(obj.get("seed", 0))
    cfg.output_dir = obj.get("output_dir", "out")
    return cfg


def load(path: str | Path, command: str | None = None) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config root must be an object")
    return parse(obj, command)
