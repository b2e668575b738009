"""Field-line integration with closure detection and (psi, varphi) conservation diagnostics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .errors import ConfigError, OnAxis, SeedAtCritical, SeedOnAxis, StepFailure
from .field_core import (
    FloatArray,
    FluxLabel,
    PerturbationParams,
    Point3,
    VortexParams,
    axis_offset,
    eval_psi,
    eval_total,
    eval_varphi,
    nondimensionalize,
    psi_from_dimensionless,
    psi_to_dimensionless,
    wrap_angle,
)
from .topology import separatrix_data

CRITICAL_TOL = 1e-10


class LineStatus(str, Enum):
    CLOSED = "Closed"
    OPEN = "Open"
    EXHAUSTED = "Exhausted"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TracerSettings:
    """Integrator and termination settings; lengths are in units of ``r_s`` unless noted."""

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_arc_length: float = 200.0
    closure_eps: float = 1e-4
    escape_radius: float = 10.0  # multiple of max(r_s, z_s)
    tangent_tol_deg: float = 5.0
    max_step: float = 0.1  # bounds the sample spacing along the line

    def __post_init__(self) -> None:
        for name in ("rel_tol", "abs_tol", "max_arc_length", "closure_eps", "escape_radius", "tangent_tol_deg",
                     "max_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"tracer setting {name} must be positive")
        if not self.closure_eps < 0.1:
            raise ConfigError("closure_eps must be below 0.1")


@dataclass
class FieldLine:
    seed: Point3
    points: FloatArray  # (N, 3)
    arc: FloatArray  # (N,)
    tangents: FloatArray  # (N, 3), unit
    psi: FloatArray
    varphi: FloatArray
    status: LineStatus
    label: FluxLabel
    psi_drift: float
    varphi_drift: float
    closure_eps: float  # absolute, metres
    tangent_tol_deg: float
    n_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        return float(self.arc[-1])


@dataclass(frozen=True)
class ClosureReport:
    closed: bool
    loop_length: float
    min_distance_to_seed: float
    tangent_angle_deg: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _field_rhs(params: VortexParams, pert: PerturbationParams):
    irs2 = 1.0 / params.r_s**2
    izs2 = 1.0 / params.z_s**2
    ak = pert.alpha * pert.k

    def rhs(_s, p):
        x, y, z = float(p[0]), float(p[1]), float(p[2])
        bx = x * z * izs2
        by = y * z * izs2 - ak * z
        bz = 1.0 - 2.0 * (x * x + y * y) * irs2 - z * z * izs2 - ak * y
        n = math.sqrt(bx * bx + by * by + bz * bz)
        if n == 0.0:
            return np.zeros(3)
        return np.array([bx / n, by / n, bz / n])

    return rhs


def _unit_field(params, pert, p) -> FloatArray:
    b = eval_total(params, pert, p)
    return b / np.linalg.norm(b, axis=-1, keepdims=True)


def _check_seed(seed: Point3, params: VortexParams, pert: PerturbationParams) -> None:
    try:
        eval_varphi(params, pert, seed)
    except OnAxis as exc:
        raise SeedOnAxis(f"seed {tuple(seed)} lies on the shifted axis line") from exc
    if np.linalg.norm(eval_total(params, pert, seed)) <= CRITICAL_TOL * params.B0:
        raise SeedAtCritical(f"seed {tuple(seed)} is a field null")


def trace(
    seed, params: VortexParams, pert: PerturbationParams, settings: TracerSettings | None = None
) -> FieldLine:
    """Integrate ``dr/ds = B/|B|`` from ``seed`` until closure, escape or the arc-length cap.

    Closure is declared when the line crosses the plane through the seed normal to
    the initial tangent (from behind) within ``closure_eps r_s`` of the seed and with
    the tangent within ``tangent_tol_deg`` of the initial one.

    Raises
    ------
    SeedOnAxis, SeedAtCritical
        Invalid seed.
    StepFailure
        The integrator cannot meet the tolerance.
    """
    settings = settings or TracerSettings()
    seed = seed if isinstance(seed, Point3) else Point3(*map(float, seed))
    _check_seed(seed, params, pert)
    rhs = _field_rhs(params, pert)
    p0 = seed.as_array()
    t0 = _unit_field(params, pert, p0)
    eps = settings.closure_eps * params.r_s
    cos_tol = math.cos(math.radians(settings.tangent_tol_deg))
    escape = settings.escape_radius * params.r_max
    s_max = settings.max_arc_length * params.r_s
    solver = DOP853(
        rhs, 0.0, p0, s_max, rtol=settings.rel_tol, atol=settings.abs_tol * params.r_s,
        max_step=settings.max_step * params.r_s,
    )

    pts = [p0]
    arcs = [0.0]
    status = LineStatus.EXHAUSTED
    g_prev = 0.0
    left = False  # has the line moved behind the seed plane yet
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise StepFailure(f"integration failed after {steps} steps: {msg}")
        p = solver.y.copy()
        g = float(np.dot(p - p0, t0))
        if g < 0:
            left = True
        if left and g_prev < 0 <= g:
            dense = solver.dense_output()
            s_c = brentq(lambda s: float(np.dot(dense(s) - p0, t0)), solver.t_old, solver.t, xtol=1e-15)
            pc = dense(s_c)
            if np.linalg.norm(pc - p0) < eps and float(np.dot(_unit_field(params, pert, pc), t0)) > cos_tol:
                pts.append(pc)
                arcs.append(s_c)
                status = LineStatus.CLOSED
                break
        g_prev = g
        pts.append(p)
        arcs.append(solver.t)
        if np.linalg.norm(p) > escape:
            status = LineStatus.OPEN
            break
    points = np.array(pts)
    return _finish(seed, points, np.array(arcs), status, params, pert, settings, steps)


def _finish(seed, points, arcs, status, params, pert, settings, steps) -> FieldLine:
    psi = eval_psi(params, pert, points)
    phi = eval_varphi(params, pert, points)
    psi0 = float(psi[0])
    guard = max(abs(psi0), 1e-12 * params.B0 * params.r_s**2)
    tangents = _unit_field(params, pert, points)
    return FieldLine(
        seed=seed,
        points=points,
        arc=arcs,
        tangents=tangents,
        psi=psi,
        varphi=phi,
        status=status,
        label=FluxLabel(psi0, float(phi[0])),
        psi_drift=float(np.max(np.abs(psi - psi0)) / guard),
        varphi_drift=float(np.max(np.abs(wrap_angle(phi - phi[0])))),
        closure_eps=settings.closure_eps * params.r_s,
        tangent_tol_deg=settings.tangent_tol_deg,
        n_steps=steps,
    )


def closure_report(line: FieldLine) -> ClosureReport:
    """Re-entry test on the stored samples.

    The minimum distance to the seed is taken over samples after the line first
    leaves a ball of ten closure radii around it; closed means that minimum lies
    inside the closure radius at a sample whose tangent is aligned with the seed's.
    """
    d = np.linalg.norm(line.points - line.points[0], axis=-1)
    away = np.nonzero(d > 10.0 * line.closure_eps)[0]
    if away.size == 0:
        return ClosureReport(False, 0.0, float(d[-1]), 180.0)
    tail = np.arange(away[0], d.size)
    j = tail[int(np.argmin(d[tail]))]
    cosang = float(np.clip(np.dot(line.tangents[j], line.tangents[0]), -1.0, 1.0))
    angle = math.degrees(math.acos(cosang))
    closed = bool(d[j] < line.closure_eps and angle < line.tangent_tol_deg)
    return ClosureReport(closed, float(line.arc[j]) if closed else 0.0, float(d[j]), angle)


def planarity_check(line: FieldLine) -> float:
    """Largest wrapped deviation of the shifted azimuth from its seed value (rad)."""
    return float(np.max(np.abs(wrap_angle(line.varphi - line.varphi[0]))))


# ---------------------------------------------------------------------------
# seeds by flux value


def _reduced_ray(params: VortexParams, pert: PerturbationParams, direction: float):
    """``Psi(u) = u^2 (I - u^2 - a u cos(varphi))`` on the midplane ray at shifted azimuth ``direction``."""
    dp = nondimensionalize(params, pert)
    c = math.cos(direction)
    I, a = dp.I, dp.a

    def psi_t(u: float) -> float:
        return u * u * (I - u * u - a * u * c)

    u_peak = (-3.0 * a * c + math.sqrt(9.0 * a * a * c * c + 32.0 * I)) / 8.0
    u_out = (-a * c + math.sqrt(a * a * c * c + 4.0 * I)) / 2.0
    return psi_t, u_peak, u_out


def seed_for_psi(
    psi_value: float, params: VortexParams, pert: PerturbationParams, direction: float | None = None
) -> Point3:
    """Midplane point with ``psi = psi_value`` found by bisection along a ray from the shifted axis.

    ``direction`` is the shifted azimuth of the ray.  By default toroidal and
    negative targets use the ray towards +y (``0``) and simply connected targets
    the ray towards -y (``pi``), where ``psi`` rises to its maximum ``psi_+``.
    Positive targets are taken on the outer, decreasing branch of the ray profile.

    Raises
    ------
    ConfigError
        If the requested value is not attained on the chosen ray.
    """
    sep = separatrix_data(params, pert)
    if direction is None:
        direction = math.pi if psi_value > sep.psi_minus else 0.0
    psi_t, u_peak, u_out = _reduced_ray(params, pert, direction)
    target = float(psi_to_dimensionless(params, psi_value))
    top = psi_t(u_peak)
    if target >= top:
        peak = float(psi_from_dimensionless(params, top))
        raise ConfigError(f"psi={psi_value!r} not attained on the ray at varphi={direction!r} (max {peak!r})")
    if target == 0.0:
        raise ConfigError("psi = 0 lies on the separatrix or the axis; no regular seed exists")
    if target > 0:
        lo, hi = u_peak, u_out
    else:
        lo, hi = u_out, 2.0 * u_out
        while psi_t(hi) > target:
            hi *= 2.0
    u = brentq(lambda s: psi_t(s) - target, lo, hi, xtol=1e-15, rtol=1e-15)
    y0 = axis_offset(params, pert)
    return Point3(u * params.r_s * math.sin(direction), y0 + u * params.r_s * math.cos(direction), 0.0)


def trace_psi(psi_value: float, params, pert, settings=None, direction=None) -> FieldLine:
    return trace(seed_for_psi(psi_value, params, pert, direction), params, pert, settings)


def _threads(threads: int | None) -> int:
    if threads:
        return threads
    env = os.environ.get("VORTEX_TOPO_THREADS")
    return max(1, int(env)) if env else min(8, os.cpu_count() or 1)


def trace_many(
    seeds: Sequence, params: VortexParams, pert: PerturbationParams, settings: TracerSettings | None = None,
    threads: int | None = None,
) -> list[FieldLine]:
    """Trace independent seeds in parallel; results keep the input order."""
    n = _threads(threads)
    if n == 1 or len(seeds) < 2:
        return [trace(s, params, pert, settings) for s in seeds]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(lambda s: trace(s, params, pert, settings), seeds))


def with_tolerance(settings: TracerSettings, rel_tol: float) -> TracerSettings:
    return replace(settings, rel_tol=rel_tol)


def line_to_rows(line: FieldLine) -> list[tuple]:
    return [(float(s), *map(float, p), float(ps), float(ph)) for s, p, ps, ph in zip(line.arc, line.points, line.psi, line.varphi)]


__all__ = [
    "LineStatus",
    "TracerSettings",
    "FieldLine",
    "ClosureReport",
    "trace",
    "trace_psi",
    "trace_many",
    "closure_report",
    "planarity_check",
    "seed_for_psi",
    "line_to_rows",
]
