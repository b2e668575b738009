"""Analytic thresholds, critical sets and flux-surface topology classification."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import qmc

from .errors import InternalConsistencyError, NotCritical, RegimeOutOfRange
from .field_core import (
    FloatArray,
    PerturbationParams,
    VortexParams,
    as_points,
    axis_offset,
    eval_psi,
    eval_total,
    nondimensionalize,
    psi_to_dimensionless,
    to_dimensionless_point,
)

NULL_TOL = 1e-10  # |B| / B0 accepted as a critical point
EIG_TOL = 1e-8


class TopologyClass(str, Enum):
    OPEN_OUTSIDE = "OpenOutside"
    AXIS_DEGENERATE = "AxisDegenerate"
    TOROIDAL = "Toroidal"
    INNER_SEPARATRIX = "InnerSeparatrix"
    SIMPLY_CONNECTED = "SimplyConnected"
    ABOVE_MAXIMUM = "AboveMaximum"
    REGIME_OUT_OF_RANGE = "RegimeOutOfRange"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Ellipsoid:
    center: FloatArray
    semi_axes: FloatArray

    def contains(self, p) -> np.ndarray:
        q = (as_points(p) - self.center) / self.semi_axes
        return np.sum(q * q, axis=-1) < 1.0

    def bounding_box(self, inflate: float = 0.0) -> tuple[FloatArray, FloatArray]:
        half = self.semi_axes * (1.0 + inflate)
        return self.center - half, self.center + half


@dataclass(frozen=True)
class SeparatrixData:
    """Null positions on the y-axis, flux thresholds and the outer separatrix."""

    y_minus: float
    y_plus: float
    psi_minus: float
    psi_plus: float
    outer: Ellipsoid

    def to_dict(self) -> dict:
        return {
            "y_minus": self.y_minus,
            "y_plus": self.y_plus,
            "psi_minus": self.psi_minus,
            "psi_plus": self.psi_plus,
            "outer_center": self.outer.center.tolist(),
            "outer_semi_axes": self.outer.semi_axes.tolist(),
        }


@dataclass(frozen=True)
class CriticalSet:
    """Null circle in the midplane plus the two axial nulls on the shifted axis."""

    circle_center: FloatArray
    circle_radius: float
    axial_points: FloatArray  # shape (2, 3)

    def circle_points(self, n: int = 64) -> FloatArray:
        t = 2.0 * np.pi * np.arange(n) / n
        c = self.circle_center
        return np.stack(
            [c[0] + self.circle_radius * np.sin(t), c[1] + self.circle_radius * np.cos(t), np.zeros(n)], axis=-1
        )

    def all_points(self, n: int = 64) -> FloatArray:
        return np.concatenate([self.circle_points(n), self.axial_points])


@dataclass(frozen=True)
class LinearizationResult:
    matrix: FloatArray
    eigenvalues: np.ndarray  # complex, sorted by imaginary part
    f_value: float

    @property
    def omega(self) -> float:
        """Rotation rate ``sqrt(f / sqrt(m))`` of the elliptic orbits in the reduced time."""
        return float(np.max(np.abs(self.eigenvalues.imag)))


@dataclass(frozen=True)
class PsiMaxResult:
    max_psi: float
    argmax: FloatArray
    psi_plus: float
    n_samples: int
    spacing: float  # mean sample spacing (V/N)^(1/3)


@dataclass(frozen=True)
class ValidityBounds:
    sigma_min: float
    r_min: float
    r_max: float
    alpha_safe: float
    alpha_max: float
    regime: str  # "safe", "marginal" or "beyond"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def alpha_critical(params: VortexParams, k: float) -> float:
    """Amplitude at which the axial nulls merge into the midplane.

    ``alpha_c = 1 / (k z_s sqrt(1 + 2 z_s^2 / r_s^2))``.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    return 1.0 / (k * params.z_s * math.sqrt(1.0 + 2.0 * params.z_s**2 / params.r_s**2))


def in_regime(params: VortexParams, pert: PerturbationParams) -> bool:
    return pert.alpha < alpha_critical(params, pert.k)


def _require_regime(params: VortexParams, pert: PerturbationParams) -> None:
    ac = alpha_critical(params, pert.k)
    if not pert.alpha < ac:
        raise RegimeOutOfRange(f"alpha={pert.alpha!r} is not below alpha_c={ac!r}")


def null_positions_y(params: VortexParams, pert: PerturbationParams) -> tuple[float, float]:
    """Roots ``y_-, y_+`` of ``B_z(0, y, 0)``."""
    ak = pert.alpha * pert.k
    rs = params.r_s
    disc = rs * math.sqrt(ak * ak * rs * rs + 8.0)
    return (-ak * rs * rs - disc) / 4.0, (-ak * rs * rs + disc) / 4.0


def outer_separatrix(params: VortexParams, pert: PerturbationParams) -> Ellipsoid:
    dp = nondimensionalize(params, pert)
    sj = math.sqrt(dp.J)
    center = np.array([0.0, -dp.center_offset * params.r_s, 0.0])
    return Ellipsoid(center=center, semi_axes=np.array([params.r_s * sj, params.r_s * sj, params.z_s * sj]))


def separatrix_data(params: VortexParams, pert: PerturbationParams) -> SeparatrixData:
    """Flux thresholds: ``psi_- = psi(0, y_+, 0)`` and ``psi_+ = psi(0, y_-, 0)``.

    Raises
    ------
    RegimeOutOfRange
        If ``alpha >= alpha_c``.
    """
    _require_regime(params, pert)
    y_minus, y_plus = null_positions_y(params, pert)
    psi_minus = eval_psi(params, pert, (0.0, y_plus, 0.0))
    psi_plus = eval_psi(params, pert, (0.0, y_minus, 0.0))
    return SeparatrixData(y_minus, y_plus, psi_minus, psi_plus, outer_separatrix(params, pert))


def critical_set(params: VortexParams, pert: PerturbationParams) -> CriticalSet:
    _require_regime(params, pert)
    dp = nondimensionalize(params, pert)
    at = dp.alpha_tilde
    center = np.array([0.0, -at / 4.0 * params.r_s, 0.0])
    radius = params.r_s * math.sqrt(0.5 + at * at / 16.0)
    zc = params.z_s * math.sqrt(dp.I)
    y0 = axis_offset(params, pert)
    axial = np.array([[0.0, y0, zc], [0.0, y0, -zc]])
    return CriticalSet(circle_center=center, circle_radius=radius, axial_points=axial)


def classify(psi_value: float, params: VortexParams, pert: PerturbationParams) -> TopologyClass:
    """Topology of the flux surface ``psi = psi_value`` by exact threshold comparison."""
    if not in_regime(params, pert):
        return TopologyClass.REGIME_OUT_OF_RANGE
    sep = separatrix_data(params, pert)
    return _classify_against(psi_value, sep.psi_minus, sep.psi_plus)


def _classify_against(psi: float, psi_minus: float, psi_plus: float) -> TopologyClass:
    if psi < 0:
        return TopologyClass.OPEN_OUTSIDE
    if psi == 0:
        return TopologyClass.AXIS_DEGENERATE
    if psi < psi_minus:
        return TopologyClass.TOROIDAL
    if psi == psi_minus:
        return TopologyClass.INNER_SEPARATRIX
    if psi < psi_plus:
        return TopologyClass.SIMPLY_CONNECTED
    return TopologyClass.ABOVE_MAXIMUM


def classify_with_band(
    psi_value: float, params: VortexParams, pert: PerturbationParams, band: float = 0.005
) -> tuple[TopologyClass, bool]:
    """Classification that snaps values within ``band * psi_+`` of ``psi_-`` to the inner separatrix.

    Returns the class and whether the snap happened.  Threshold values quoted to
    three digits land inside the band instead of on an arbitrary side of it.
    """
    exact = classify(psi_value, params, pert)
    if exact is TopologyClass.REGIME_OUT_OF_RANGE:
        return exact, False
    sep = separatrix_data(params, pert)
    if sep.psi_plus > sep.psi_minus and abs(psi_value - sep.psi_minus) <= band * sep.psi_plus:
        return TopologyClass.INNER_SEPARATRIX, exact is not TopologyClass.INNER_SEPARATRIX
    return exact, False


def simply_connected_fraction(params: VortexParams, pert: PerturbationParams) -> float:
    """Share of the compact flux range ``(0, psi_+)`` occupied by simply connected surfaces."""
    if pert.alpha <= 0:
        raise RegimeOutOfRange("fraction requires alpha > 0")
    sep = separatrix_data(params, pert)
    return 1.0 - sep.psi_minus / sep.psi_plus


def f_function(alpha_tilde, y_tilde, m):
    """``f = 2 - (1 + 4m) alpha~ y~ - alpha~^2 m``."""
    return 2.0 - (1.0 + 4.0 * m) * alpha_tilde * y_tilde - alpha_tilde * alpha_tilde * m


def linearization_matrix(xt: float, yt: float, alpha_tilde: float, m: float) -> FloatArray:
    """Jacobian of the reduced field at a midplane point."""
    sm = math.sqrt(m)
    return np.array(
        [
            [0.0, 0.0, xt / sm],
            [0.0, 0.0, (yt - alpha_tilde * m) / sm],
            [-4.0 * xt, -4.0 * yt - alpha_tilde, 0.0],
        ]
    )


def _closed_form_eigs(f: float, m: float) -> np.ndarray:
    w2 = -f / math.sqrt(m)
    w = np.sqrt(complex(w2))
    return np.array([0.0 + 0.0j, w, -w])


def _sort_eigs(e: np.ndarray) -> np.ndarray:
    return e[np.lexsort((e.real, e.imag))]


def linearize_at_critical(p, params: VortexParams, pert: PerturbationParams) -> LinearizationResult:
    """Linearize the reduced flow about a point of the midplane null circle.

    The eigenvalues from a general eigensolver are cross-checked against the
    secular equation ``omega (omega^2 + f / sqrt(m)) = 0``.

    Raises
    ------
    NotCritical
        Field magnitude at ``p`` exceeds ``1e-10 B0`` or ``p`` is off the midplane.
    InternalConsistencyError
        The two eigenvalue routes disagree by more than ``1e-8``.
    """
    q = as_points(p)
    B = eval_total(params, pert, q)
    if np.linalg.norm(B) >= NULL_TOL * params.B0 or abs(q[2]) > NULL_TOL * params.z_s:
        raise NotCritical(f"point {q.tolist()} is not on the midplane null circle (|B|={np.linalg.norm(B):.3e})")
    dp = nondimensionalize(params, pert)
    qt = to_dimensionless_point(params, q)
    M = linearization_matrix(qt[0], qt[1], dp.alpha_tilde, dp.m)
    f = float(f_function(dp.alpha_tilde, qt[1], dp.m))
    numeric = _sort_eigs(np.linalg.eigvals(M).astype(complex))
    closed = _sort_eigs(_closed_form_eigs(f, dp.m))
    scale = max(1.0, float(np.max(np.abs(closed))))
    if np.max(np.abs(numeric - closed)) > EIG_TOL * scale:
        raise InternalConsistencyError(f"eigenvalue mismatch: numeric {numeric}, secular {closed}")
    return LinearizationResult(matrix=M, eigenvalues=numeric, f_value=f)


def critical_intersections(psi_value: float, params: VortexParams, pert: PerturbationParams) -> FloatArray:
    """Points where the surface ``psi = psi_value`` meets the midplane null circle.

    Along the circle ``psi~ = (A - w)(C - w) / 12`` with ``w = alpha~ y~ (1 + 4m)``,
    a quadratic in ``y~``.  Returns an array of shape ``(k, 3)`` (k = 0, 2 or 4),
    physical units, ordered by y then x.
    """
    _require_regime(params, pert)
    dp = nondimensionalize(params, pert)
    at, m = dp.alpha_tilde, dp.m
    pt = float(psi_to_dimensionless(params, psi_value))
    out = []
    if at == 0.0:
        # unperturbed: the whole circle sits at psi~ = 1/4
        return np.empty((0, 3))
    c = at * (1.0 + 4.0 * m)
    disc = (m * (2.0 * m + 1.0) * at * at - 1.0) ** 2 + 12.0 * pt
    if disc < 0:
        return np.empty((0, 3))
    roots = [(2.0 - at * at * m + s * math.sqrt(disc)) / c for s in (-1.0, 1.0)]
    for yt in roots:
        x2 = 0.5 - 0.5 * at * yt - yt * yt
        if x2 < 0:
            continue
        xt = math.sqrt(x2)
        for sx in ((-1.0, 1.0) if xt > 0 else (1.0,)):
            out.append((sx * xt * params.r_s, yt * params.r_s, 0.0))
    return np.array(sorted(out, key=lambda v: (v[1], v[0]))) if out else np.empty((0, 3))


def psi_on_critical_circle(y_tilde, alpha_tilde: float, m: float):
    """Reduced flux along the null circle as a function of ``y~``."""
    w = alpha_tilde * np.asarray(y_tilde) * (1.0 + 4.0 * m)
    A = 1.0 + 2.0 * alpha_tilde**2 * m**2
    C = 3.0 - 2.0 * alpha_tilde**2 * m * (m + 1.0)
    return (A - w) * (C - w) / 12.0


def _default_threads() -> int:
    env = os.environ.get("VORTEX_TOPO_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def psi_maximum_check(
    params: VortexParams,
    pert: PerturbationParams,
    n_samples: int,
    *,
    seed: int = 0,
    threads: int | None = None,
    block: int = 1 << 16,
) -> PsiMaxResult:
    """Largest ``psi`` over a scrambled Sobol sample of the outer separatrix bounding box.

    The sample set depends only on ``seed`` and ``n_samples``; blocks are produced
    by fast-forwarding one generator, so the result is independent of ``threads``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sep = separatrix_data(params, pert)
    lo, hi = sep.outer.bounding_box()
    starts = list(range(0, n_samples, block))

    def run(start: int):
        eng = qmc.Sobol(d=3, scramble=True, seed=seed)
        if start:
            eng.fast_forward(start)
        count = min(block, n_samples - start)
        with warnings.catch_warnings():
            # balance properties only matter for power-of-two totals
            warnings.simplefilter("ignore", UserWarning)
            u = eng.random(count)
        pts = lo + u * (hi - lo)
        psi = eval_psi(params, pert, pts)
        i = int(np.argmax(psi))
        return float(psi[i]), pts[i]

    nthreads = threads or _default_threads()
    if nthreads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]
    best = max(range(len(results)), key=lambda j: (results[j][0], -j))
    volume = float(np.prod(hi - lo))
    return PsiMaxResult(
        max_psi=results[best][0],
        argmax=results[best][1],
        psi_plus=sep.psi_plus,
        n_samples=n_samples,
        spacing=(volume / n_samples) ** (1.0 / 3.0),
    )


def model_validity_bounds(params: VortexParams, pert: PerturbationParams, sigma: float) -> ValidityBounds:
    """Amplitude bounds below which topology conclusions survive an edge layer of thickness ``sigma``.

    ``alpha_safe = (sigma_min / r_s) (r_min / r_max)^2`` and
    ``alpha_max = alpha_safe / (k r_max)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    sigma_min = min(sigma, params.r_s, params.z_s)
    r_min, r_max = params.r_min, params.r_max
    alpha_safe = sigma_min / params.r_s * (r_min / r_max) ** 2
    alpha_max = alpha_safe / (pert.k * r_max)
    if pert.alpha <= alpha_safe:
        regime = "safe"
    elif pert.alpha < alpha_max:
        regime = "marginal"
    else:
        regime = "beyond"
    return ValidityBounds(sigma_min, r_min, r_max, alpha_safe, alpha_max, regime)

