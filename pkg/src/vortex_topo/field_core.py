"""Perturbed zero-helicity vortex: field, modified flux function, shifted azimuth.

Azimuth convention is ``x = r sin(phi)``, ``y = r cos(phi)``, so ``phi`` grows
clockwise seen from +z and ``phi = 0`` points along +y.  The perturbation
``-alpha*B0*(k z cos phi, -k z sin phi, k r cos phi)`` in ``(r, phi, z)``
components is therefore ``-alpha*k*B0*(0, z, y)`` in Cartesian components.

All evaluators accept a single point (``Point3`` or a length-3 sequence) or an
array of shape ``(..., 3)`` and work in dimensionless variables internally:

    x~ = x/r_s, y~ = y/r_s, z~ = z/z_s, alpha~ = alpha*k*r_s, m = z_s^2/r_s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import OnAxis

FloatArray = NDArray[np.float64]

TWO_PI = 2.0 * math.pi
ON_AXIS_TOL = 1e-12  # fraction of r_s
FD_STEP = 1e-6  # fraction of the length scale


@dataclass(frozen=True)
class VortexParams:
    """Unperturbed vortex: strength ``B0`` and separatrix scales ``r_s``, ``z_s`` (m)."""

    B0: float
    r_s: float
    z_s: float

    def __post_init__(self) -> None:
        for name in ("B0", "r_s", "z_s"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")

    @property
    def m(self) -> float:
        return self.z_s**2 / self.r_s**2

    @property
    def r_max(self) -> float:
        return max(self.r_s, self.z_s)

    @property
    def r_min(self) -> float:
        return min(self.r_s, self.z_s)


@dataclass(frozen=True)
class PerturbationParams:
    """Odd-parity perturbation amplitude ``alpha`` and axial wavenumber ``k`` (1/m)."""

    alpha: float
    k: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValueError(f"k must be > 0, got {self.k!r}")


@dataclass(frozen=True)
class DimensionlessParams:
    alpha_tilde: float
    m: float
    J: float
    alpha_tilde_c: float

    @property
    def shift(self) -> float:
        """Dimensionless y-offset of the shifted axis line, ``alpha~ * m``."""
        return self.alpha_tilde * self.m

    @property
    def center_offset(self) -> float:
        """``alpha~ (1 + m) / 3``: the outer separatrix sits at ``y~ = -center_offset``."""
        return self.alpha_tilde * (1.0 + self.m) / 3.0

    @property
    def I(self) -> float:  # noqa: E743
        return 1.0 - (self.alpha_tilde / self.alpha_tilde_c) ** 2

    @property
    def a(self) -> float:
        return 2.0 * self.alpha_tilde * (1.0 + 4.0 * self.m) / 3.0


@dataclass(frozen=True)
class Point3:
    """Cartesian point in metres."""

    x: float
    y: float
    z: float

    @classmethod
    def from_cylindrical(cls, r: float, phi: float, z: float) -> "Point3":
        return cls(r * math.sin(phi), r * math.cos(phi), z)

    @property
    def r(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def phi(self) -> float:
        return math.atan2(self.x, self.y) % TWO_PI

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __array__(self, dtype=None, copy=None):
        return self.as_array() if dtype is None else self.as_array().astype(dtype)

    def __iter__(self):
        yield from (self.x, self.y, self.z)


@dataclass(frozen=True)
class FluxLabel:
    psi: float
    varphi: float


@dataclass(frozen=True)
class PsiIntermediates:
    """Dimensionless ``u``, ``v`` vectors and the scalar ``J`` behind the flux function."""

    u: FloatArray
    v: FloatArray
    J: float


def as_points(p: ArrayLike) -> FloatArray:
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != 3:
        raise ValueError(f"points must have trailing dimension 3, got shape {arr.shape}")
    return arr


def nondimensionalize(params: VortexParams, pert: PerturbationParams) -> DimensionlessParams:
    m = params.m
    at = pert.alpha * pert.k * params.r_s
    J = 1.0 - at * at * (m + 1.0) * (2.0 * m - 1.0) / 9.0
    return DimensionlessParams(alpha_tilde=at, m=m, J=J, alpha_tilde_c=1.0 / math.sqrt(m * (1.0 + 2.0 * m)))


def to_dimensionless_point(params: VortexParams, p: ArrayLike) -> FloatArray:
    q = as_points(p).copy()
    q[..., 0] /= params.r_s
    q[..., 1] /= params.r_s
    q[..., 2] /= params.z_s
    return q


def from_dimensionless_point(params: VortexParams, q: ArrayLike) -> FloatArray:
    p = as_points(q).copy()
    p[..., 0] *= params.r_s
    p[..., 1] *= params.r_s
    p[..., 2] *= params.z_s
    return p


def psi_to_dimensionless(params: VortexParams, psi):
    return 2.0 * np.asarray(psi, dtype=float) / (params.B0 * params.r_s**2)


def psi_from_dimensionless(params: VortexParams, psi_tilde):
    return 0.5 * params.B0 * params.r_s**2 * np.asarray(psi_tilde, dtype=float)


def field_to_dimensionless(params: VortexParams, B: ArrayLike) -> FloatArray:
    return np.asarray(B, dtype=float) / params.B0


def field_from_dimensionless(params: VortexParams, Bt: ArrayLike) -> FloatArray:
    return np.asarray(Bt, dtype=float) * params.B0


# ---------------------------------------------------------------------------
# dimensionless kernels (x~, y~, z~ arrays)


def _b_unperturbed_tilde(xt, yt, zt, m):
    sm = math.sqrt(m)
    return np.stack([xt * zt / sm, yt * zt / sm, 1.0 - 2.0 * (xt * xt + yt * yt) - zt * zt], axis=-1)


def _db_tilde(xt, yt, zt, at, m):
    # -alpha k B0 (0, z, y) in reduced units
    return np.stack([np.zeros_like(xt), -at * math.sqrt(m) * zt, -at * yt], axis=-1)


def _psi_tilde(xt, yt, zt, dp: DimensionlessParams):
    u2 = xt * xt + (yt - dp.shift) ** 2
    v2 = xt * xt + (yt + dp.center_offset) ** 2 + zt * zt
    return u2 * (dp.J - v2)


def _split(params: VortexParams, p: ArrayLike):
    q = to_dimensionless_point(params, p)
    return q[..., 0], q[..., 1], q[..., 2]


# ---------------------------------------------------------------------------
# public evaluators


def eval_unperturbed(params: VortexParams, p: ArrayLike) -> FloatArray:
    """Soloviev / Hill's vortex field ``B0 (rz/z_s^2, 0, 1 - 2r^2/r_s^2 - z^2/z_s^2)``, Cartesian."""
    xt, yt, zt = _split(params, p)
    return params.B0 * _b_unperturbed_tilde(xt, yt, zt, params.m)


def eval_perturbation(params: VortexParams, pert: PerturbationParams, p: ArrayLike) -> FloatArray:
    """Odd-parity curl-free perturbation, Cartesian components."""
    xt, yt, zt = _split(params, p)
    at = pert.alpha * pert.k * params.r_s
    return params.B0 * _db_tilde(xt, yt, zt, at, params.m)


def eval_total(params: VortexParams, pert: PerturbationParams, p: ArrayLike) -> FloatArray:
    xt, yt, zt = _split(params, p)
    at = pert.alpha * pert.k * params.r_s
    return params.B0 * (_b_unperturbed_tilde(xt, yt, zt, params.m) + _db_tilde(xt, yt, zt, at, params.m))


def eval_psi(params: VortexParams, pert: PerturbationParams, p: ArrayLike):
    """Modified flux function in Wb.

    Scalar input gives a float; ``(..., 3)`` input gives an array of shape ``(...)``.
    """
    dp = nondimensionalize(params, pert)
    xt, yt, zt = _split(params, p)
    out = psi_from_dimensionless(params, _psi_tilde(xt, yt, zt, dp))
    return float(out) if out.ndim == 0 else out


def psi_unperturbed(params: VortexParams, p: ArrayLike):
    """Axisymmetric flux ``(B0/2) r^2 (1 - r^2/r_s^2 - z^2/z_s^2)``."""
    q = as_points(p)
    r2 = q[..., 0] ** 2 + q[..., 1] ** 2
    out = 0.5 * params.B0 * r2 * (1.0 - r2 / params.r_s**2 - q[..., 2] ** 2 / params.z_s**2)
    return float(out) if np.ndim(out) == 0 else out


def psi_intermediates(params: VortexParams, pert: PerturbationParams, p: ArrayLike) -> PsiIntermediates:
    dp = nondimensionalize(params, pert)
    xt, yt, zt = _split(params, p)
    u = np.stack([xt, yt - dp.shift, np.zeros_like(xt)], axis=-1)
    v = np.stack([xt, yt + dp.center_offset, zt], axis=-1)
    return PsiIntermediates(u=u, v=v, J=dp.J)


def axis_offset(params: VortexParams, pert: PerturbationParams) -> float:
    """Physical y-coordinate of the shifted axis line ``L``: ``alpha k z_s^2``."""
    return pert.alpha * pert.k * params.z_s**2


def eval_varphi(params: VortexParams, pert: PerturbationParams, p: ArrayLike):
    """Shifted azimuth in ``[0, 2 pi)`` about the line ``x = 0, y = alpha k z_s^2``.

    Raises
    ------
    OnAxis
        If any point lies within ``1e-12 r_s`` of the shifted axis.
    """
    q = as_points(p)
    dx = q[..., 0]
    dy = q[..., 1] - axis_offset(params, pert)
    if np.any(np.hypot(dx, dy) < ON_AXIS_TOL * params.r_s):
        raise OnAxis("shifted azimuth undefined on the axis line L")
    ang = np.mod(np.arctan2(dx, dy), TWO_PI)
    ang = np.where(ang >= TWO_PI, 0.0, ang)
    return float(ang) if ang.ndim == 0 else ang


def eval_label(params: VortexParams, pert: PerturbationParams, p: ArrayLike) -> FluxLabel:
    return FluxLabel(psi=float(eval_psi(params, pert, p)), varphi=float(eval_varphi(params, pert, p)))


def wrap_angle(d):
    """Map an angle difference into ``[-pi, pi)``."""
    return np.mod(np.asarray(d) + math.pi, TWO_PI) - math.pi


# ---------------------------------------------------------------------------
# finite-difference verification helpers


def fd_gradient(f: Callable[[FloatArray], FloatArray], p: ArrayLike, h: float, *, angular: bool = False) -> FloatArray:
    """Central-difference gradient of a scalar field at points ``(..., 3)``.

    ``angular=True`` wraps each difference into ``[-pi, pi)`` so a branch cut
    of an angle-valued field does not pollute the derivative.
    """
    q = as_points(p)
    grads = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        d = np.asarray(f(q + e)) - np.asarray(f(q - e))
        if angular:
            d = wrap_angle(d)
        grads.append(d / (2.0 * h))
    return np.stack(grads, axis=-1)


def fd_jacobian(f: Callable[[FloatArray], FloatArray], p: ArrayLike, h: float) -> FloatArray:
    """``J[..., i, j] = d f_i / d x_j`` by central differences."""
    q = as_points(p)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((np.asarray(f(q + e)) - np.asarray(f(q - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_divergence(f: Callable[[FloatArray], FloatArray], p: ArrayLike, h: float):
    jac = fd_jacobian(f, p, h)
    return jac[..., 0, 0] + jac[..., 1, 1] + jac[..., 2, 2]


def fd_curl(f: Callable[[FloatArray], FloatArray], p: ArrayLike, h: float) -> FloatArray:
    jac = fd_jacobian(f, p, h)
    return np.stack(
        [
            jac[..., 2, 1] - jac[..., 1, 2],
            jac[..., 0, 2] - jac[..., 2, 0],
            jac[..., 1, 0] - jac[..., 0, 1],
        ],
        axis=-1,
    )


def flux_representation_residual(
    params: VortexParams, pert: PerturbationParams, p: ArrayLike, h: float | None = None
):
    """Relative mismatch between ``B`` and the flux representation built from ``psi`` and ``varphi``.

    Because ``varphi`` grows clockwise (``x = u sin varphi``), the representation
    reads ``B = grad(varphi) x grad(psi)``; with a counter-clockwise angle the same
    identity is the familiar ``grad(psi) x grad(phi)``.  Gradients use central
    differences with step ``h`` (default ``1e-6 r_s``).
    """
    q = as_points(p)
    eval_varphi(params, pert, q)  # raises OnAxis
    h = FD_STEP * params.r_s if h is None else h
    gpsi = fd_gradient(lambda s: eval_psi(params, pert, s), q, h)
    gphi = fd_gradient(lambda s: eval_varphi(params, pert, s), q, h, angular=True)
    B = eval_total(params, pert, q)
    rep = np.cross(gphi, gpsi)
    out = np.linalg.norm(B - rep, axis=-1) / np.linalg.norm(B, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
