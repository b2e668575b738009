"""General vacuum perturbations built from modified Bessel modes, and their reduction.

A mode ``n`` with complex spectrum ``alpha_n(k)`` contributes the gradient of

    Phi_n = -(c_n B0 / k) cos(n phi) I_n(k r) Im[alpha_n(k) exp(i k z)],

integrated over ``k`` (``c_0 = 1``, ``c_n = 2`` otherwise).  The axial component is
``-c_n B0 cos(n phi) I_n(kr) Re[alpha_n e^{ikz}]``, so for ``n = 1`` the real part of
``alpha_1`` gives the odd-parity (closure-preserving) field and the imaginary part
the even-parity one.  A single odd ``n = 1`` sample of amplitude ``alpha`` at
``k`` reduces, for small ``k r`` and ``k z``, to ``-alpha k B0 (0, z, y)``.

Spectra are finite sample lists.  Integrals over ``k`` use the trapezoid rule on
the sorted grid; a single sample is treated as a delta of unit weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import (
    ConfigError,
    EmptySpectrum,
    NoN1Mode,
    NonPhysicalSpectrum,
    NumericalFailure,
    NuTooLarge,
    OutOfRange,
    ZeroMeanSpectrum,
)
from .field_core import FloatArray, PerturbationParams, VortexParams, as_points, eval_unperturbed

N_MAX = 20
SERIES_CUTOFF = 15.0
SERIES_TERMS = 64
X_MAX = 700.0  # e^x overflows shortly after
PARITY_TOL = 1e-12
REALITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# modified Bessel functions of the first kind


def _series(n: int, x: np.ndarray) -> np.ndarray:
    h2 = 0.25 * x * x
    term = (0.5 * x) ** n / math.factorial(n)
    total = term.copy()
    for j in range(1, SERIES_TERMS):
        term = term * h2 / (j * (j + n))
        total += term
    return total


def _miller(n: int, x: np.ndarray) -> np.ndarray:
    """Downward recurrence normalized with ``e^x = I_0 + 2 sum_k I_k``."""
    top = n + 20 + int(math.sqrt(80.0 * float(np.max(x)))) + int(np.max(x) > 0)
    i_next = np.zeros_like(x)
    i_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    result = np.zeros_like(x)
    for kk in range(top, 0, -1):
        i_prev = 2.0 * kk / x * i_cur + i_next
        i_next, i_cur = i_cur, i_prev
        # i_cur now holds the unnormalized I_{kk-1}
        if kk - 1 == n:
            result = i_cur.copy()
        norm += 2.0 * i_next
        big = i_cur > 1e250
        if np.any(big):
            s = np.where(big, 1e-250, 1.0)
            i_cur *= s
            i_next *= s
            norm *= s
            result *= s
    norm += i_cur
    return result / norm * np.exp(x)


def bessel_In(n: int, x: ArrayLike):
    """Modified Bessel function ``I_n(x)`` for integer ``0 <= n <= 20`` and ``x >= 0``.

    Ascending series below ``x = 15``, normalized downward recurrence above.

    Raises
    ------
    OutOfRange
        For ``n`` outside ``[0, 20]``, negative or non-finite ``x``, or ``x > 700``.
    """
    if int(n) != n or not 0 <= n <= N_MAX:
        raise OutOfRange(f"order n={n!r} outside [0, {N_MAX}]")
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)) or np.any(xa < 0) or np.any(xa > X_MAX):
        raise OutOfRange(f"argument outside [0, {X_MAX}]")
    out = _bessel(int(n), xa)
    return float(out) if out.ndim == 0 else out


def _bessel(n: int, xa: np.ndarray) -> np.ndarray:
    flat = xa.reshape(-1)
    out = np.empty_like(flat)
    low = flat < SERIES_CUTOFF
    if np.any(low):
        out[low] = _series(n, flat[low])
    if np.any(~low):
        out[~low] = _miller(n, flat[~low])
    return out.reshape(xa.shape)


def bessel_In_derivative(n: int, x: ArrayLike):
    """``I_n'(x) = (I_{n-1} + I_{n+1}) / 2`` with ``I_{-1} = I_1``."""
    bessel_In(n, x)  # range checks
    xa = np.asarray(x, dtype=float)
    out = 0.5 * (_bessel(abs(int(n) - 1), xa) + _bessel(int(n) + 1, xa))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class SpectrumMode:
    n: int
    k: FloatArray  # sorted ascending
    weight: np.ndarray  # complex

    def quad_weights(self) -> FloatArray:
        return quadrature_weights(self.k)

    def integral(self, g: ArrayLike | None = None) -> complex:
        """``int alpha_n(k) g(k) dk`` with the module's quadrature rule."""
        vals = self.weight if g is None else self.weight * np.asarray(g)
        return complex(np.sum(self.quad_weights() * vals))


def quadrature_weights(k: FloatArray) -> FloatArray:
    if k.size == 1:
        return np.ones(1)
    dk = np.diff(k)
    w = np.zeros_like(k)
    w[:-1] += 0.5 * dk
    w[1:] += 0.5 * dk
    return w


@dataclass(frozen=True)
class PerturbationSpectrum:
    """Mode content ``alpha_n(k)`` for non-negative integer ``n``."""

    modes: tuple[SpectrumMode, ...]

    @classmethod
    def from_samples(cls, data: dict[int, list[tuple[float, complex]]]) -> "PerturbationSpectrum":
        modes = []
        for n, samples in sorted(data.items()):
            if int(n) != n or n < 0:
                raise ConfigError(f"mode number must be a non-negative integer, got {n!r}")
            if not samples:
                continue
            ks = np.array([float(s[0]) for s in samples])
            ws = np.array([complex(s[1]) for s in samples])
            if np.any(~np.isfinite(ks)) or np.any(ks <= 0):
                raise ConfigError(f"mode {n}: every k must be positive")
            if np.any(~np.isfinite(ws)):
                raise ConfigError(f"mode {n}: non-finite weight")
            order = np.argsort(ks, kind="stable")
            ks, ws = ks[order], ws[order]
            if np.any(np.diff(ks) == 0):
                raise ConfigError(f"mode {n}: repeated k sample")
            modes.append(SpectrumMode(int(n), ks, ws))
        return cls(tuple(modes))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PerturbationSpectrum":
        try:
            entries = obj["modes"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("spectrum needs a 'modes' list") from exc
        data: dict[int, list] = {}
        for entry in entries:
            n = entry["n"]
            if n in data:
                raise ConfigError(f"mode {n} listed twice")
            data[n] = [(s[0], complex(s[1], s[2])) for s in entry["samples"]]
        return cls.from_samples(data)

    @classmethod
    def from_json(cls, text: str) -> "PerturbationSpectrum":
        return cls.from_json_obj(json.loads(text))

    def to_json_obj(self) -> dict:
        return {
            "modes": [
                {"n": m.n, "samples": [[float(k), float(w.real), float(w.imag)] for k, w in zip(m.k, m.weight)]}
                for m in self.modes
            ]
        }

    def mode(self, n: int) -> SpectrumMode | None:
        for m in self.modes:
            if m.n == n:
                return m
        return None

    @property
    def k_max(self) -> float:
        return max(float(m.k[-1]) for m in self.modes) if self.modes else 0.0

    @property
    def beyond_longwave(self) -> bool:
        """True if modes with ``n >= 2`` are present (ignored by the reductions)."""
        return any(m.n >= 2 for m in self.modes)


def single_mode(n: int, k: float, alpha: complex) -> PerturbationSpectrum:
    return PerturbationSpectrum.from_samples({n: [(k, alpha)]})


# ---------------------------------------------------------------------------
# synthesis


def synthesize(spectrum: PerturbationSpectrum, params: VortexParams, p: ArrayLike, modes=None) -> FloatArray:
    """Perturbation field in Cartesian components at points ``(..., 3)``.

    ``modes`` optionally restricts the sum to the given mode numbers.

    Raises
    ------
    EmptySpectrum
        No modes (or none of the requested ones) are present.
    """
    selected = [m for m in spectrum.modes if modes is None or m.n in modes]
    if not selected:
        raise EmptySpectrum("spectrum has no modes to synthesize")
    q = as_points(p)
    shape = q.shape[:-1]
    q = q.reshape(-1, 3)
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    r = np.hypot(x, y)
    phi = np.arctan2(x, y)
    br = np.zeros_like(r)
    bphi = np.zeros_like(r)
    bz = np.zeros_like(r)
    B0 = params.B0
    for mode in selected:
        n = mode.n
        c = 1.0 if n == 0 else 2.0
        wq = mode.quad_weights()
        kr = np.outer(r, mode.k)
        E = mode.weight[None, :] * np.exp(1j * np.outer(z, mode.k))
        re_e = wq * E.real
        im_e = wq * E.imag
        i_n = bessel_In(n, kr)
        i_lo = _bessel(abs(n - 1), kr)
        i_hi = _bessel(n + 1, kr)
        cos_n = np.cos(n * phi)
        bz += -c * B0 * cos_n * np.sum(i_n * re_e, axis=1)
        br += -c * B0 * cos_n * np.sum(0.5 * (i_lo + i_hi) * im_e, axis=1)
        if n > 0:
            # (n / kr) I_n = (I_{n-1} - I_{n+1}) / 2 keeps the axis regular
            bphi += c * B0 * np.sin(n * phi) * np.sum(0.5 * (i_lo - i_hi) * im_e, axis=1)
    sphi, cphi = np.sin(phi), np.cos(phi)
    out = np.stack([br * sphi + bphi * cphi, br * cphi - bphi * sphi, bz], axis=-1)
    return out.reshape(*shape, 3)


def synthesize_total(spectrum: PerturbationSpectrum, params: VortexParams, p: ArrayLike, modes=None) -> FloatArray:
    return eval_unperturbed(params, p) + synthesize(spectrum, params, p, modes)


# ---------------------------------------------------------------------------
# parity split and reductions


@dataclass(frozen=True)
class ParitySplit:
    """Odd (``alpha_-``, real part) and even (``alpha_+``, imaginary part) ``n = 1`` content."""

    k: FloatArray
    odd: FloatArray
    even: FloatArray
    closure_preserving: bool

    def recombine(self) -> np.ndarray:
        return self.odd + 1j * self.even

    def odd_mode(self) -> SpectrumMode:
        return SpectrumMode(1, self.k, self.odd.astype(complex))


def parity_split(spectrum: PerturbationSpectrum) -> ParitySplit:
    """Split ``alpha_1 = alpha_- + i alpha_+`` and flag closure preservation.

    Raises
    ------
    NoN1Mode
        The spectrum has no ``n = 1`` samples.
    """
    mode = spectrum.mode(1)
    if mode is None:
        raise NoN1Mode("spectrum has no n = 1 mode")
    odd = mode.weight.real.copy()
    even = mode.weight.imag.copy()
    total = float(np.linalg.norm(mode.weight))
    flag = bool(np.linalg.norm(even) < PARITY_TOL * total) if total > 0 else True
    return ParitySplit(k=mode.k.copy(), odd=odd, even=even, closure_preserving=flag)


@dataclass(frozen=True)
class RescaleResult:
    mu: float
    nu: float
    new_params: VortexParams
    z_shift: float
    adjusted_alpha1: SpectrumMode | None

    def to_dict(self) -> dict:
        d = {
            "mu": self.mu,
            "nu": self.nu,
            "B0": self.new_params.B0,
            "r_s": self.new_params.r_s,
            "z_s": self.new_params.z_s,
            "z_shift": self.z_shift,
        }
        if self.adjusted_alpha1 is not None:
            a = self.adjusted_alpha1
            d["adjusted_alpha1"] = [[float(k), float(w.real), float(w.imag)] for k, w in zip(a.k, a.weight)]
        return d


def _real_or_reject(value: complex, name: str, scale: float) -> float:
    if abs(value.imag) > REALITY_TOL * max(scale, abs(value.real), 1e-300):
        raise NonPhysicalSpectrum(f"{name} has imaginary residue {value.imag!r}")
    return float(value.real)


def absorb_n0(spectrum: PerturbationSpectrum, params: VortexParams) -> RescaleResult:
    """Absorb the axisymmetric ``n = 0`` content into rescaled vortex parameters.

    ``nu = int alpha_0 dk`` and ``mu = (i/2) int alpha_0 k dk`` must both be real.
    To first order in ``k`` the ``n = 0`` field is ``B0 (mu r, 0, -(nu + 2 mu z))``,
    which turns the vortex into one with ``B0' = B0 (1 - nu)``,
    ``r_s' = r_s sqrt(1 - nu)``, ``z_s' = z_s sqrt(1 - nu)`` centred at
    ``z' = z + mu z_s^2``.

    Raises
    ------
    NuTooLarge
        If ``nu >= 1``.
    NonPhysicalSpectrum
        If ``mu`` or ``nu`` carry an imaginary part.
    """
    mode0 = spectrum.mode(0)
    mode1 = spectrum.mode(1)
    if mode0 is None:
        mu = nu = 0.0
    else:
        scale = float(np.sum(mode0.quad_weights() * np.abs(mode0.weight)))
        nu = _real_or_reject(mode0.integral(), "nu", scale)
        mu = _real_or_reject(0.5j * mode0.integral(mode0.k), "mu", 0.5 * scale * float(mode0.k[-1]))
    if nu >= 1.0:
        raise NuTooLarge(f"nu={nu!r} >= 1: rescaling undefined")
    s = math.sqrt(1.0 - nu)
    new = VortexParams(params.B0 * (1.0 - nu), params.r_s * s, params.z_s * s)
    z_shift = mu * params.z_s**2
    adjusted = None
    if mode1 is not None:
        w = mode1.weight * np.exp(-1j * mode1.k * z_shift) / (1.0 - nu)
        adjusted = SpectrumMode(1, mode1.k.copy(), w)
    return RescaleResult(mu=mu, nu=nu, new_params=new, z_shift=z_shift, adjusted_alpha1=adjusted)


@dataclass(frozen=True)
class LongwaveReduction:
    alpha_avg: float
    k_avg: float
    effective: PerturbationParams
    mirror_y: bool  # the canonical field must be reflected y -> -y

    @property
    def alpha_k(self) -> float:
        """Signed product ``<alpha><k>``."""
        return self.alpha_avg * self.k_avg

    def to_dict(self) -> dict:
        return {
            "alpha_avg": self.alpha_avg,
            "k_avg": self.k_avg,
            "alpha_k": self.alpha_k,
            "effective_alpha": self.effective.alpha,
            "effective_k": self.effective.k,
            "mirror_y": self.mirror_y,
        }


def longwave_reduce(split: ParitySplit) -> LongwaveReduction:
    """Moments ``<alpha> = int alpha_- dk`` and ``<k> = int alpha_- k dk / <alpha>``.

    The equivalent canonical amplitude is ``|<alpha>|`` at wavenumber ``|<k>|``;
    a negative product corresponds to the canonical field mirrored in ``y``.

    Raises
    ------
    ZeroMeanSpectrum
        If ``<alpha>`` or ``<k>`` vanishes.
    """
    w = quadrature_weights(split.k)
    a_avg = float(np.sum(w * split.odd))
    scale = float(np.sum(w * np.abs(split.odd)))
    if scale == 0.0 or abs(a_avg) <= 1e-14 * scale:
        raise ZeroMeanSpectrum("odd n = 1 content has zero mean")
    k_avg = float(np.sum(w * split.odd * split.k)) / a_avg
    if k_avg == 0.0:
        raise ZeroMeanSpectrum("odd n = 1 content has zero first moment")
    eff = PerturbationParams(alpha=abs(a_avg), k=abs(k_avg))
    return LongwaveReduction(alpha_avg=a_avg, k_avg=k_avg, effective=eff, mirror_y=a_avg * k_avg < 0)


def canonical_field(params: VortexParams, red: LongwaveReduction, p: ArrayLike) -> FloatArray:
    """``-<alpha><k> B0 (0, z, y)`` including its sign."""
    q = as_points(p)
    zeros = np.zeros(q.shape[:-1])
    return -red.alpha_k * params.B0 * np.stack([zeros, q[..., 2], q[..., 1]], axis=-1)


# ---------------------------------------------------------------------------
# direct numerical thresholds


@dataclass(frozen=True)
class NumericalThresholds:
    y_axis: float
    y_minus: float
    y_plus: float
    psi_minus: float
    psi_plus: float

    @property
    def ratio(self) -> float:
        return self.psi_minus / self.psi_plus


def numerical_psi_thresholds(field, params: VortexParams) -> NumericalThresholds:
    """Separatrix fluxes of an arbitrary odd-parity field, without any flux function.

    ``field`` maps points ``(..., 3)`` to Cartesian field vectors.  The axis line
    crosses the midplane where ``dB_y/dz`` vanishes on the y-axis; the nulls
    ``y_-`` and ``y_+`` are the roots of ``B_z(0, y, 0)`` on either side, and the
    flux out to a radius ``u`` from the axis is ``int_0^u u' B_z du'``.
    """
    rs = params.r_s
    dz = 1e-6 * params.z_s

    def dby_dz(y: float) -> float:
        return float((field((0.0, y, dz))[1] - field((0.0, y, -dz))[1]) / (2.0 * dz))

    def bz(y: float) -> float:
        return float(field((0.0, y, 0.0))[2])

    try:
        y_axis = brentq(dby_dz, -0.5 * rs, 0.5 * rs, xtol=1e-15 * rs)
        y_plus = brentq(bz, y_axis + 1e-6 * rs, 1.2 * rs, xtol=1e-15 * rs)
        y_minus = brentq(bz, -1.2 * rs, y_axis - 1e-6 * rs, xtol=1e-15 * rs)
    except ValueError as exc:
        raise NumericalFailure(f"null bracketing failed: {exc}") from exc

    def flux(y_end: float) -> float:
        sign = 1.0 if y_end > y_axis else -1.0
        val, _ = quad(lambda u: u * bz(y_axis + sign * u), 0.0, abs(y_end - y_axis), epsabs=0.0, epsrel=1e-13,
                      limit=200)
        return val

    return NumericalThresholds(y_axis, y_minus, y_plus, flux(y_plus), flux(y_minus))


@dataclass
class ReductionReport:
    split: ParitySplit
    rescale: RescaleResult
    reduction: LongwaveReduction | None
    kr_max: float
    beyond_longwave: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "closure_preserving": self.split.closure_preserving,
            "even_norm": float(np.linalg.norm(self.split.even)),
            "odd_norm": float(np.linalg.norm(self.split.odd)),
            "rescale": self.rescale.to_dict(),
            "reduction": None if self.reduction is None else self.reduction.to_dict(),
            "k_max_r_max": self.kr_max,
            "beyond_longwave": self.beyond_longwave,
            "notes": list(self.notes),
        }


def reduce_spectrum(spectrum: PerturbationSpectrum, params: VortexParams) -> ReductionReport:
    """Full pipeline: absorb ``n = 0``, split ``n = 1`` parity, reduce the odd part."""
    if not spectrum.modes:
        raise EmptySpectrum("spectrum has no modes")
    rescale = absorb_n0(spectrum, params)
    mode1 = rescale.adjusted_alpha1
    if mode1 is None:
        raise NoN1Mode("spectrum has no n = 1 mode")
    split = parity_split(PerturbationSpectrum((mode1,)))
    notes = []
    if not split.closure_preserving:
        notes.append("even-parity n = 1 content present: field lines are not closed")
    if spectrum.beyond_longwave:
        notes.append("modes with n >= 2 present: excluded from the reduction")
    reduction = longwave_reduce(split)
    kr = spectrum.k_max * rescale.new_params.r_max
    if kr > 0.1:
        notes.append("k_max * r_max above 0.1: long-wave reduction is approximate")
    return ReductionReport(split, rescale, reduction, kr, spectrum.beyond_longwave, notes)
