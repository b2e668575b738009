"""Charged-particle orbits in the static perturbed vortex field (Boris pusher).

Positions live on integer steps and velocities on half steps.  Output samples
are time-centred: the stored position is the midpoint ``(x_n + x_{n+1}) / 2``
paired with ``v_{n+1/2}``, both at ``t = (n + 1/2) dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .field_core import FloatArray, PerturbationParams, VortexParams
from .topology import separatrix_data

C_LIGHT = constants.c
ELECTRON_CHARGE = -constants.e
ELECTRON_MASS = constants.m_e
STEP_FRACTION_MAX = 0.05


@dataclass(frozen=True)
class ParticleState:
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    charge: float
    mass: float

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.charge == 0:
            raise ValueError("charge must be nonzero")

    @property
    def speed(self) -> float:
        return math.sqrt(sum(c * c for c in self.velocity))

    @property
    def kinetic_energy(self) -> float:
        return 0.5 * self.mass * self.speed**2

    def reversed(self) -> "ParticleState":
        return ParticleState(self.position, tuple(-c for c in self.velocity), self.charge, self.mass)


@dataclass(frozen=True)
class OrbitConfig:
    """Step, duration (both in units of the on-axis cyclotron period), output stride and ``s``."""

    dt: float = 0.01
    duration: float = 1e4
    decimation: int = 10
    s_target: float = 800.0

    def __post_init__(self) -> None:
        if not 0 < self.dt <= STEP_FRACTION_MAX:
            raise ValueError(f"dt must be in (0, {STEP_FRACTION_MAX}] cyclotron periods")
        if not self.duration >= 1:
            raise ValueError("duration must be at least one cyclotron period")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ValueError("decimation must be a positive integer")
        if not self.s_target > 0:
            raise ValueError("s_target must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class Trajectory:
    t: FloatArray
    position: FloatArray  # (N, 3)
    velocity: FloatArray  # (N, 3)
    kinetic_energy: FloatArray
    mu: FloatArray
    s_local: FloatArray
    varphi: FloatArray
    tau_ce: float
    dt: float
    r_s: float
    warnings: list[str] = field(default_factory=list)
    final_state: ParticleState | None = None

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.kinetic_energy - self.kinetic_energy[0])) / self.kinetic_energy[0])

    def rows(self) -> list[tuple]:
        return [
            (float(t), *map(float, p), *map(float, v), float(ke), float(mu), float(sl))
            for t, p, v, ke, mu, sl in zip(
                self.t, self.position, self.velocity, self.kinetic_energy, self.mu, self.s_local
            )
        ]


def cyclotron_period(params: VortexParams, charge: float, mass: float) -> float:
    """``tau_ce = 2 pi m / (|q| B0)``."""
    return 2.0 * math.pi * mass / (abs(charge) * params.B0)


def speed_for_s(params: VortexParams, s: float, charge: float, mass: float) -> float:
    """Speed whose gyro-radius in ``B0`` is ``rho = 0.3 r_s / s``."""
    rho = 0.3 * params.r_s / s
    return rho * abs(charge) * params.B0 / mass


def make_initial_state(
    params: VortexParams,
    config: OrbitConfig,
    position,
    seed: int,
    charge: float = ELECTRON_CHARGE,
    mass: float = ELECTRON_MASS,
) -> ParticleState:
    """Particle at ``position`` with speed set by ``s_target`` and an isotropic random direction."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    v = speed_for_s(params, config.s_target, charge, mass) * d
    return ParticleState(tuple(map(float, position)), tuple(map(float, v)), charge, mass)


def start_on_null_ray(params: VortexParams, reference: PerturbationParams, fraction: float) -> tuple[float, float, float]:
    """Point on the ``-y`` ray from the shifted axis toward the inner null of ``reference``.

    ``fraction=0`` is the shifted axis and ``fraction=1`` the null point ``(0, y_-, 0)``.
    """
    y_axis = reference.alpha * reference.k * params.z_s**2
    y_null = separatrix_data(params, reference).y_minus
    return (0.0, float(y_axis + fraction * (y_null - y_axis)), 0.0)


def boris_kick(v, b, qm: float, dt: float) -> tuple[float, float, float]:
    """Rotate ``v`` about ``b`` by the Boris angle for step ``dt`` (no electric field)."""
    vx, vy, vz = v
    h = 0.5 * qm * dt
    tx, ty, tz = h * b[0], h * b[1], h * b[2]
    f = 2.0 / (1.0 + tx * tx + ty * ty + tz * tz)
    sx, sy, sz = f * tx, f * ty, f * tz
    px = vx + (vy * tz - vz * ty)
    py = vy + (vz * tx - vx * tz)
    pz = vz + (vx * ty - vy * tx)
    return (vx + (py * sz - pz * sy), vy + (pz * sx - px * sz), vz + (px * sy - py * sx))


def boris_step(state: ParticleState, b, dt: float) -> ParticleState:
    """Kick with the field ``b`` at the current position, then drift a full step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = boris_kick(state.velocity, b, state.charge / state.mass, dt)
    x = tuple(p + c * dt for p, c in zip(state.position, v))
    return ParticleState(x, v, state.charge, state.mass)


def _field_fn(params: VortexParams, pert: PerturbationParams):
    B0 = params.B0
    irs2 = 1.0 / params.r_s**2
    izs2 = 1.0 / params.z_s**2
    ak = pert.alpha * pert.k

    def field_at(x: float, y: float, z: float) -> tuple[float, float, float]:
        return (
            B0 * x * z * izs2,
            B0 * (y * z * izs2 - ak * z),
            B0 * (1.0 - 2.0 * (x * x + y * y) * irs2 - z * z * izs2 - ak * y),
        )

    return field_at


def run_orbit(
    initial: ParticleState, params: VortexParams, pert: PerturbationParams, config: OrbitConfig
) -> Trajectory:
    """Fixed-step Boris integration with decimated, time-centred output.

    ``initial`` is the state at ``t = 0``; its velocity is kicked back half a
    step to ``v_{-1/2}`` so the scheme stays second order.  Steps where ``dt`` exceeds
    ``0.05`` of the local cyclotron period are counted and reported as a warning.
    """
    field_at = _field_fn(params, pert)
    tau = cyclotron_period(params, initial.charge, initial.mass)
    dt = config.dt * tau
    qm = initial.charge / initial.mass
    h = 0.5 * qm * dt
    b_limit = STEP_FRACTION_MAX * 2.0 * math.pi / (abs(qm) * dt)  # |B| above which dt > 0.05 tau_local
    b_limit2 = b_limit * b_limit
    warnings: list[str] = []
    if initial.speed >= 0.1 * C_LIGHT:
        warnings.append(f"speed {initial.speed:.6g} m/s exceeds c/10; non-relativistic pusher used anyway")

    x, y, z = initial.position
    vx, vy, vz = boris_kick(initial.velocity, field_at(x, y, z), qm, -0.5 * dt)
    n_steps = config.n_steps
    stride = int(config.decimation)
    out_t, out_p, out_v = [], [], []
    too_large = 0
    first_large = -1
    for n in range(n_steps):
        bx, by, bz = field_at(x, y, z)
        b2 = bx * bx + by * by + bz * bz
        if b2 > b_limit2:
            too_large += 1
            if first_large < 0:
                first_large = n
        tx, ty, tz = h * bx, h * by, h * bz
        f = 2.0 / (1.0 + tx * tx + ty * ty + tz * tz)
        sx, sy, sz = f * tx, f * ty, f * tz
        px = vx + (vy * tz - vz * ty)
        py = vy + (vz * tx - vx * tz)
        pz = vz + (vx * ty - vy * tx)
        vx, vy, vz = vx + (py * sz - pz * sy), vy + (pz * sx - px * sz), vz + (px * sy - py * sx)
        nx, ny, nz = x + vx * dt, y + vy * dt, z + vz * dt
        if n % stride == 0:
            out_t.append((n + 0.5) * dt)
            out_p.append((0.5 * (x + nx), 0.5 * (y + ny), 0.5 * (z + nz)))
            out_v.append((vx, vy, vz))
        x, y, z = nx, ny, nz
    if too_large:
        warnings.append(f"StepTooLarge: dt > {STEP_FRACTION_MAX} local cyclotron periods on {too_large} steps "
                        f"(first at step {first_large})")
    traj = _diagnostics(np.array(out_t), np.array(out_p), np.array(out_v), initial, params, pert, tau, dt)
    traj.warnings = warnings
    traj.final_state = ParticleState((x, y, z), (vx, vy, vz), initial.charge, initial.mass)
    return traj


def run_orbit_reverse(state: ParticleState, params: VortexParams, pert: PerturbationParams, dt: float,
                      n_steps: int) -> ParticleState:
    """Undo ``n_steps`` forward Boris steps of size ``dt`` (seconds): drift back, then inverse kick."""
    field_at = _field_fn(params, pert)
    qm = state.charge / state.mass
    x, y, z = state.position
    v = state.velocity
    for _ in range(n_steps):
        x, y, z = x - v[0] * dt, y - v[1] * dt, z - v[2] * dt
        v = boris_kick(v, field_at(x, y, z), qm, -dt)
    return ParticleState((x, y, z), v, state.charge, state.mass)


def leapfrog_start(state: ParticleState, params: VortexParams, pert: PerturbationParams,
                   dt: float) -> ParticleState:
    """Same position with the velocity kicked back to ``t = -dt/2``."""
    v = boris_kick(state.velocity, _field_fn(params, pert)(*state.position), state.charge / state.mass, -0.5 * dt)
    return ParticleState(state.position, v, state.charge, state.mass)


def run_orbit_steps(state: ParticleState, params: VortexParams, pert: PerturbationParams, dt: float,
                    n_steps: int) -> ParticleState:
    """``n_steps`` forward Boris steps of size ``dt`` (seconds) without output."""
    field_at = _field_fn(params, pert)
    for _ in range(n_steps):
        state = boris_step(state, field_at(*state.position), dt)
    return state


def _diagnostics(t, pos, vel, initial, params, pert, tau, dt) -> Trajectory:
    field_at = _field_fn(params, pert)
    B = np.array([field_at(*p) for p in pos]) if len(pos) else np.empty((0, 3))
    bmag = np.linalg.norm(B, axis=-1)
    v2 = np.sum(vel * vel, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        vpar = np.where(bmag > 0, np.sum(vel * B, axis=-1) / bmag, 0.0)
        vperp2 = np.maximum(v2 - vpar * vpar, 0.0)
        mu = np.where(bmag > 0, initial.mass * vperp2 / (2.0 * bmag), np.inf)
        rho = initial.mass * np.sqrt(v2) / (abs(initial.charge) * bmag)
        s_local = 0.3 * params.r_s / rho
    y0 = pert.alpha * pert.k * params.z_s**2
    varphi = np.mod(np.arctan2(pos[:, 0], pos[:, 1] - y0), 2.0 * np.pi) if len(pos) else np.empty(0)
    return Trajectory(
        t=t,
        position=pos,
        velocity=vel,
        kinetic_energy=0.5 * initial.mass * v2,
        mu=mu,
        s_local=s_local,
        varphi=varphi,
        tau_ce=tau,
        dt=dt,
        r_s=params.r_s,
    )


@dataclass(frozen=True)
class CrescentMetrics:
    phi_coverage: float
    n_samples: int
    mu_violation_events: int
    events_with_low_s: int
    low_s_samples: int
    p_low_s_given_event: float
    p_low_s: float
    r_min_seen: float
    r_max_seen: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def crescent_metrics(
    traj: Trajectory, s_threshold: float = 3.0, mu_jump: float = 0.1, n_bins: int = 360
) -> CrescentMetrics:
    """Azimuthal coverage and magnetic-moment violation statistics.

    Coverage is the total measure of visited bins of the shifted azimuth
    (1° bins by default).  A violation event is a relative change of ``mu``
    above ``mu_jump`` between consecutive samples; an event counts as low-s if
    either of its two samples has ``s_l < s_threshold``.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    bins = np.floor(traj.varphi / (2.0 * np.pi) * n_bins).astype(int) % n_bins
    coverage = np.unique(bins).size * 2.0 * np.pi / n_bins
    mu = traj.mu
    finite = np.isfinite(mu[:-1]) & np.isfinite(mu[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(np.diff(mu)) / np.maximum(np.minimum(mu[:-1], mu[1:]), 1e-300)
    events = finite & (rel > mu_jump)
    low = traj.s_local < s_threshold
    low_pair = low[:-1] | low[1:]
    n_events = int(np.sum(events))
    n_low_events = int(np.sum(events & low_pair))
    r = np.hypot(traj.position[:, 0], traj.position[:, 1])
    return CrescentMetrics(
        phi_coverage=float(coverage),
        n_samples=len(traj),
        mu_violation_events=n_events,
        events_with_low_s=n_low_events,
        low_s_samples=int(np.sum(low)),
        p_low_s_given_event=n_low_events / n_events if n_events else 0.0,
        p_low_s=float(np.mean(low_pair)) if low_pair.size else 0.0,
        r_min_seen=float(r.min()),
        r_max_seen=float(r.max()),
    )
