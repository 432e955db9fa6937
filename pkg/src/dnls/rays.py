"""Hamiltonian ray tracing for the principal symbol p(x, xi) = G(x) xi . xi.

The flow is
    dx/dt  = 2 G(x) xi,
    dxi/dt = - sum_ij (dG_ij/dx) xi_i xi_j,
integrated with the classical fourth-order one-step method on closed-form
coefficient evaluators (never grid interpolation). Rays in an ensemble are
advanced together as (n, dim) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StabilityError
from .geometry import DampingField, MetricField

__all__ = [
    "RayState",
    "RayFate",
    "Trajectory",
    "EnsembleSummary",
    "hamiltonian",
    "integrate_ray",
    "classify_ray",
    "sample_ensemble",
    "verify_exterior_control",
    "FATE_KINDS",
]

FATE_KINDS = ("escaped", "controlled", "trapped_at_horizon")


@dataclass
class RayState:
    x: np.ndarray
    xi: np.ndarray
    t: float


@dataclass
class RayFate:
    """Classification of one trajectory against escape and control regions."""

    kind: str
    hamiltonian_drift: float
    t_exit: float = np.nan
    t_first_hit: float = np.nan
    time_in_control: float = 0.0
    horizon: float = np.nan

    def __post_init__(self):
        if self.kind not in FATE_KINDS:
            raise DomainError(f"fate kind must be one of {FATE_KINDS}")


@dataclass
class Trajectory:
    """Recorded ray path: times, positions, momenta and symbol values."""

    times: np.ndarray       # (m+1,)
    positions: np.ndarray   # (m+1, dim)
    momenta: np.ndarray     # (m+1, dim)
    hamiltonians: np.ndarray  # (m+1,)

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> RayState:
        return RayState(self.positions[i], self.momenta[i], float(self.times[i]))


def hamiltonian(x: np.ndarray, xi: np.ndarray, metric: MetricField) -> np.ndarray:
    """G(x) xi . xi via the closed-form evaluator; works on (..., dim) stacks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    g = metric.eval_metric(x)
    h = np.einsum("...ij,...i,...j->...", g, xi, xi)
    return h[0] if h.shape == (1,) else h


def _rhs(x: np.ndarray, xi: np.ndarray, metric: MetricField):
    g = metric.eval_metric(x)
    xdot = 2.0 * np.einsum("...ij,...j->...i", g, xi)
    if metric.is_identity:
        xidot = np.zeros_like(xi)
    else:
        dg = metric.eval_metric_grad(x)
        xidot = -np.einsum("...kij,...i,...j->...k", dg, xi, xi)
    return xdot, xidot


def _rk4_step(x: np.ndarray, xi: np.ndarray, metric: MetricField, dt: float):
    k1x, k1p = _rhs(x, xi, metric)
    k2x, k2p = _rhs(x + 0.5 * dt * k1x, xi + 0.5 * dt * k1p, metric)
    k3x, k3p = _rhs(x + 0.5 * dt * k2x, xi + 0.5 * dt * k2p, metric)
    k4x, k4p = _rhs(x + dt * k3x, xi + dt * k3p, metric)
    x_new = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    xi_new = xi + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return x_new, xi_new


def integrate_ray(
    x0: np.ndarray,
    xi0: np.ndarray,
    metric: MetricField,
    horizon: float,
    dt: float,
) -> Trajectory:
    """Integrate one ray to the horizon, recording every step."""
    if dt <= 0.0 or horizon <= 0.0:
        raise DomainError("integrate_ray needs dt > 0 and horizon > 0")
    x = np.asarray(x0, dtype=float).reshape(1, -1).copy()
    xi = np.asarray(xi0, dtype=float).reshape(1, -1).copy()
    if np.linalg.norm(xi) == 0.0:
        raise DomainError("ray momentum must be nonzero")
    n_steps = int(round(horizon / dt))
    times = np.empty(n_steps + 1)
    positions = np.empty((n_steps + 1, x.shape[1]))
    momenta = np.empty_like(positions)
    hams = np.empty(n_steps + 1)
    times[0], positions[0], momenta[0] = 0.0, x[0], xi[0]
    hams[0] = hamiltonian(x, xi, metric)
    for i in range(1, n_steps + 1):
        x, xi = _rk4_step(x, xi, metric, dt)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise StabilityError(
                f"ray state became non-finite at t={i * dt:.6g} (dt={dt})"
            )
        times[i] = i * dt
        positions[i], momenta[i] = x[0], xi[0]
        hams[i] = hamiltonian(x, xi, metric)
    return Trajectory(times, positions, momenta, hams)


def _refine_exit_time(
    x_prev: np.ndarray, x_next: np.ndarray, t_prev: float, dt: float, radius: float
) -> float:
    """Linear-in-segment root of |x(t)| = radius between two recorded states."""
    v = (x_next - x_prev) / dt
    a = float(v @ v)
    b = 2.0 * float(x_prev @ v)
    c = float(x_prev @ x_prev) - radius**2
    if a == 0.0:
        return t_prev + dt
    disc = max(b * b - 4.0 * a * c, 0.0)
    s = (-b + np.sqrt(disc)) / (2.0 * a)
    return t_prev + float(np.clip(s, 0.0, dt))


def classify_ray(
    trajectory: Trajectory,
    damping: DampingField,
    escape_radius: float,
    a_min: float = 1e-8,
) -> RayFate:
    """Classify one recorded trajectory.

    A ray is escaped at the first crossing of |x| = escape_radius (exit time
    refined on the crossing segment); control residence is accumulated per step
    whose endpoint satisfies a(x) > a_min. Escape wins over control in `kind`;
    control times remain reported. A ray that never escapes and never meets the
    control region is trapped at the horizon.
    """
    if escape_radius <= damping.support_radius:
        raise DomainError(
            f"escape radius {escape_radius} must exceed the damping support "
            f"{damping.support_radius}"
        )
    times = trajectory.times
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    radii = np.linalg.norm(trajectory.positions, axis=1)
    a_vals = damping.eval_damping(trajectory.positions)
    h0 = trajectory.hamiltonians[0]
    drift = float(np.max(np.abs(trajectory.hamiltonians - h0)) / abs(h0))

    outside = radii > escape_radius
    exit_idx = int(np.argmax(outside)) if outside.any() else -1

    in_control = a_vals > a_min
    if exit_idx >= 0:
        in_control = in_control.copy()
        in_control[exit_idx:] = False  # residence only counted until escape
    hit_idx = int(np.argmax(in_control)) if in_control.any() else -1
    t_first_hit = float(times[hit_idx]) if hit_idx >= 0 else np.nan
    time_in_control = float(dt * np.count_nonzero(in_control[1:]))

    if exit_idx >= 0:
        if exit_idx == 0:
            t_exit = 0.0
        else:
            t_exit = _refine_exit_time(
                trajectory.positions[exit_idx - 1],
                trajectory.positions[exit_idx],
                float(times[exit_idx - 1]),
                dt,
                escape_radius,
            )
        return RayFate(
            "escaped",
            drift,
            t_exit=t_exit,
            t_first_hit=t_first_hit,
            time_in_control=time_in_control,
        )
    if hit_idx >= 0:
        return RayFate(
            "controlled",
            drift,
            t_first_hit=t_first_hit,
            time_in_control=time_in_control,
        )
    return RayFate("trapped_at_horizon", drift, horizon=float(times[-1]))


def sample_ensemble(
    dim: int,
    count: int,
    sample_radius: float,
    seed: int = 0,
    mode: str = "random",
) -> tuple[np.ndarray, np.ndarray]:
    """Initial conditions: x0 in B(0, R_sample), |xi0| = 1."""
    if mode == "random":
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((count, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = sample_radius * rng.random(count) ** (1.0 / dim)
        pos_dirs = rng.standard_normal((count, dim))
        pos_dirs /= np.linalg.norm(pos_dirs, axis=1, keepdims=True)
        x0 = radii[:, None] * pos_dirs
        return x0, dirs
    if mode == "lattice":
        per_axis = max(2, int(np.ceil(count ** (1.0 / dim))))
        axes = [np.linspace(-sample_radius, sample_radius, per_axis)] * dim
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        mesh = mesh[np.linalg.norm(mesh, axis=1) <= sample_radius]
        directions = np.concatenate([np.eye(dim), -np.eye(dim)])
        x0 = np.repeat(mesh, len(directions), axis=0)
        xi0 = np.tile(directions, (len(mesh), 1))
        return x0, xi0
    raise DomainError(f"sampling mode must be random or lattice, got {mode!r}")


@dataclass
class EnsembleSummary:
    """Per-ray fates plus aggregate counts for an ensemble run."""

    x0: np.ndarray
    xi0: np.ndarray
    fates: list[RayFate]
    counts: dict[str, int]
    exterior_control_holds: bool


def verify_exterior_control(
    metric: MetricField,
    damping: DampingField,
    x0: np.ndarray,
    xi0: np.ndarray,
    horizon: float,
    dt: float,
    escape_radius: float,
    a_min: float = 1e-8,
) -> EnsembleSummary:
    """Advance an ensemble and classify every ray; vectorized over rays.

    Exterior control holds empirically iff no ray is trapped at the horizon.
    """
    if dt <= 0.0 or horizon <= 0.0:
        raise DomainError("ensemble integration needs dt > 0 and horizon > 0")
    reach = max(metric.support_radius, damping.support_radius)
    if escape_radius <= reach:
        raise DomainError(
            f"escape radius {escape_radius} must exceed the coefficient support {reach}"
        )
    x = np.array(x0, dtype=float)
    xi = np.array(xi0, dtype=float)
    n = x.shape[0]
    n_steps = int(round(horizon / dt))

    h0 = np.atleast_1d(hamiltonian(x, xi, metric))
    drift = np.zeros(n)
    escaped = np.zeros(n, dtype=bool)
    t_exit = np.full(n, np.nan)
    t_first_hit = np.full(n, np.nan)
    in_control_now = damping.eval_damping(x) > a_min
    t_first_hit[in_control_now] = 0.0
    control_steps = np.zeros(n, dtype=np.int64)

    x_prev = x.copy()
    for i in range(1, n_steps + 1):
        live = ~escaped
        if not live.any():
            break
        x_prev[live] = x[live]
        x_live, xi_live = _rk4_step(x[live], xi[live], metric, dt)
        if not (np.all(np.isfinite(x_live)) and np.all(np.isfinite(xi_live))):
            raise StabilityError(
                f"ensemble state became non-finite at t={i * dt:.6g} (dt={dt})"
            )
        x[live], xi[live] = x_live, xi_live
        t = i * dt

        h_live = np.atleast_1d(hamiltonian(x[live], xi[live], metric))
        drift[live] = np.maximum(drift[live], np.abs(h_live - h0[live]))

        radii = np.linalg.norm(x[live], axis=1)
        newly_out = np.zeros(n, dtype=bool)
        newly_out[live] = radii > escape_radius
        for ray in np.nonzero(newly_out)[0]:
            t_exit[ray] = _refine_exit_time(
                x_prev[ray], x[ray], t - dt, dt, escape_radius
            )
        hits = np.zeros(n, dtype=bool)
        hits[live] = damping.eval_damping(x[live]) > a_min
        first = hits & np.isnan(t_first_hit)
        t_first_hit[first] = t
        control_steps[hits] += 1
        escaped |= newly_out

    drift_rel = drift / np.abs(h0)
    fates: list[RayFate] = []
    for ray in range(n):
        if escaped[ray]:
            fates.append(
                RayFate(
                    "escaped",
                    float(drift_rel[ray]),
                    t_exit=float(t_exit[ray]),
                    t_first_hit=float(t_first_hit[ray]),
                    time_in_control=float(control_steps[ray] * dt),
                )
            )
        elif not np.isnan(t_first_hit[ray]):
            fates.append(
                RayFate(
                    "controlled",
                    float(drift_rel[ray]),
                    t_first_hit=float(t_first_hit[ray]),
                    time_in_control=float(control_steps[ray] * dt),
                )
            )
        else:
            fates.append(
                RayFate("trapped_at_horizon", float(drift_rel[ray]), horizon=horizon)
            )
    counts = {kind: 0 for kind in FATE_KINDS}
    for fate in fates:
        counts[fate.kind] += 1
    return EnsembleSummary(
        x0=np.array(x0, dtype=float),
        xi0=np.array(xi0, dtype=float),
        fates=fates,
        counts=counts,
        exterior_control_holds=counts["trapped_at_horizon"] == 0,
    )


def default_escape_radius(metric: MetricField, damping: DampingField) -> float:
    """1.5 * max(R_G, R_a) + 5, the documented classification default."""
    return 1.5 * max(metric.support_radius, damping.support_radius) + 5.0
