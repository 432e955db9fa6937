"""Scattering detection: free-flow pullback, Cauchy scan, profile extraction.

The monitored quantity is v(t) = e^{-it lap} u(t), computed exactly on the
torus by the e^{+i|k|^2 t} multiplier. Convergence of v(t) is certified by the
pairwise H^s Cauchy matrix over stored snapshots; the profile is the pullback
at the final time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, SamplingError
from .geometry import DampingField
from .grid import Field, gradient, laplacian, sobolev_norm

__all__ = [
    "ScatterReport",
    "CutoffDiagnostics",
    "free_pullback",
    "free_evolve",
    "cauchy_scan",
    "extract_profile",
    "commutator_with_cutoff",
    "cutoff_diagnostics",
]

Snapshot = tuple[float, Field]


def free_evolve(u: Field, t: float) -> Field:
    """exp(i t lap) u via the e^{-i|k|^2 t} multiplier (exact on the torus)."""
    spec = u.spec
    return Field(spec.ifft(np.exp(-1j * spec.k_squared * t) * spec.fft(u.values)),
                 spec)


def free_pullback(u: Field, t: float) -> Field:
    """exp(-i t lap) u, the inverse of the free evolution."""
    return free_evolve(u, -t)


@dataclass
class ScatterReport:
    """Cauchy matrices, per-exponent verdicts, and the extracted profile."""

    times: np.ndarray
    s_values: tuple[float, ...]
    cauchy: dict[float, np.ndarray]
    verdicts: dict[float, bool]
    u_plus: Field | None = None
    mismatch: dict[float, np.ndarray] = field(default_factory=dict)
    final_mismatch: dict[float, float] = field(default_factory=dict)


def _monotone_tail_verdict(
    times: np.ndarray, last_row: np.ndarray, tol_mono: float
) -> bool:
    """Entries D[last][j] must decrease in j over the final half of the horizon,
    allowing tol_mono relative slack per consecutive pair."""
    last = len(times) - 1
    half_time = times[0] + 0.5 * (times[last] - times[0])
    js = [j for j in range(last) if times[j] >= half_time]
    if len(js) < 2:
        js = list(range(max(0, last - 3), last))
    entries = last_row[js]
    for prev, cur in zip(entries[:-1], entries[1:]):
        if cur > prev * (1.0 + tol_mono) + 1e-15:
            return False
    return True


def cauchy_scan(
    snapshots: Sequence[Snapshot],
    s_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 0.9),
    tol_mono: float = 0.05,
) -> ScatterReport:
    """Pairwise H^s distances of the pullbacks v(t_i) = e^{-i t_i lap} u(t_i)."""
    if len(snapshots) < 3:
        raise SamplingError(
            f"cauchy scan needs at least 3 snapshots, got {len(snapshots)}"
        )
    times = np.asarray([t for t, _ in snapshots])
    if np.any(np.diff(times) <= 0):
        raise DomainError("snapshot times must be strictly increasing")
    pulled = [free_pullback(u, t) for t, u in snapshots]
    m = len(pulled)
    cauchy: dict[float, np.ndarray] = {}
    verdicts: dict[float, bool] = {}
    for s in s_values:
        matrix = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                diff = Field(pulled[i].values - pulled[j].values, pulled[i].spec)
                matrix[i, j] = matrix[j, i] = sobolev_norm(diff, s)
        cauchy[float(s)] = matrix
        verdicts[float(s)] = _monotone_tail_verdict(times, matrix[-1], tol_mono)
    return ScatterReport(times, tuple(float(s) for s in s_values), cauchy, verdicts)


def extract_profile(
    snapshots: Sequence[Snapshot],
    s_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 0.9),
    tol_mono: float = 0.05,
) -> ScatterReport:
    """Complete report: Cauchy scan plus the profile u_plus = pullback at T and
    the mismatch ||u(t) - e^{it lap} u_plus||_{H^s} over the snapshots."""
    report = cauchy_scan(snapshots, s_values, tol_mono)
    t_final, u_final = snapshots[-1]
    u_plus = free_pullback(u_final, t_final)
    report.u_plus = u_plus
    for s in report.s_values:
        values = np.empty(len(snapshots))
        for i, (t, u) in enumerate(snapshots):
            drifted = free_evolve(u_plus, t)
            values[i] = sobolev_norm(Field(u.values - drifted.values, u.spec), s)
        report.mismatch[s] = values
        report.final_mismatch[s] = float(values[-1])
    return report


def commutator_with_cutoff(u: Field, cutoff: np.ndarray) -> Field:
    """[lap, chi] u evaluated by the product rule (lap chi) u + 2 grad chi . grad u."""
    spec = u.spec
    chi = Field(np.asarray(cutoff, dtype=np.complex128), spec)
    lap_chi = laplacian(chi).values
    grad_chi = [g.values for g in gradient(chi)]
    grads = [g.values for g in gradient(u)]
    out = lap_chi * u.values
    for gc, gu in zip(grad_chi, grads):
        out = out + 2.0 * gc * gu
    return Field(out, spec)


@dataclass
class CutoffDiagnostics:
    cutoff_hs: dict[float, float]
    commutator_l2: float


def cutoff_diagnostics(
    u: Field,
    cutoff: np.ndarray,
    damping: DampingField,
    s_values: Sequence[float] = (0.0, 0.5),
    a_min: float = 1e-8,
) -> CutoffDiagnostics:
    """Near-field norms ||chi u||_{H^s} and the commutator source ||[lap,chi]u||_L2.

    The cutoff must equal 1 (to rounding) everywhere the damping is active,
    mirroring the decomposition where the far field w = (1-chi) u solves the
    free-Laplacian equation.
    """
    active = damping.table > a_min
    if active.any() and np.max(np.abs(cutoff[active] - 1.0)) > 1e-12:
        raise ConfigError(
            "cutoff must equal 1 on the damping support "
            f"(max deviation {np.max(np.abs(cutoff[active] - 1.0)):.3e})"
        )
    cutoff_hs = {
        float(s): sobolev_norm(Field(cutoff * u.values, u.spec), s) for s in s_values
    }
    comm = commutator_with_cutoff(u, cutoff)
    return CutoffDiagnostics(cutoff_hs=cutoff_hs, commutator_l2=comm.l2_norm())
