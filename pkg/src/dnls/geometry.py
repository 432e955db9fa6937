"""Coefficient fields: metric perturbations G, damping potentials a, control checks.

All presets are radial profiles built from the standard compactly supported
bump b(r) = exp(1 - 1/(1 - (r/R)^2)) for r < R. Closed-form evaluators are
authoritative (the ray tracer never interpolates grid tables); grid tables are
the evaluators sampled at the grid points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridMismatchError, InvalidMetricError
from .grid import Field, GridSpec, gradient

__all__ = [
    "bump_profile",
    "bump_profile_derivative",
    "smooth_transition",
    "cutoff_field",
    "MetricField",
    "DampingField",
    "ControlReport",
    "build_preset",
    "check_control",
    "coercivity_constant",
    "gradient_bound_constant",
    "PRESET_NAMES",
]

PRESET_NAMES = ("identity", "conformal_bump", "anisotropic_bump", "uncontrolled_bump")

DEFAULT_METRIC_AMPLITUDE = {
    "identity": 0.0,
    "conformal_bump": 0.3,
    "anisotropic_bump": 0.3,
    "uncontrolled_bump": -0.9,
}


def bump_profile(r: np.ndarray, radius: float) -> np.ndarray:
    """b(r) = exp(1 - 1/(1-(r/R)^2)) for r < R, 0 otherwise; b(0) = 1."""
    r = np.asarray(r, dtype=np.float64)
    s2 = (r / radius) ** 2
    inside = s2 < 1.0
    out = np.zeros_like(r)
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
    return out


def bump_profile_derivative(r: np.ndarray, radius: float) -> np.ndarray:
    """db/dr; vanishes at r = 0 and outside the support."""
    r = np.asarray(r, dtype=np.float64)
    s = r / radius
    inside = s**2 < 1.0
    out = np.zeros_like(r)
    si = s[inside]
    out[inside] = (
        bump_profile(r[inside], radius) * (-2.0 * si / radius) / (1.0 - si**2) ** 2
    )
    return out


def smooth_transition(s: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    out[s >= 1.0] = 1.0
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    with np.errstate(over="ignore"):
        f = np.exp(-1.0 / sm)
        g = np.exp(-1.0 / (1.0 - sm))
    out[mid] = f / (f + g)
    return out


def cutoff_field(spec: GridSpec, flat_radius: float, support_radius: float) -> np.ndarray:
    """Radial cutoff equal to 1 on B(0, flat_radius), 0 outside B(0, support_radius)."""
    if not 0.0 < flat_radius < support_radius < spec.length:
        raise DomainError(
            "cutoff radii must satisfy 0 < flat < support < box half-length, got "
            f"flat={flat_radius}, support={support_radius}, L={spec.length}"
        )
    r = np.sqrt(spec.radius_squared)
    return smooth_transition((support_radius - r) / (support_radius - flat_radius))


def _radii(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points - center, axis=-1)


class MetricField:
    """Symmetric coefficient matrix G(x) = I + amplitude * b(|x|) * S.

    S is the identity for conformal bumps or a fixed symmetric rank-one matrix
    for anisotropic ones. Both the grid table and closed-form off-grid
    evaluators (values and all first partials) are exposed.
    """

    def __init__(
        self,
        spec: GridSpec,
        amplitude: float = 0.0,
        radius: float = 0.0,
        direction: np.ndarray | None = None,
    ):
        self.spec = spec
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        if self.amplitude != 0.0:
            if not 0.0 < self.radius < spec.length:
                raise DomainError(
                    f"metric bump radius must lie in (0, L), got {self.radius}"
                )
        if direction is None:
            self.structure = np.eye(spec.dim)
            self.conformal = True
        else:
            v = np.asarray(direction, dtype=np.float64)
            v = v / np.linalg.norm(v)
            self.structure = np.outer(v, v)
            self.conformal = False
        self.is_identity = self.amplitude == 0.0
        self.support_radius = 0.0 if self.is_identity else self.radius
        self._table: np.ndarray | None = None
        self._factor: np.ndarray | None = None

    # -- closed-form evaluators ------------------------------------------------

    def eval_metric(self, points: np.ndarray) -> np.ndarray:
        """G at arbitrary points; points shape (..., dim) -> (..., dim, dim)."""
        points = np.asarray(points, dtype=np.float64)
        d = self.spec.dim
        out = np.broadcast_to(np.eye(d), points.shape[:-1] + (d, d)).copy()
        if not self.is_identity:
            r = np.linalg.norm(points, axis=-1)
            b = bump_profile(r, self.radius)
            out += (self.amplitude * b)[..., None, None] * self.structure
        return out

    def eval_metric_grad(self, points: np.ndarray) -> np.ndarray:
        """All partials dG_ij/dx_k; result indexed [..., k, i, j]."""
        points = np.asarray(points, dtype=np.float64)
        d = self.spec.dim
        out = np.zeros(points.shape[:-1] + (d, d, d))
        if not self.is_identity:
            r = np.linalg.norm(points, axis=-1)
            db = bump_profile_derivative(r, self.radius)
            safe_r = np.where(r == 0.0, 1.0, r)
            unit = points / safe_r[..., None]
            radial = self.amplitude * db  # zero at the origin since b'(0) = 0
            out += (
                (radial[..., None] * unit)[..., :, None, None]
                * self.structure[None, :, :]
            )
        return out

    # -- grid tables -----------------------------------------------------------

    @property
    def table(self) -> np.ndarray:
        """Grid samples of G, shape (dim, dim, n, ..., n)."""
        if self._table is None:
            d = self.spec.dim
            table = np.zeros((d, d) + self.spec.shape)
            for i in range(d):
                table[i, i] = 1.0
            if not self.is_identity:
                bump = self.amplitude * bump_profile(
                    np.sqrt(self.spec.radius_squared), self.radius
                )
                for i in range(d):
                    for j in range(d):
                        if self.structure[i, j] != 0.0:
                            table[i, j] += self.structure[i, j] * bump
            self._table = table
        return self._table

    @property
    def conformal_factor(self) -> np.ndarray | None:
        """Scalar c(x) with G = c I when the perturbation is conformal, else None."""
        if not self.conformal:
            return None
        if self._factor is None:
            if self.is_identity:
                self._factor = np.ones(self.spec.shape)
            else:
                self._factor = 1.0 + self.amplitude * bump_profile(
                    np.sqrt(self.spec.radius_squared), self.radius
                )
        return self._factor

    def deviation_norm(self) -> np.ndarray:
        """Pointwise Frobenius norm of G - I on the grid."""
        d = self.spec.dim
        dev = np.zeros(self.spec.shape)
        table = self.table
        for i in range(d):
            for j in range(d):
                delta = table[i, j] - (1.0 if i == j else 0.0)
                dev += delta**2
        return np.sqrt(dev)

    def min_eigenvalue(self) -> float:
        if self.conformal:
            factor = self.conformal_factor
            return float(factor.min())
        stacked = np.moveaxis(self.table, (0, 1), (-2, -1))
        return float(np.linalg.eigvalsh(stacked)[..., 0].min())


class DampingField:
    """Non-negative compactly supported damping potential a(x)."""

    def __init__(
        self,
        spec: GridSpec,
        amplitude: float = 1.0,
        shape: str = "ball",
        radius: float = 3.0,
        inner_radius: float = 0.0,
        outer_radius: float = 0.0,
        center: np.ndarray | None = None,
    ):
        if amplitude < 0.0:
            raise DomainError(f"damping amplitude must be >= 0, got {amplitude}")
        if shape not in ("ball", "annulus"):
            raise DomainError(f"damping shape must be ball or annulus, got {shape!r}")
        self.spec = spec
        self.amplitude = float(amplitude)
        self.shape = shape
        self.center = (
            np.zeros(spec.dim) if center is None else np.asarray(center, dtype=float)
        )
        if shape == "ball":
            self.radius = float(radius)
            reach = self.radius
        else:
            if not 0.0 < inner_radius < outer_radius:
                raise DomainError(
                    f"annulus needs 0 < inner < outer, got {inner_radius}, {outer_radius}"
                )
            self.inner_radius = float(inner_radius)
            self.outer_radius = float(outer_radius)
            self.radius = 0.5 * (outer_radius - inner_radius)
            self._mid = 0.5 * (outer_radius + inner_radius)
            reach = self.outer_radius
        if self.amplitude > 0.0 and not (
            reach + np.abs(self.center).max() < spec.length
        ):
            raise DomainError("damping support must fit inside the box")
        self.support_radius = 0.0 if self.amplitude == 0.0 else reach + float(
            np.abs(self.center).max()
        )
        self._table: np.ndarray | None = None

    def eval_damping(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.amplitude == 0.0:
            return np.zeros(points.shape[:-1])
        r = _radii(points, self.center)
        if self.shape == "ball":
            return self.amplitude * bump_profile(r, self.radius)
        return self.amplitude * bump_profile(r - self._mid, self.radius)

    @property
    def table(self) -> np.ndarray:
        if self._table is None:
            pts = np.stack(
                [np.broadcast_to(x, self.spec.shape) for x in self.spec.coords],
                axis=-1,
            )
            self._table = self.eval_damping(pts)
        return self._table

    @property
    def sup(self) -> float:
        return float(self.table.max())


@dataclass
class ControlReport:
    """Result of scanning supp(G - I) against {a > a_min}."""

    satisfied: bool
    violation_points: np.ndarray  # (m, dim) physical coordinates
    delta0: float                 # min of a over the perturbation support
    support_count: int = 0

    @property
    def violation_count(self) -> int:
        return int(self.violation_points.shape[0])


def check_control(
    metric: MetricField,
    damping: DampingField,
    g_tol: float = 1e-12,
    a_min: float = 1e-8,
) -> ControlReport:
    """Grid scan of the exterior control condition supp(G - I) in {a > a_min}."""
    if metric.spec != damping.spec:
        raise GridMismatchError("metric and damping live on different grids")
    spec = metric.spec
    dev = metric.deviation_norm()
    support = dev > g_tol
    a = damping.table
    if not support.any():
        return ControlReport(
            satisfied=True,
            violation_points=np.empty((0, spec.dim)),
            delta0=np.inf,
            support_count=0,
        )
    delta0 = float(a[support].min())
    bad = support & (a <= a_min)
    idx = np.argwhere(bad)
    points = np.stack([spec.x1d[idx[:, j]] for j in range(spec.dim)], axis=-1)
    return ControlReport(
        satisfied=not bad.any(),
        violation_points=points,
        delta0=delta0,
        support_count=int(support.sum()),
    )


def coercivity_constant(metric: MetricField) -> float:
    """Smallest eigenvalue of G over the grid; errors if not positive."""
    c = metric.min_eigenvalue()
    if c <= 0.0:
        raise InvalidMetricError(
            f"metric loses uniform coercivity: min eigenvalue {c:.6g} <= 0"
        )
    return c


def gradient_bound_constant(damping: DampingField, eps: float) -> float:
    """Minimal C on the grid with |grad a| <= C a + eps."""
    if not eps > 0.0:
        raise DomainError(f"eps must be positive, got {eps}")
    spec = damping.spec
    a = damping.table
    positive = a > 0.0
    if not positive.any():
        return 0.0
    grad = gradient(Field(a.astype(np.complex128), spec))
    grad_mag = np.sqrt(sum(np.abs(g.values) ** 2 for g in grad))
    excess = np.maximum(grad_mag - eps, 0.0)
    ratios = excess[positive] / a[positive]
    return float(ratios.max())


def build_preset(
    name: str, spec: GridSpec, params: dict | None = None
) -> tuple[MetricField, DampingField]:
    """Construct a (MetricField, DampingField) pair for a named preset.

    ``uncontrolled_bump`` deliberately places the damping away from the metric
    perturbation so that the control condition fails; everything else must pass
    check_control with the default thresholds.
    """
    if name not in PRESET_NAMES:
        raise DomainError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    p = dict(params or {})

    metric_radius = float(p.pop("metric_radius", 2.0))
    metric_amplitude = float(
        p.pop("metric_amplitude", DEFAULT_METRIC_AMPLITUDE[name])
    )
    damping_amplitude = float(p.pop("damping_amplitude", 1.0))
    damping_shape = str(p.pop("damping_shape", "ball"))
    default_radius = (
        metric_radius if name == "uncontrolled_bump" else metric_radius + 2.0
    )
    damping_radius = float(p.pop("damping_radius", default_radius))
    damping_inner = float(p.pop("damping_inner_radius", 0.0))
    damping_outer = float(p.pop("damping_outer_radius", 0.0))
    offset_default = (
        metric_radius + damping_radius + 1.0 if name == "uncontrolled_bump" else 0.0
    )
    damping_offset = float(p.pop("damping_center_offset", offset_default))
    if p:
        raise DomainError(f"unknown preset parameters: {sorted(p)}")

    if name == "identity":
        metric = MetricField(spec)
    elif name in ("conformal_bump", "uncontrolled_bump"):
        metric = MetricField(spec, amplitude=metric_amplitude, radius=metric_radius)
    else:
        axis = np.zeros(spec.dim)
        axis[0] = 1.0
        metric = MetricField(
            spec, amplitude=metric_amplitude, radius=metric_radius, direction=axis
        )
    coercivity_constant(metric)  # rejects amplitudes that break positivity

    center = np.zeros(spec.dim)
    center[0] = damping_offset
    damping = DampingField(
        spec,
        amplitude=damping_amplitude,
        shape=damping_shape,
        radius=damping_radius,
        inner_radius=damping_inner,
        outer_radius=damping_outer,
        center=center,
    )
    return metric, damping
