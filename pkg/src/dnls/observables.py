"""Functionals and identity residuals evaluated on simulation snapshots.

Everything here is a pure function of fields and recorded series. Time
integrals use the trapezoid rule on the recorded cadence; rate residuals use
centered differences, so their discretization error tracks the recording
cadence squared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, SamplingError, SeriesAlignmentError
from .geometry import DampingField, MetricField
from .grid import (
    Field,
    GridSpec,
    WeightTables,
    gradient,
    laplacian_G,
    localized_integral,
    sobolev_norm,
)

__all__ = [
    "ObservableSeries",
    "Monitor",
    "mass",
    "energy",
    "morawetz_virial",
    "morawetz_rate_rhs",
    "bilinear_interaction",
    "local_energy",
    "local_sobolev_decay",
    "smooth_random_field",
    "standard_monitors",
    "mass_law_residual",
    "energy_law_residual",
    "energy_law_residual_flux_form",
    "morawetz_rate_residual",
    "lambda_accumulator",
    "energy_lambda_bound_check",
    "l4_accumulator",
    "interaction_inequality_check",
    "stability_probe",
]


class ObservableSeries:
    """Time-stamped scalar record with strictly monotone stamps.

    Forward runs record increasing t; backward probes record decreasing t.
    The direction is fixed by the first two stamps.
    """

    def __init__(self, name: str, times=None, values=None):
        self.name = name
        self._times: list[float] = []
        self._values: list[float] = []
        self._direction = 0
        if times is not None:
            for t, v in zip(times, values):
                self.append(t, v)

    def append(self, t: float, value: float) -> None:
        t, value = float(t), float(value)
        if not np.isfinite(value):
            raise DomainError(f"series {self.name!r}: non-finite value at t={t}")
        if self._times:
            step = t - self._times[-1]
            if step == 0.0 or (self._direction and np.sign(step) != self._direction):
                raise SeriesAlignmentError(
                    f"series {self.name!r}: non-monotone stamp {t} after "
                    f"{self._times[-1]}"
                )
            self._direction = int(np.sign(step))
        self._times.append(t)
        self._values.append(value)

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self._values)

    def cumulative_trapezoid(self) -> np.ndarray:
        """Running trapezoid integral on the recorded cadence (starts at 0)."""
        if len(self) < 2:
            return np.zeros(len(self))
        return cumulative_trapezoid(self.values, self.times, initial=0.0)


@dataclass
class Monitor:
    """Named scalar hook recorded during a run at its own cadence.

    ``fn(state, cache)`` may stash shared intermediates (spectral gradients)
    in ``cache``; the cache is discarded after each record.
    """

    name: str
    fn: object
    every: int = 1


def _check_aligned(*series: ObservableSeries) -> np.ndarray:
    base = series[0].times
    for s in series[1:]:
        if len(s) != len(series[0]) or not np.allclose(s.times, base, atol=1e-12):
            raise SeriesAlignmentError(
                f"series {series[0].name!r} and {s.name!r} have mismatched stamps"
            )
    return base


# ----------------------------------------------------------------------------
# pointwise functionals
# ----------------------------------------------------------------------------


def _grads(state, cache: dict) -> list[Field]:
    if "grads" not in cache:
        cache["grads"] = gradient(state.u)
    return cache["grads"]


def mass(u: Field) -> float:
    """Total mass int |u|^2."""
    return float(u.spec.quadrature(np.abs(u.values) ** 2).real)


def _metric_energy_density(grads: Sequence[Field], metric: MetricField) -> np.ndarray:
    """Pointwise G grad u . grad conj(u); real and non-negative for PSD G."""
    factor = metric.conformal_factor
    if factor is not None:
        out = np.zeros(grads[0].spec.shape)
        for g in grads:
            out += np.abs(g.values) ** 2
        return factor * out
    table = metric.table
    d = len(grads)
    out = np.zeros(grads[0].spec.shape)
    for i in range(d):
        for j in range(d):
            out += table[i, j] * (np.conj(grads[i].values) * grads[j].values).real
    return out


def energy(u: Field, metric: MetricField, grads: Sequence[Field] | None = None) -> float:
    """E[u] = 1/2 int G grad u . grad conj(u) + 1/4 int |u|^4."""
    spec = u.spec
    if grads is None:
        grads = gradient(u)
    kinetic = spec.quadrature(_metric_energy_density(grads, metric)).real
    quartic = spec.quadrature(np.abs(u.values) ** 4).real
    return float(0.5 * kinetic + 0.25 * quartic)


def _momentum_density(u: Field, grads: Sequence[Field]) -> list[np.ndarray]:
    """Components of Im(conj(u) grad u)."""
    return [(np.conj(u.values) * g.values).imag for g in grads]


def morawetz_virial(u: Field, tables: WeightTables) -> float:
    """Virial moment V = Im int conj(u) grad u . grad chi; its rate carries the
    monotonicity information the decay monitors are built on."""
    grads = gradient(u)
    density = np.zeros(u.spec.shape)
    for j, g in enumerate(grads):
        density += (np.conj(u.values) * g.values).imag * tables.grad_chi[j]
    return float(u.spec.quadrature(density).real)


def morawetz_rate_rhs(
    u: Field,
    tables: WeightTables,
    damping: DampingField,
    nonlinearity: bool = True,
    grads: Sequence[Field] | None = None,
) -> float:
    """Right-hand side of the virial rate identity:

    int 2 D^2chi grad u . grad conj(u) - 1/2 lap^2 chi |u|^2 + 1/2 lap chi |u|^4
        - 2 a Im(conj(u) grad u) . grad chi.

    The quartic term is dropped when the run had the nonlinearity disabled.
    """
    spec = u.spec
    if grads is None:
        grads = gradient(u)
    d = spec.dim
    density = np.zeros(spec.shape)
    for i in range(d):
        for j in range(d):
            density += 2.0 * tables.hess_chi[i, j] * (
                np.conj(grads[i].values) * grads[j].values
            ).real
    mod2 = np.abs(u.values) ** 2
    density -= 0.5 * tables.bilap_chi * mod2
    if nonlinearity:
        density += 0.5 * tables.lap_chi * mod2**2
    a = damping.table
    momentum = _momentum_density(u, grads)
    for j in range(d):
        density -= 2.0 * a * momentum[j] * tables.grad_chi[j]
    return float(spec.quadrature(density).real)


def bilinear_interaction(u: Field, tables: WeightTables) -> float:
    """Two-point functional int |u(y)|^2 Im(conj(u) grad u)(x) . grad_rho(x-y) dx dy.

    The inner integral is the circular convolution of |u|^2 with the
    periodized grad|x| kernel table, evaluated spectrally. The kernel table is
    ifftshifted so that index 0 carries the zero displacement and wrapped
    indices carry displacements in [-L, L).
    """
    spec = u.spec
    grads = gradient(u)
    momentum = _momentum_density(u, grads)
    mod2_hat = spec.fft(np.abs(u.values) ** 2)
    total = 0.0
    scale = spec.size * spec.dx**spec.dim  # unnormalized circular conv * dx^d
    for j in range(spec.dim):
        kernel_hat = spec.fft(np.fft.ifftshift(tables.grad_rho[j]))
        conv = spec.ifft(kernel_hat * mod2_hat).real * scale
        total += float(spec.quadrature(momentum[j] * conv).real)
    return total


def local_energy(u: Field, radius: float) -> float:
    """H^1 density |grad u|^2 + |u|^2 integrated over the ball B(0, R)."""
    return localized_integral(u, radius, "energy")


def local_sobolev_decay(u: Field, cutoff: np.ndarray, s: float) -> float:
    """H^s norm of the cutoff field, for 0 <= s < 1 (the decay range)."""
    if not 0.0 <= s < 1.0:
        raise DomainError(f"local Sobolev decay is monitored for 0 <= s < 1, got {s}")
    return sobolev_norm(Field(cutoff * u.values, u.spec), s)


def smooth_random_field(spec: GridSpec, seed: int = 0, k_scale: float = 2.0) -> Field:
    """Unit-L2 random field with Gaussian spectral envelope exp(-|k|^2/k_scale^2)."""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    coeffs *= np.exp(-spec.k_squared / k_scale**2)
    coeffs[~spec.dealias_mask] = 0.0
    f = Field(spec.ifft(coeffs), spec)
    norm = f.l2_norm()
    return Field(f.values / norm, spec)


# ----------------------------------------------------------------------------
# standard monitor bundle
# ----------------------------------------------------------------------------


def standard_monitors(
    metric: MetricField,
    damping: DampingField,
    tables: WeightTables,
    record_every: int = 1,
    interaction_every: int = 10,
    local_radius: float | None = None,
    cutoff: np.ndarray | None = None,
    cutoff_exponents: Sequence[float] = (0.0, 0.5),
    nonlinearity: bool = True,
    g_tol: float = 1e-12,
    a_min: float = 1e-8,
) -> list[Monitor]:
    """Monitors for every law and functional the workbench verifies."""
    spec = metric.spec
    a = damping.table
    a_support = a > a_min
    lap_G_a = laplacian_G(Field(a.astype(complex), spec), metric).values.real
    grad_a = [g.values.real for g in gradient(Field(a.astype(complex), spec))]
    pert_support = metric.deviation_norm() > g_tol if not metric.is_identity else None

    def mon_mass(state, cache):
        return mass(state.u)

    def mon_energy(state, cache):
        return energy(state.u, metric, _grads(state, cache))

    def mon_damping_mass(state, cache):
        return float(spec.quadrature(a * np.abs(state.u.values) ** 2).real)

    def mon_damping_energy(state, cache):
        grads = _grads(state, cache)
        density = a * (
            np.abs(state.u.values) ** 4 + _metric_energy_density(grads, metric)
        )
        return float(spec.quadrature(density).real)

    def mon_mass_lapGa(state, cache):
        return float(
            spec.quadrature(np.abs(state.u.values) ** 2 * lap_G_a).real
        )

    def mon_flux_alt(state, cache):
        # Re int G grad u . conj(u) grad a
        grads = _grads(state, cache)
        factor = metric.conformal_factor
        density = np.zeros(spec.shape)
        if factor is not None:
            for j in range(spec.dim):
                density += factor * (
                    grads[j].values * np.conj(state.u.values)
                ).real * grad_a[j]
        else:
            table = metric.table
            for i in range(spec.dim):
                for j in range(spec.dim):
                    density += table[i, j] * (
                        grads[j].values * np.conj(state.u.values)
                    ).real * grad_a[i]
        return float(spec.quadrature(density).real)

    def mon_virial(state, cache):
        grads = _grads(state, cache)
        density = np.zeros(spec.shape)
        for j, g in enumerate(grads):
            density += (np.conj(state.u.values) * g.values).imag * tables.grad_chi[j]
        return float(spec.quadrature(density).real)

    def mon_virial_rhs(state, cache):
        return morawetz_rate_rhs(
            state.u, tables, damping, nonlinearity, _grads(state, cache)
        )

    def mon_lambda_density(state, cache):
        return float(
            spec.quadrature(tables.lambda_kernel * np.abs(state.u.values) ** 2).real
        )

    def mon_l4(state, cache):
        return float(spec.quadrature(np.abs(state.u.values) ** 4).real)

    def mon_h1_sq(state, cache):
        return sobolev_norm(state.u, 1.0) ** 2

    def mon_supp_a_h1(state, cache):
        grads = _grads(state, cache)
        density = np.abs(state.u.values) ** 2
        for g in grads:
            density = density + np.abs(g.values) ** 2
        return float(density[a_support].sum() * spec.dx**spec.dim)

    def mon_interaction(state, cache):
        return bilinear_interaction(state.u, tables)

    monitors = [
        Monitor("mass", mon_mass, record_every),
        Monitor("energy", mon_energy, record_every),
        Monitor("damping_mass", mon_damping_mass, record_every),
        Monitor("damping_energy", mon_damping_energy, record_every),
        Monitor("mass_lapGa", mon_mass_lapGa, record_every),
        Monitor("energy_flux_alt", mon_flux_alt, record_every),
        Monitor("virial", mon_virial, record_every),
        Monitor("virial_rhs", mon_virial_rhs, record_every),
        Monitor("lambda_density", mon_lambda_density, record_every),
        Monitor("l4", mon_l4, record_every),
        Monitor("h1_sq", mon_h1_sq, record_every),
        Monitor("supp_a_h1", mon_supp_a_h1, record_every),
        Monitor("interaction", mon_interaction, interaction_every),
    ]

    if pert_support is not None:
        def mon_proxy(state, cache):
            grads = _grads(state, cache)
            density = np.abs(state.u.values) ** 2 + np.abs(state.u.values) ** 4
            for g in grads:
                density = density + np.abs(g.values) ** 2
            return float(density[pert_support].sum() * spec.dx**spec.dim)

        monitors.append(Monitor("morawetz_proxy", mon_proxy, record_every))

    if local_radius is not None:
        def mon_local_energy(state, cache):
            return local_energy(state.u, local_radius)

        def mon_local_mass(state, cache):
            return localized_integral(state.u, local_radius, "density")

        monitors.append(Monitor("local_energy", mon_local_energy, record_every))
        monitors.append(Monitor("local_mass", mon_local_mass, record_every))

    if cutoff is not None:
        grad_cut = [
            g.values.real for g in gradient(Field(cutoff.astype(complex), spec))
        ]
        lap_cut = spec.ifft(
            -spec.k_squared * spec.fft(cutoff.astype(complex))
        ).real

        for s in cutoff_exponents:
            def mon_cut(state, cache, s=s):
                return local_sobolev_decay(state.u, cutoff, s)

            monitors.append(
                Monitor(f"cutoff_hs_{s:g}", mon_cut, record_every)
            )

        def mon_commutator(state, cache):
            grads = _grads(state, cache)
            comm = lap_cut * state.u.values
            for j in range(spec.dim):
                comm = comm + 2.0 * grad_cut[j] * grads[j].values
            return float(spec.quadrature(np.abs(comm) ** 2).real)

        monitors.append(Monitor("commutator_l2_sq", mon_commutator, record_every))

    return monitors


# ----------------------------------------------------------------------------
# law residuals and bound checks
# ----------------------------------------------------------------------------


def mass_law_residual(
    mass_series: ObservableSeries, damping_mass: ObservableSeries
) -> ObservableSeries:
    """r(t) = M(t) - M(0) + 2 int_0^t int a |u|^2 (trapezoid)."""
    times = _check_aligned(mass_series, damping_mass)
    m = mass_series.values
    r = m - m[0] + 2.0 * damping_mass.cumulative_trapezoid()
    return ObservableSeries("mass_law_residual", times, r)


def energy_law_residual(
    energy_series: ObservableSeries,
    damping_energy: ObservableSeries,
    mass_lapGa: ObservableSeries,
) -> ObservableSeries:
    """Divergence form of the energy law:

        dE/dt = -int a(|u|^4 + G grad u . grad conj u) + 1/2 int |u|^2 div(G grad a),

    so r = E - E(0) + int_0^t int a(...) - 1/2 int_0^t int |u|^2 div(G grad a).
    """
    times = _check_aligned(energy_series, damping_energy, mass_lapGa)
    e = energy_series.values
    r = (
        e
        - e[0]
        + damping_energy.cumulative_trapezoid()
        - 0.5 * mass_lapGa.cumulative_trapezoid()
    )
    return ObservableSeries("energy_law_residual", times, r)


def energy_law_residual_flux_form(
    energy_series: ObservableSeries,
    damping_energy: ObservableSeries,
    flux_alt: ObservableSeries,
) -> ObservableSeries:
    """Flux form, equivalent by integration by parts:

        r = E - E(0) + int a(...) + Re int G grad u . conj(u) grad a.
    """
    times = _check_aligned(energy_series, damping_energy, flux_alt)
    e = energy_series.values
    r = (
        e
        - e[0]
        + damping_energy.cumulative_trapezoid()
        + flux_alt.cumulative_trapezoid()
    )
    return ObservableSeries("energy_law_residual_flux", times, r)


@dataclass
class MorawetzResidualReport:
    residual: ObservableSeries
    fitted_constant: float | None = None


def morawetz_rate_residual(
    virial: ObservableSeries,
    rhs: ObservableSeries,
    proxy: ObservableSeries | None = None,
) -> MorawetzResidualReport:
    """r(t) = dV/dt (centered difference) - recorded identity right-hand side.

    With G = I the identity is exact and r vanishes to discretization order.
    When a perturbation-support proxy series is supplied, the least-squares
    constant of |r| against the proxy is reported.
    """
    times = _check_aligned(virial, rhs)
    if len(virial) < 3:
        raise SamplingError(
            "virial rate residual needs >= 3 records; record the virial monitor "
            "every step"
        )
    v = virial.values
    dv = (v[2:] - v[:-2]) / (times[2:] - times[:-2])
    r = dv - rhs.values[1:-1]
    residual = ObservableSeries("morawetz_rate_residual", times[1:-1], r)
    fitted = None
    if proxy is not None:
        _check_aligned(virial, proxy)
        p = proxy.values[1:-1]
        denom = float(p @ p)
        if denom > 0:
            fitted = float(np.abs(r) @ p / denom)
    return MorawetzResidualReport(residual, fitted)


def lambda_accumulator(lambda_density: ObservableSeries) -> ObservableSeries:
    """Running trapezoid of int (15/chi^7) |u|^2; non-decreasing by positivity."""
    return ObservableSeries(
        "lambda", lambda_density.times, lambda_density.cumulative_trapezoid()
    )


@dataclass
class BoundCheckReport:
    passed: bool
    constant: float
    worst_margin: float
    worst_time: float


def energy_lambda_bound_check(
    energy_series: ObservableSeries,
    lambda_series: ObservableSeries,
    metric: MetricField,
    damping: DampingField,
    tables: WeightTables,
    tol: float = 1e-9,
    constant: float | None = None,
) -> BoundCheckReport:
    """Verify E(t) <= E(0) + C0 lambda(t) + tol with
    C0 = (1/2) max |div(G grad a)| / (15/chi^7) over the grid."""
    times = _check_aligned(energy_series, lambda_series)
    if constant is None:
        spec = metric.spec
        lap_G_a = laplacian_G(
            Field(damping.table.astype(complex), spec), metric
        ).values.real
        constant = float(0.5 * np.max(np.abs(lap_G_a) / tables.lambda_kernel))
    e = energy_series.values
    margins = e[0] + constant * lambda_series.values + tol - e
    worst = int(np.argmin(margins))
    return BoundCheckReport(
        passed=bool(np.all(margins >= 0.0)),
        constant=constant,
        worst_margin=float(margins[worst]),
        worst_time=float(times[worst]),
    )


@dataclass
class AccumulatorReport:
    accumulator: ObservableSeries
    tail_fraction: float
    bounded: bool


def l4_accumulator(
    l4_series: ObservableSeries, tail_window: float = 0.25, tail_tol: float = 0.05
) -> AccumulatorReport:
    """Running int |u|^4 with a bounded-trend verdict: the increment over the
    last quarter of the horizon must stay below 5% of the total."""
    acc = ObservableSeries("l4_accumulator", l4_series.times,
                           l4_series.cumulative_trapezoid())
    times, values = acc.times, acc.values
    total = values[-1]
    if total <= 0.0:
        return AccumulatorReport(acc, 0.0, True)
    t_split = times[-1] - tail_window * (times[-1] - times[0])
    idx = int(np.searchsorted(times, t_split))
    idx = min(max(idx, 0), len(values) - 1)
    tail = (total - values[idx]) / total
    return AccumulatorReport(acc, float(tail), bool(tail < tail_tol))


def _join(a: ObservableSeries, b: ObservableSeries):
    """Values of two series restricted to their common time stamps."""
    ta, tb = a.times, b.times
    common = np.intersect1d(np.round(ta, 10), np.round(tb, 10))
    ia = np.nonzero(np.isin(np.round(ta, 10), common))[0]
    ib = np.nonzero(np.isin(np.round(tb, 10), common))[0]
    if len(ia) == 0:
        raise SeriesAlignmentError(
            f"series {a.name!r} and {b.name!r} share no time stamps"
        )
    return ta[ia], a.values[ia], b.values[ib]


@dataclass
class InteractionReport:
    passed: bool
    fitted_constant: float
    worst_margin: float
    rate_constant: float = 4.0 * np.pi


def interaction_inequality_check(
    l4_series: ObservableSeries,
    interaction_series: ObservableSeries,
    h1_sq_series: ObservableSeries,
    supp_a_h1_series: ObservableSeries,
    tol: float = 1e-6,
) -> InteractionReport:
    """Verify 4*pi int_0^t |u|^4 <= C sup_s ||u||_H1^2 int_0^t int_{supp a}(..)
    + B(t) - B(0) + tol at the recorded interaction stamps (3d constant)."""
    l4_acc = ObservableSeries("l4_acc", l4_series.times,
                              l4_series.cumulative_trapezoid())
    _check_aligned(l4_series, h1_sq_series, supp_a_h1_series)
    h1_sup = np.maximum.accumulate(h1_sq_series.values)
    control_acc = ObservableSeries(
        "control_acc",
        supp_a_h1_series.times,
        cumulative_trapezoid(
            h1_sup * supp_a_h1_series.values, supp_a_h1_series.times, initial=0.0
        ),
    )
    times, b_vals, l4_vals = _join(interaction_series, l4_acc)
    _, _, ctrl_vals = _join(interaction_series, control_acc)
    gain = 4.0 * np.pi * l4_vals - (b_vals - b_vals[0])
    denom = float(ctrl_vals @ ctrl_vals)
    fitted = float(gain @ ctrl_vals / denom) if denom > 0 else 0.0
    fitted = max(fitted, 0.0)
    margins = fitted * ctrl_vals + tol - gain
    worst = float(margins.min()) if len(margins) else 0.0
    passed = bool(np.all(margins >= 0.0))
    if not passed and denom > 0:
        # least squares can undershoot; the minimal valid constant is the max ratio
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(ctrl_vals > 0, (gain - tol) / ctrl_vals, 0.0)
        fitted = float(max(ratios.max(), 0.0))
        margins = fitted * ctrl_vals + tol - gain
        worst = float(margins.min())
        passed = bool(np.all(margins >= -1e-12))
    return InteractionReport(passed, fitted, worst)


@dataclass
class StabilityReport:
    delta: float
    sup_difference: float
    amplification: float
    times: np.ndarray
    differences: np.ndarray


def stability_probe(
    u0: Field,
    delta: float,
    metric: MetricField,
    damping: DampingField,
    cfg,
    seed: int = 0,
) -> StabilityReport:
    """Run u0 and u0 + delta * (unit smooth perturbation) in lockstep and report
    the sup-in-time L^2 difference and its amplification over delta."""
    from .solver import SimulationState, step  # deferred to avoid an import cycle

    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    spec = u0.spec
    pert = smooth_random_field(spec, seed=seed)
    base = u0.values
    if cfg.dealias:
        base = spec.band_limit(base)
        pert_vals = spec.band_limit(pert.values)
    else:
        pert_vals = pert.values
    s1 = SimulationState(Field(base.copy(), spec), 0.0, 0, metric, damping)
    s2 = SimulationState(Field(base + delta * pert_vals, spec), 0.0, 0, metric,
                         damping)
    times = [0.0]
    diffs = [Field(s2.u.values - s1.u.values, spec).l2_norm()]
    for _ in range(cfg.n_steps):
        s1 = step(s1, cfg)
        s2 = step(s2, cfg)
        times.append(s1.t)
        diffs.append(Field(s2.u.values - s1.u.values, spec).l2_norm())
    sup = float(np.max(diffs))
    return StabilityReport(
        delta=delta,
        sup_difference=sup,
        amplification=sup / delta if delta > 0 else 0.0,
        times=np.asarray(times),
        differences=np.asarray(diffs),
    )
