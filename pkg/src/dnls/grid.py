"""Periodic grid, spectral transforms, differential operators, and weight tables.

Conventions used throughout the package:

* the box is ``[-L, L)^dim`` sampled at ``n`` points per axis, ``dx = 2L/n``;
* Fourier coefficients ``c_k`` are normalized so that ``f(x) = sum_k c_k e^{ikx}``
  (``norm="forward"`` transforms), with wave numbers ``k = (pi/L) * m``,
  ``m in {-n/2, ..., n/2 - 1}``;
* quadrature is the torus midpoint rule ``dx^dim * sum``, which is exact for
  band-limited integrands and satisfies Parseval against the coefficients:
  ``int |f|^2 = (2L)^dim * sum_k |c_k|^2``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as _fft

from .errors import DomainError, GridMismatchError

__all__ = [
    "GridSpec",
    "Field",
    "WeightTables",
    "gradient",
    "divergence",
    "laplacian",
    "laplacian_G",
    "sobolev_norm",
    "localized_integral",
    "weight_tables",
]


def _fft_workers() -> int:
    try:
        return max(1, int(os.environ.get("DNLS_THREADS", "1")))
    except ValueError:
        return 1


class GridSpec:
    """Uniform periodic grid on the box [-L, L)^dim.

    n must be even (the grid then contains x = 0 and a symmetric mode band);
    powers of two and 3*2^k sizes transform fastest.
    """

    def __init__(self, dim: int, n: int, length: float):
        if dim not in (1, 2, 3):
            raise DomainError(f"dim must be 1, 2 or 3, got {dim}")
        if n < 4 or n % 2 != 0:
            raise DomainError(f"n_per_axis must be an even integer >= 4, got {n}")
        if not length > 0:
            raise DomainError(f"half-length must be positive, got {length}")
        self.dim = int(dim)
        self.n = int(n)
        self.length = float(length)
        self.dx = 2.0 * self.length / self.n
        self.shape = (self.n,) * self.dim
        self.size = self.n**self.dim
        # 1d samples: x_i = -L + i*dx; wave numbers in fft order
        self.x1d = -self.length + self.dx * np.arange(self.n)
        self.k1d = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    # -- equality / hashing on the defining triple ---------------------------

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GridSpec)
            and self.dim == other.dim
            and self.n == other.n
            and self.length == other.length
        )

    def __hash__(self) -> int:
        return hash((self.dim, self.n, self.length))

    def __repr__(self) -> str:
        return f"GridSpec(dim={self.dim}, n={self.n}, length={self.length})"

    # -- broadcastable meshes -------------------------------------------------

    def _along_axis(self, values: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.dim
        shape[axis] = self.n
        return values.reshape(shape)

    @cached_property
    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        return [self._along_axis(self.x1d, j) for j in range(self.dim)]

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Broadcastable wave-number arrays, one per axis."""
        return [self._along_axis(self.k1d, j) for j in range(self.dim)]

    @cached_property
    def k_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for k in self.wavenumbers:
            out = out + k**2
        return out

    @cached_property
    def radius_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for x in self.coords:
            out = out + x**2
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask in fft order: keep |m| <= n//3 per axis."""
        m = np.fft.fftfreq(self.n) * self.n
        keep1d = np.abs(m) <= self.n // 3
        mask = np.ones(self.shape, dtype=bool)
        for j in range(self.dim):
            mask = mask & self._along_axis(keep1d, j)
        return mask

    @cached_property
    def boundary_shell(self) -> np.ndarray:
        """Outermost two-cell shell in the max-norm, used for wrap-around warnings."""
        edge = self.length - 2.0 * self.dx
        shell = np.zeros(self.shape, dtype=bool)
        for x in self.coords:
            shell = shell | (np.abs(x) >= edge)
        return shell

    def ball_mask(self, radius: float) -> np.ndarray:
        if radius >= self.length:
            raise DomainError(
                f"ball radius {radius} must be < box half-length {self.length}"
            )
        return self.radius_squared <= radius**2

    # -- transforms and quadrature -------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        return _fft.fftn(values, norm="forward", workers=_fft_workers())

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return _fft.ifftn(coeffs, norm="forward", workers=_fft_workers())

    def quadrature(self, values: np.ndarray) -> complex | float:
        return values.sum() * self.dx**self.dim

    @property
    def volume(self) -> float:
        return (2.0 * self.length) ** self.dim

    def band_limit(self, values: np.ndarray) -> np.ndarray:
        """Project onto the 2/3 dealias band."""
        coeffs = self.fft(values)
        coeffs[~self.dealias_mask] = 0.0
        return self.ifft(coeffs)


@dataclass
class Field:
    """Complex scalar field sampled on a GridSpec, row-major."""

    values: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.spec.shape:
            raise GridMismatchError(
                f"field shape {self.values.shape} != grid shape {self.spec.shape}"
            )

    def validate(self) -> "Field":
        if not np.all(np.isfinite(self.values.view(np.float64))):
            raise DomainError("field contains non-finite values")
        return self

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.spec)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.spec.quadrature(np.abs(self.values) ** 2).real))


def _same_spec(fields: Iterable[Field]) -> GridSpec:
    specs = {f.spec for f in fields}
    if len(specs) != 1:
        raise GridMismatchError("fields live on different grids")
    return specs.pop()


def gradient(f: Field) -> list[Field]:
    """Spectral gradient; exact on band-limited fields."""
    spec = f.spec
    coeffs = spec.fft(f.values)
    return [
        Field(spec.ifft(1j * k * coeffs), spec) for k in spec.wavenumbers
    ]


def divergence(components: Sequence[Field]) -> Field:
    """Spectral divergence via the summed multiplier sum_j i k_j v_j."""
    spec = _same_spec(components)
    if len(components) != spec.dim:
        raise GridMismatchError(
            f"expected {spec.dim} components, got {len(components)}"
        )
    acc = np.zeros(spec.shape, dtype=np.complex128)
    for k, comp in zip(spec.wavenumbers, components):
        acc += 1j * k * spec.fft(comp.values)
    return Field(spec.ifft(acc), spec)


def laplacian(f: Field) -> Field:
    """Free Laplacian via the -|k|^2 multiplier."""
    spec = f.spec
    return Field(spec.ifft(-spec.k_squared * spec.fft(f.values)), spec)


def _metric_table(metric, spec: GridSpec) -> np.ndarray:
    """Accept a MetricField-like object (with .table) or a bare (d,d,...) array."""
    table = np.asarray(getattr(metric, "table", metric), dtype=np.float64)
    expected = (spec.dim, spec.dim) + spec.shape
    if table.shape != expected:
        raise GridMismatchError(
            f"metric table shape {table.shape} != expected {expected}"
        )
    return table


def laplacian_G(f: Field, metric, dealias: bool = False) -> Field:
    """Divergence-form operator div(G grad f) with optional 2/3-rule dealiasing.

    The dealias mask is applied after the pointwise multiplication by G and
    again after the final divergence.
    """
    spec = f.spec
    table = _metric_table(metric, spec)
    if not np.all(np.isfinite(table)):
        raise DomainError("metric table contains non-finite entries")
    mask = spec.dealias_mask
    coeffs = spec.fft(f.values)
    grads = [spec.ifft(1j * k * coeffs) for k in spec.wavenumbers]
    acc = np.zeros(spec.shape, dtype=np.complex128)
    for i in range(spec.dim):
        flux = np.zeros(spec.shape, dtype=np.complex128)
        for j in range(spec.dim):
            flux += table[i, j] * grads[j]
        flux_hat = spec.fft(flux)
        if dealias:
            flux_hat[~mask] = 0.0
        acc += 1j * spec.wavenumbers[i] * flux_hat
    if dealias:
        acc[~mask] = 0.0
    return Field(spec.ifft(acc), spec)


def sobolev_norm(f: Field, s: float, homogeneous: bool = False) -> float:
    """H^s (or homogeneous H^s) norm via the Fourier multiplier."""
    if s < 0:
        raise DomainError(f"Sobolev index must be >= 0, got {s}")
    spec = f.spec
    coeffs = spec.fft(f.values)
    k2 = spec.k_squared
    if homogeneous:
        weight = k2**s  # 0**0 == 1, so s=0 reduces to the L^2 norm
    else:
        weight = (1.0 + k2) ** s
    total = np.sum(weight * np.abs(coeffs) ** 2) * spec.volume
    return float(np.sqrt(total))


_LOCALIZED_MODES = ("density", "energy", "quartic")


def localized_integral(f: Field, radius: float, mode: str = "density") -> float:
    """Quadrature of |u|^2, |grad u|^2 + |u|^2 or |u|^4 over the ball B(0, R)."""
    if mode not in _LOCALIZED_MODES:
        raise DomainError(f"mode must be one of {_LOCALIZED_MODES}, got {mode!r}")
    spec = f.spec
    mask = spec.ball_mask(radius)
    if mode == "density":
        density = np.abs(f.values) ** 2
    elif mode == "quartic":
        density = np.abs(f.values) ** 4
    else:
        density = np.abs(f.values) ** 2
        for g in gradient(f):
            density = density + np.abs(g.values) ** 2
    return float(np.sum(density[mask]) * spec.dx**spec.dim)


@dataclass
class WeightTables:
    """On-grid samples of the virial weight chi = sqrt(1+|x|^2) and |x| kernels.

    ``lambda_kernel`` is the positive weight 15/chi^7 driving the localized-mass
    accumulator; in three dimensions it coincides with ``-bilap_chi``.
    """

    spec: GridSpec
    chi: np.ndarray
    grad_chi: np.ndarray       # (dim, ...)
    hess_chi: np.ndarray       # (dim, dim, ...)
    lap_chi: np.ndarray
    bilap_chi: np.ndarray
    lambda_kernel: np.ndarray
    grad_rho: np.ndarray       # (dim, ...)
    lap_rho: np.ndarray
    grad_lap_rho: np.ndarray   # (dim, ...)


def weight_tables(spec: GridSpec) -> WeightTables:
    """Populate all weight tables from closed forms.

    For chi = sqrt(1+r^2) in dimension d:
        grad chi = x/chi,    D^2 chi = I/chi - x x^T / chi^3,
        lap chi = (d-1)/chi + 1/chi^3,
        lap^2 chi = (d-1)*((3-d) r^2 - d)/chi^5 + ((15-3d) r^2 - 3d)/chi^7,
    which reduces to lap chi = (3+2r^2)/chi^3 and lap^2 chi = -15/chi^7 at d=3.
    The |x| kernels are regularized at the origin node by averaging the closed
    form over the 2^d half-grid offsets.
    """
    d = spec.dim
    r2 = spec.radius_squared
    chi = np.sqrt(1.0 + r2)
    chi3 = chi**3
    chi5 = chi**5
    chi7 = chi**7

    grad_chi = np.stack(
        [np.broadcast_to(x, spec.shape) / chi for x in spec.coords]
    )
    hess_chi = np.empty((d, d) + spec.shape)
    for i in range(d):
        for j in range(d):
            hess_chi[i, j] = -spec.coords[i] * spec.coords[j] / chi3
            if i == j:
                hess_chi[i, j] += 1.0 / chi
    lap_chi = (d - 1) / chi + 1.0 / chi3
    bilap_chi = (d - 1) * ((3 - d) * r2 - d) / chi5 + ((15 - 3 * d) * r2 - 3 * d) / chi7
    lambda_kernel = 15.0 / chi7

    r = np.sqrt(r2)
    origin = tuple([spec.n // 2] * d)
    assert r[origin] == 0.0
    safe_r = np.where(r == 0.0, 1.0, r)
    grad_rho = np.stack(
        [np.broadcast_to(x, spec.shape) / safe_r for x in spec.coords]
    )
    lap_rho = (d - 1) / safe_r
    grad_lap_rho = np.stack(
        [-(d - 1) * np.broadcast_to(x, spec.shape) / safe_r**3 for x in spec.coords]
    )

    # origin node: mean of the kernels over the 2^d half-offset corners
    corners = np.array(list(product((-0.5, 0.5), repeat=d))) * spec.dx
    norms = np.linalg.norm(corners, axis=1)
    grad_rho[(slice(None),) + origin] = (corners / norms[:, None]).mean(axis=0)
    lap_rho[origin] = ((d - 1) / norms).mean()
    grad_lap_rho[(slice(None),) + origin] = (
        -(d - 1) * corners / norms[:, None] ** 3
    ).mean(axis=0)

    return WeightTables(
        spec=spec,
        chi=chi,
        grad_chi=grad_chi,
        hess_chi=hess_chi,
        lap_chi=lap_chi,
        bilap_chi=bilap_chi,
        lambda_kernel=lambda_kernel,
        grad_rho=grad_rho,
        lap_rho=lap_rho,
        grad_lap_rho=grad_lap_rho,
    )
