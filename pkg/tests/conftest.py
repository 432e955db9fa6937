import warnings

import numpy as np
import pytest

from dnls.grid import Field, GridSpec


def gaussian_field(spec: GridSpec, amplitude=0.5, width=1.0, momentum=0.0) -> Field:
    """Centered Gaussian packet, optionally boosted along the first axis."""
    values = amplitude * np.exp(-spec.radius_squared / (2.0 * width**2))
    if momentum:
        values = values * np.exp(
            1j * momentum * np.broadcast_to(spec.coords[0], spec.shape)
        )
    return Field(values.astype(np.complex128), spec)


def band_limited_random(spec: GridSpec, seed=0, k_scale=1.5) -> Field:
    """Random field restricted to the dealias band with a Gaussian envelope."""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    coeffs *= np.exp(-spec.k_squared / k_scale**2)
    coeffs[~spec.dealias_mask] = 0.0
    return Field(spec.ifft(coeffs), spec)


@pytest.fixture(autouse=True)
def _silence_wraparound_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*boundary-shell mass.*")
        warnings.filterwarnings("ignore", message=".*exterior control.*")
        yield
