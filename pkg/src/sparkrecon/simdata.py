"""Phantom, coil sensitivities and retrospective multi-coil acquisitions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kcore import complex_dtype, fft2c, make_uniform_mask  # noqa: F401  (re-export)

#: Generator used for every random draw in the package.
PRNG_NAME = "numpy.random.PCG64"

# Toft's modified Shepp-Logan: (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees).
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def pixel_coords(n: int):
    """Normalized (x, y) coordinates in [-1, 1); pixel (n//2, n//2) is the origin, y points up."""
    c = (np.arange(n) - n // 2) / (n / 2)
    x = np.broadcast_to(c[None, :], (n, n))
    y = np.broadcast_to(-c[:, None], (n, n))
    return x, y


def shepp_logan(n: int, ellipses=SHEPP_LOGAN_ELLIPSES):
    """Modified Shepp-Logan phantom on an ``n x n`` grid, values in [0, 1]."""
    if n < 16:
        raise ValueError("phantom size must be >= 16")
    x, y = pixel_coords(n)
    img = np.zeros((n, n))
    for rho, a, b, x0, y0, deg in ellipses:
        th = np.deg2rad(deg)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += rho
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class CoilGeometry:
    """Coil placement: centers on a circle around the FOV, Gaussian falloff, linear phase."""

    radius: float = 0.55  # fraction of n
    width: float = 0.4  # Gaussian sigma, fraction of n
    phase_slope: float = np.pi  # radians across the FOV, along the coil direction


@dataclass(frozen=True, eq=False)
class CoilMaps:
    maps: np.ndarray
    geometry: CoilGeometry

    @property
    def n_c(self) -> int:
        return self.maps.shape[0]


def make_coil_maps(n: int, n_c: int, geometry: CoilGeometry | None = None) -> CoilMaps:
    geometry = geometry or CoilGeometry()
    if n_c < 1:
        raise ValueError("need at least one coil")
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    yy -= n // 2
    xx -= n // 2
    maps = np.empty((n_c, n, n), dtype=np.complex128)
    for c in range(n_c):
        ang = 2 * np.pi * c / n_c
        ux, uy = np.cos(ang), -np.sin(ang)  # row axis points down
        cx, cy = geometry.radius * n * ux, geometry.radius * n * uy
        dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
        mag = np.exp(-dist2 / (2 * (geometry.width * n) ** 2))
        phase = geometry.phase_slope * (xx * ux + yy * uy) / n
        maps[c] = mag * np.exp(1j * phase)
    return CoilMaps(maps, geometry)


@dataclass(frozen=True)
class AcquisitionParams:
    n: int = 128
    n_c: int = 8
    sigma: float = 5e-4
    seed: int = 1

    def __post_init__(self):
        if self.n < 16:
            raise ValueError("image size must be >= 16")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def simulate_acquisition(img, maps: CoilMaps, p: AcquisitionParams):
    """Fully sampled coil k-spaces with white complex Gaussian noise.

    The noise standard deviation per real component is ``p.sigma`` times the
    peak noiseless k-space magnitude across coils.
    """
    if p.sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    img = np.asarray(img)
    if maps.maps.shape[1:] != img.shape:
        raise ValueError(f"coil maps {maps.maps.shape[1:]} do not match image {img.shape}")
    ksp = fft2c(maps.maps * img[None])
    if p.sigma > 0:
        rng = np.random.default_rng(p.seed)
        peak = np.abs(ksp).max()
        g = rng.standard_normal((2,) + ksp.shape)
        ksp = ksp + p.sigma * peak * (g[0] + 1j * g[1])
    return ksp.astype(complex_dtype())


@dataclass(frozen=True, eq=False)
class Acquisition:
    """Ground truth bundle: image, maps and fully sampled k-space."""

    image: np.ndarray
    maps: CoilMaps
    kspace: np.ndarray
    params: AcquisitionParams


def make_acquisition(params: AcquisitionParams | None = None, geometry: CoilGeometry | None = None) -> Acquisition:
    params = params or AcquisitionParams()
    img = shepp_logan(params.n)
    maps = make_coil_maps(params.n, params.n_c, geometry)
    return Acquisition(img, maps, simulate_acquisition(img, maps, params), params)
