"""Shared k-space primitives: centered FFTs, sampling masks, ACS handling, metrics.

Multi-coil data are plain numpy arrays of shape ``(n_c, ny, nx)``. K-space is
stored fftshifted, so DC sits at ``(ny // 2, nx // 2)``.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_PRECISIONS = {
    "f64": (np.float64, np.complex128),
    "f32": (np.float32, np.complex64),
}
_precision = "f64"


def set_precision(name: str) -> None:
    """Select the global compute precision (``"f64"`` or ``"f32"``)."""
    global _precision
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _precision = name


def get_precision() -> str:
    return _precision


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the global precision."""
    old = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


def real_dtype():
    return _PRECISIONS[_precision][0]


def complex_dtype():
    return _PRECISIONS[_precision][1]


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")


def fft2c(img):
    """Orthonormal centered 2D DFT over the last two axes."""
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ValueError("fft2c needs at least a 2D array with ny, nx >= 1")
    _check_finite(img)
    axes = (-2, -1)
    out = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img, axes=axes), norm="ortho"), axes=axes)
    return out.astype(np.result_type(img.dtype, np.complex64), copy=False)


def ifft2c(ksp):
    """Inverse of :func:`fft2c`."""
    ksp = np.asarray(ksp)
    if ksp.ndim < 2 or ksp.shape[-1] < 1 or ksp.shape[-2] < 1:
        raise ValueError("ifft2c needs at least a 2D array with ny, nx >= 1")
    _check_finite(ksp)
    axes = (-2, -1)
    out = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(ksp, axes=axes), norm="ortho"), axes=axes)
    return out.astype(np.result_type(ksp.dtype, np.complex64), copy=False)


def rss_combine(coil_images):
    """Root-sum-of-squares over the coil axis (axis 0)."""
    coil_images = np.asarray(coil_images)
    if coil_images.ndim != 3 or coil_images.shape[0] == 0:
        raise ValueError("rss_combine needs a non-empty (n_c, ny, nx) stack")
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=0))


def rmse(recon, ref):
    """Normalized RMSE ``||recon - ref|| / ||ref||``."""
    recon = np.asarray(recon, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if recon.shape != ref.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("degenerate reference")
    return float(np.linalg.norm(recon - ref) / denom)


def image_rmse(ksp, ref_ksp):
    """RMSE between the RSS magnitude images of two multi-coil k-spaces."""
    return rmse(rss_combine(ifft2c(ksp)), rss_combine(ifft2c(ref_ksp)))


@dataclass(frozen=True)
class AcsSpec:
    """Centered block of ``count`` fully sampled lines starting at ``start``."""

    start: int
    count: int

    @classmethod
    def centered(cls, ny: int, count: int) -> "AcsSpec":
        if not 0 <= count <= ny:
            raise ValueError(f"acs count {count} outside [0, {ny}]")
        return cls((ny - count) // 2, count)

    @property
    def stop(self) -> int:
        return self.start + self.count

    def rows(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Phase-encode line mask: every ``r``-th line plus a centered ACS block."""

    acquired: np.ndarray = field(repr=False)
    r: int
    acs: AcsSpec

    def __post_init__(self):
        acquired = np.asarray(self.acquired, dtype=bool)
        acquired.setflags(write=False)
        object.__setattr__(self, "acquired", acquired)

    @property
    def ny(self) -> int:
        return self.acquired.size

    @property
    def n_acquired(self) -> int:
        return int(self.acquired.sum())


def make_uniform_mask(ny: int, r: int, acs_count: int) -> SamplingMask:
    if r < 1:
        raise ValueError("acceleration must be >= 1")
    if ny % r:
        raise ValueError("grid not divisible by R")
    acs = AcsSpec.centered(ny, acs_count)
    acquired = np.arange(ny) % r == 0
    acquired[acs.rows()] = True
    return SamplingMask(acquired, r, acs)


def _check_mask(ksp, mask):
    if ksp.shape[-2] != mask.ny:
        raise ValueError(f"mask has {mask.ny} lines, k-space has {ksp.shape[-2]}")


def crop_acs(ksp, acs: AcsSpec):
    ksp = np.asarray(ksp)
    if acs.start < 0 or acs.stop > ksp.shape[-2]:
        raise ValueError("ACS block out of bounds")
    return ksp[..., acs.start:acs.stop, :].copy()


def apply_mask(ksp, mask: SamplingMask):
    """Zero every unacquired line."""
    ksp = np.asarray(ksp)
    _check_mask(ksp, mask)
    out = np.zeros_like(ksp)
    out[..., mask.acquired, :] = ksp[..., mask.acquired, :]
    return out


def substitute_acquired(recon, acquired, mask: SamplingMask):
    """Overwrite the acquired lines of ``recon`` with the measured values."""
    recon = np.asarray(recon)
    acquired = np.asarray(acquired)
    if recon.shape != acquired.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {acquired.shape}")
    _check_mask(recon, mask)
    out = recon.copy()
    out[..., mask.acquired, :] = acquired[..., mask.acquired, :]
    return out
