"""Virtual conjugate coils and SVC-GRAPPA.

SVC-GRAPPA runs VC-GRAPPA on horizontally and vertically finite-differenced
k-space (sparser images, easier to interpolate) and merges the two estimates
by a per-frequency least-squares solve with a data-consistency term.
"""
from __future__ import annotations

import enum

import numpy as np

from .grappa import KernelGeometry, calibrate, fitting_geometry, interpolate
from .kcore import AcsSpec, SamplingMask, make_uniform_mask, substitute_acquired

LAMBDA_DC = 1e3
EPS_DC = 1e-12


class GradientAxis(enum.Enum):
    HORIZONTAL = "horizontal"  # readout, x, last axis
    VERTICAL = "vertical"  # phase encode, y, second to last axis


def reflect_index(n: int) -> np.ndarray:
    """Storage index of the point reflection k -> -k on an fftshifted axis of even length."""
    if n % 2:
        raise ValueError("reflection needs an even grid size")
    return (n - np.arange(n)) % n


def _check_reflectable(ksp, mask):
    ny, nx = ksp.shape[-2:]
    if ny % 2 or nx % 2:
        raise ValueError("reflection-incompatible grid: ny and nx must be even")
    if ny % mask.r:
        raise ValueError("reflection-incompatible mask")


def augment_virtual_coils(ksp, mask: SamplingMask):
    """Append ``n_c`` virtual coils ``conj(K_c(-k))``; the mask is returned unchanged."""
    ksp = np.asarray(ksp)
    _check_reflectable(ksp, mask)
    ny, nx = ksp.shape[-2:]
    virtual = np.conj(ksp[:, reflect_index(ny)][:, :, reflect_index(nx)])
    return np.concatenate([ksp, virtual], axis=0), mask


def symmetric_acs(acs: AcsSpec, ny: int) -> AcsSpec:
    """Largest sub-block of the ACS whose reflection is also inside the ACS."""
    refl = reflect_index(ny)
    rows = np.arange(acs.start, acs.stop)
    inside = np.isin(refl[rows], rows)
    if not inside.any():
        raise ValueError("insufficient calibration data")
    keep = rows[inside]
    return AcsSpec(int(keep[0]), int(keep[-1] - keep[0] + 1))


def vc_grappa_reconstruct(und, mask: SamplingMask, geom: KernelGeometry | None = None, lam: float = 1e-4):
    """GRAPPA over physical plus virtual coils; returns the physical coils, ACS not substituted."""
    und = np.asarray(und)
    n_c = und.shape[0]
    if mask.r == 1:
        return und.copy()
    aug, _ = augment_virtual_coils(und, mask)
    acs = symmetric_acs(mask.acs, mask.ny)
    geom = geom or fitting_geometry(mask.r, acs.count)
    kernel = calibrate(aug[:, acs.start:acs.stop], geom, lam)
    return interpolate(aug, mask, kernel)[:n_c]


def diagonal_weights(n: int, dtype=np.complex128) -> np.ndarray:
    """``1 - exp(-2 pi i k / n)`` per storage index, k the unshifted frequency."""
    k = np.arange(n) - n // 2
    return (1 - np.exp(-2j * np.pi * k / n)).astype(dtype)


def _axis_weights(shape, axis: GradientAxis, dtype=np.complex128):
    ny, nx = shape[-2:]
    if axis is GradientAxis.HORIZONTAL:
        return diagonal_weights(nx, dtype)[None, :]
    return diagonal_weights(ny, dtype)[:, None]


def gradient_weight(ksp, axis: GradientAxis):
    """Circular first difference ``img(p) - img(p - 1)`` along ``axis``, applied in k-space."""
    ksp = np.asarray(ksp)
    out = ksp * _axis_weights(ksp.shape, GradientAxis(axis))
    return out.astype(np.result_type(ksp.dtype, np.complex64), copy=False)


def ls_combine(xh, xv, acquired, mask: SamplingMask, lambda_dc=LAMBDA_DC, eps=EPS_DC, hard=True):
    """Merge gradient-domain estimates by per-frequency least squares.

    Minimizes ``|w_h x - xh|^2 + |w_v x - xv|^2 + lambda_dc * m |x - acq|^2``
    at every frequency; with ``hard`` the acquired samples are then copied in.
    """
    xh, xv, acquired = (np.asarray(a) for a in (xh, xv, acquired))
    if not (xh.shape == xv.shape == acquired.shape):
        raise ValueError("ls_combine inputs must share one shape")
    wh = _axis_weights(xh.shape, GradientAxis.HORIZONTAL)
    wv = _axis_weights(xh.shape, GradientAxis.VERTICAL)
    m = mask.acquired.astype(np.float64)[:, None]
    num = np.conj(wh) * xh + np.conj(wv) * xv + lambda_dc * m * acquired
    den = np.abs(wh) ** 2 + np.abs(wv) ** 2 + lambda_dc * m + eps
    out = (num / den).astype(np.result_type(xh.dtype, acquired.dtype, np.complex64))
    if hard:
        out = substitute_acquired(out, acquired, mask)
    return out


def svc_grappa_reconstruct(und, mask: SamplingMask, geom: KernelGeometry | None = None, lam: float = 1e-4,
                           substitute: bool = True):
    """SVC-GRAPPA.

    With ``substitute=False`` data consistency is enforced on the ``i % r == 0``
    lattice only, so ACS lines off the lattice keep their estimated values.
    """
    und = np.asarray(und)
    if mask.r == 1:
        return und.copy()
    xh = vc_grappa_reconstruct(gradient_weight(und, GradientAxis.HORIZONTAL), mask, geom, lam)
    xv = vc_grappa_reconstruct(gradient_weight(und, GradientAxis.VERTICAL), mask, geom, lam)
    dc_mask = mask if substitute else make_uniform_mask(mask.ny, mask.r, 0)
    return ls_combine(xh, xv, und, dc_mask)
