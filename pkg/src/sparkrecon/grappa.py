"""Tikhonov-regularized 1D GRAPPA along the phase-encode axis.

For a missing line at offset ``d`` (1 <= d < r) past an acquired line, the
sources are the ``ky_taps`` nearest acquired lines, ``ky_taps / 2`` on each
side, and ``kx_taps`` readout neighbours around the target column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kcore import SamplingMask, crop_acs, substitute_acquired


@dataclass(frozen=True)
class KernelGeometry:
    ky_taps: int = 4
    kx_taps: int = 5
    r: int = 4

    def __post_init__(self):
        if self.ky_taps < 2 or self.ky_taps % 2:
            raise ValueError(f"ky_taps must be even and >= 2, got {self.ky_taps}")
        if self.kx_taps < 1 or self.kx_taps % 2 == 0:
            raise ValueError(f"kx_taps must be odd and >= 1, got {self.kx_taps}")
        if self.r < 2:
            raise ValueError(f"kernel geometry needs r >= 2, got {self.r}")

    def source_offsets(self, d: int) -> np.ndarray:
        """Line offsets of the source taps relative to a target at offset ``d``."""
        half = self.ky_taps // 2
        return np.arange(-(half - 1), half + 1) * self.r - d

    @property
    def min_acs(self) -> int:
        return (self.ky_taps - 1) * self.r + 1


def fitting_geometry(r: int, acs_count: int, ky_taps: int = 4, kx_taps: int = 5) -> KernelGeometry:
    """Largest even ``ky_taps`` not above the request that the ACS can calibrate."""
    for k in range(ky_taps, 1, -2):
        geom = KernelGeometry(k, kx_taps, r)
        if acs_count >= geom.min_acs:
            return geom
    raise ValueError("insufficient calibration data")


@dataclass(frozen=True, eq=False)
class GrappaKernel:
    """weights[c, d - 1, s, j, i]: target coil, missing offset, source coil, ky tap, kx tap."""

    geometry: KernelGeometry
    weights: np.ndarray

    @property
    def n_c(self) -> int:
        return self.weights.shape[0]


def _readout_windows(lines, kx_taps):
    """(..., nx) -> (..., nx, kx_taps) with zero extension at the readout edges."""
    half = kx_taps // 2
    pad = [(0, 0)] * (lines.ndim - 1) + [(half, half)]
    padded = np.pad(lines, pad)
    return np.lib.stride_tricks.sliding_window_view(padded, kx_taps, axis=-1)


def calibration_system(acs, geom: KernelGeometry, d: int):
    """Source matrix A and target matrix B for offset ``d`` over every valid ACS position."""
    n_c, count, nx = acs.shape
    offs = geom.source_offsets(d)
    t0 = -offs.min()
    t1 = count - offs.max()
    if t1 <= t0:
        raise ValueError("insufficient calibration data")
    targets = np.arange(t0, t1)
    src = acs[:, targets[:, None] + offs[None, :], :]  # (n_c, T, ky, nx)
    win = _readout_windows(src, geom.kx_taps)  # (n_c, T, ky, nx, kx)
    A = win.transpose(1, 3, 0, 2, 4).reshape(targets.size * nx, -1)
    B = acs[:, targets, :].transpose(1, 2, 0).reshape(targets.size * nx, n_c)
    return A, B


def solve_ridge(A, B, lam: float):
    """argmin ||A w - b||^2 + lam * mean(diag(A^H A)) ||w||^2 for every column b of B."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    G = A.conj().T @ A
    rhs = A.conj().T @ B
    mu = float(np.real(np.trace(G))) / G.shape[0]
    if lam > 0 and mu == 0:
        # all-zero sources: the minimum-norm ridge solution
        return np.zeros_like(rhs)
    if lam > 0:
        G = G + lam * mu * np.eye(G.shape[0])
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), rhs)
    w, _, rank, _ = scipy.linalg.lstsq(A, B)
    if rank < A.shape[1]:
        raise ValueError("singular calibration")
    return w


def calibrate(acs, geom: KernelGeometry, lam: float = 1e-4) -> GrappaKernel:
    """Fit one kernel per (target coil, missing offset) on fully sampled ACS lines."""
    acs = np.asarray(acs)
    if acs.ndim != 3:
        raise ValueError("ACS must be (n_c, count, nx)")
    if acs.shape[1] < geom.min_acs:
        raise ValueError("insufficient calibration data")
    n_c = acs.shape[0]
    work = acs.astype(np.complex128)
    weights = np.empty((n_c, geom.r - 1, n_c, geom.ky_taps, geom.kx_taps), dtype=np.complex128)
    for d in range(1, geom.r):
        A, B = calibration_system(work, geom, d)
        w = solve_ridge(A, B, lam)  # (n_c * ky * kx, n_c)
        weights[:, d - 1] = w.T.reshape(n_c, n_c, geom.ky_taps, geom.kx_taps)
    if not np.all(np.isfinite(weights)):
        raise ValueError("singular calibration")
    return GrappaKernel(geom, weights)


def interpolate(und, mask: SamplingMask, kernel: GrappaKernel):
    """Estimate every line off the ``i % r == 0`` lattice, ACS lines included.

    Lattice lines pass through untouched; ACS lines are overwritten by their
    kernel estimate so the result is a reconstruction without ACS substitution.

    Source lines wrap around the phase-encode axis (the acquired set is
    periodic because ny is a multiple of r). Readout taps are zero-extended.
    """
    und = np.asarray(und)
    geom = kernel.geometry
    if mask.r != geom.r:
        raise ValueError(f"mask r={mask.r} does not match kernel r={geom.r}")
    n_c, ny, nx = und.shape
    if n_c != kernel.n_c:
        raise ValueError(f"kernel expects {kernel.n_c} coils, data has {n_c}")
    if ny != mask.ny or ny % geom.r:
        raise ValueError("mask and k-space geometry mismatch")
    out = und.copy()
    base = np.arange(0, ny, geom.r)
    w = kernel.weights.astype(np.result_type(und.dtype, np.complex64))
    for d in range(1, geom.r):
        lines = base + d
        src = und[:, (lines[:, None] + geom.source_offsets(d)[None, :]) % ny, :]
        win = _readout_windows(src, geom.kx_taps)  # (n_c, L, ky, nx, kx)
        est = np.einsum("sljxi,csji->clx", win, w[:, d - 1], optimize=True)
        out[:, lines, :] = est
    return out


def grappa_reconstruct(und, mask: SamplingMask, geom: KernelGeometry | None = None, lam: float = 1e-4,
                       substitute: bool = True):
    """Calibrate on the ACS of ``und``, interpolate, optionally re-insert acquired data."""
    und = np.asarray(und)
    if mask.r == 1:
        return und.copy()
    geom = geom or fitting_geometry(mask.r, mask.acs.count)
    kernel = calibrate(crop_acs(und, mask.acs), geom, lam)
    out = interpolate(und, mask, kernel)
    if substitute:
        out = substitute_acquired(out, und, mask)
    return out
