"""Scan-specific nonlinear k-space interpolation (RAKI-style baseline).

Each target coil gets a CNN that maps the acquired-line grid (every r-th
line, all coils, real and imaginary parts stacked as channels) to the r - 1
missing lines that follow each acquired line. Working on the decimated grid
lets ordinary convolutions stand in for dilated ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import micronet
from .kcore import SamplingMask, crop_acs, real_dtype, substitute_acquired


def raki_architecture(r, width=32, bottleneck=8, relu=True):
    act = ["relu"] if relu else []
    return [(width, 3, 5), *act, (bottleneck, 1, 1), *act, (2 * (r - 1), 1, 3)]


@dataclass(frozen=True)
class RakiConfig:
    epochs: int = 300
    lr: float = 1e-3
    lr_final: float | None = None
    width: int = 32
    bottleneck: int = 8
    seed: int = 0
    layers: tuple | None = None  # explicit layer spec, overrides width/bottleneck

    def architecture(self, r):
        if self.layers is not None:
            return list(self.layers)
        return raki_architecture(r, self.width, self.bottleneck)


@dataclass
class RakiModel:
    r: int
    networks: list  # one per target coil
    scale: float
    config: RakiConfig
    histories: list = field(default_factory=list)

    @property
    def n_c(self):
        return len(self.networks)


def _channels(ksp):
    return np.concatenate([ksp.real, ksp.imag], axis=-3)


def training_pairs(acs, r, halo):
    """Decimated ACS windows and their missing-line targets.

    Every start line whose window of ``L`` lattice rows (spacing r) fits in the
    ACS gives one sample; for ``count % r == 0`` these are the r sampling phases.
    Returns ``inputs`` (S, 2 n_c, L, nx), ``targets`` (n_c, S, 2 (r - 1), L - 2 halo, nx)
    and the crop ``(halo, L - halo)`` of output rows whose context lies inside the ACS.
    """
    n_c, count, nx = acs.shape
    length = (count - 1) // r + 1

    def n_starts(length):
        # lattice rows must fit, and so must the missing lines after the last output row
        return min(count - (length - 1) * r, count - (length - halo) * r + 1)

    while length > 2 * halo and n_starts(length) < 1:
        length -= 1
    if length - 2 * halo < 1 or n_starts(length) < 1:
        raise ValueError("insufficient calibration data")
    starts = np.arange(n_starts(length))
    rows = np.arange(length) * r
    inputs = np.stack([_channels(acs[:, s + rows]) for s in starts])
    valid = rows[halo:length - halo]
    targets = np.empty((n_c, starts.size, 2 * (r - 1), valid.size, nx))
    for i, s in enumerate(starts):
        missing = acs[:, s + valid[None, :] + np.arange(1, r)[:, None]]  # (n_c, r - 1, V, nx)
        targets[:, i] = np.concatenate([missing.real, missing.imag], axis=1)
    return inputs, targets, (halo, length - halo)


def min_acs(r, halo):
    """Smallest ACS count leaving one output row with full context."""
    return 2 * halo * r + 1 if halo else r


def train_raki(und, mask: SamplingMask, cfg: RakiConfig | None = None) -> RakiModel:
    cfg = cfg or RakiConfig()
    und = np.asarray(und)
    r = mask.r
    if r < 2:
        raise ValueError("RAKI needs r >= 2")
    n_c = und.shape[0]
    spec = cfg.architecture(r)
    nets = [micronet.build_network(2 * n_c, spec, rng=np.random.default_rng([cfg.seed, c]))
            for c in range(n_c)]
    halo = nets[0].row_halo
    acs = crop_acs(und, mask.acs)
    peak = float(np.abs(acs).max())
    scale = 1.0 / peak if peak > 0 else 1.0
    inputs, targets, crop = training_pairs(acs * scale, r, halo)
    hyper = micronet.TrainHyper(epochs=cfg.epochs, lr=cfg.lr, lr_final=cfg.lr_final)
    histories = []
    for c, net in enumerate(nets):
        _, hist = micronet.train(net, inputs.astype(real_dtype()), targets[c], crop, hyper)
        histories.append(hist)
    return RakiModel(r, nets, scale, cfg, histories)


def raki_predict(und, model: RakiModel):
    """Network estimates for every off-lattice line (no data substitution)."""
    und = np.asarray(und)
    r = model.r
    n_c, ny, nx = und.shape
    if ny % r:
        raise ValueError("grid not divisible by R")
    x = (_channels(und[:, ::r]) * model.scale).astype(real_dtype())
    # wrap ky like grappa.interpolate; rows beyond the halo see exact circular context
    halo = model.networks[0].row_halo
    m = x.shape[-2]
    x = np.take(x, np.arange(-halo, m + halo) % m, axis=-2)
    out = und.copy()
    for c, net in enumerate(model.networks):
        y, _ = micronet.forward(net, x)
        y = y[:, halo:halo + m].astype(np.float64) / model.scale
        est = y[:r - 1] + 1j * y[r - 1:]  # (r - 1, ny / r, nx)
        for d in range(1, r):
            out[c, d::r] = est[d - 1]
    return out


def raki_reconstruct(und, mask: SamplingMask, model: RakiModel):
    """Predict the missing lines, then put every acquired line (ACS included) back."""
    if model.r != mask.r:
        raise ValueError(f"model r={model.r} does not match mask r={mask.r}")
    und = np.asarray(und)
    return substitute_acquired(raki_predict(und, model), und, mask)
