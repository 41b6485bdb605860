"""Scan-specific residual correction of an initial k-space reconstruction.

One network per (coil, real/imaginary part) learns, on the ACS rows only, the
error an initial method makes when it estimates the ACS lines. The trained
networks are then evaluated on the whole grid and their output is added to
the initial reconstruction as a correction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import micronet
from .grappa import KernelGeometry, grappa_reconstruct
from .kcore import AcsSpec, SamplingMask, crop_acs, real_dtype, substitute_acquired
from .vcsvc import svc_grappa_reconstruct, vc_grappa_reconstruct

INITIAL_METHODS = ("grappa", "vc-grappa", "svc-grappa")
PARTS = ("real", "imag")


def spark_architecture(stem=64, head=(32, 8), kernel=3):
    """Stem conv, one residual block, then a head that narrows to one channel."""
    k = (kernel, kernel)
    spec = [(stem, *k), "relu", "res[", (stem, *k), "relu", (stem, *k), "]res"]
    for width in head:
        spec += [(width, *k), "relu"]
    spec.append((1, *k))
    return spec


@dataclass(frozen=True)
class SparkConfig:
    epochs: int = 200
    lr: float = 1e-3
    stem: int = 64
    head: tuple = (32, 8)
    kernel: int = 3
    seed: int = 0
    initial: str = "grappa"
    geometry: KernelGeometry | None = None  # None: largest kernel the ACS supports
    lam: float = 1e-4
    substitute: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial not in INITIAL_METHODS:
            raise ValueError(f"unknown initial method {self.initial!r}; expected one of {INITIAL_METHODS}")
        object.__setattr__(self, "head", tuple(self.head))

    @property
    def architecture(self):
        return spark_architecture(self.stem, self.head, self.kernel)


@dataclass
class SparkModel:
    networks: list  # index 2 * coil + part
    scale: float
    config: SparkConfig
    histories: list = field(default_factory=list)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("normalization scale must be positive")
        if len(self.networks) % 2:
            raise ValueError("need one network per coil and part")

    @property
    def n_c(self) -> int:
        return len(self.networks) // 2

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def initial(self) -> str:
        return self.config.initial


def initial_reconstruction(und, mask: SamplingMask, method="grappa", geom=None, lam=1e-4, substitute=True):
    """Run one of the conventional reconstructions SPARK can start from."""
    if method == "grappa":
        return grappa_reconstruct(und, mask, geom, lam, substitute=substitute)
    if method == "vc-grappa":
        out = vc_grappa_reconstruct(und, mask, geom, lam)
        return substitute_acquired(out, und, mask) if substitute else out
    if method == "svc-grappa":
        return svc_grappa_reconstruct(und, mask, geom, lam, substitute=substitute)
    raise ValueError(f"unknown initial method {method!r}")


def build_residual_target(recon_no_sub, measured, acs: AcsSpec, c: int, part: str):
    """Real or imaginary part of ``crop(measured)_c - crop(recon_no_sub)_c``."""
    recon_no_sub = np.asarray(recon_no_sub)
    measured = np.asarray(measured)
    if recon_no_sub.shape != measured.shape:
        raise ValueError(f"shape mismatch: {recon_no_sub.shape} vs {measured.shape}")
    d = crop_acs(measured[c:c + 1], acs)[0] - crop_acs(recon_no_sub[c:c + 1], acs)[0]
    if part == "real":
        return d.real.copy()
    if part == "imag":
        return d.imag.copy()
    raise ValueError(f"part must be 'real' or 'imag', got {part!r}")


def network_input(recon, scale):
    """Stack coils as ``2 n_c`` real channels: all real parts, then all imaginary parts."""
    recon = np.asarray(recon)
    x = np.concatenate([recon.real, recon.imag], axis=0) * scale
    return x.astype(real_dtype())


def normalization_scale(recon) -> float:
    peak = float(np.abs(recon).max())
    return 1.0 / peak if peak > 0 else 1.0


def _network_rng(seed, stream):
    return np.random.default_rng([seed, stream])


def train_spark(recon_no_sub, measured, acs: AcsSpec, cfg: SparkConfig | None = None) -> SparkModel:
    cfg = cfg or SparkConfig()
    recon_no_sub = np.asarray(recon_no_sub)
    n_c = recon_no_sub.shape[0]
    scale = normalization_scale(recon_no_sub)
    x = network_input(recon_no_sub, scale)
    hyper = micronet.TrainHyper(epochs=cfg.epochs, lr=cfg.lr)
    networks, histories = [], []
    for c in range(n_c):
        for p, part in enumerate(PARTS):
            net = micronet.build_network(2 * n_c, cfg.architecture, rng=_network_rng(cfg.seed, 2 * c + p))
            target = build_residual_target(recon_no_sub, measured, acs, c, part) * scale
            if not target.any():
                # zero target and zero output layer: every gradient is exactly zero
                history = [0.0]
            else:
                _, history = micronet.train(net, x, target[None], acs, hyper)
            networks.append(net)
            histories.append(history)
    return SparkModel(networks, scale, cfg, histories)


def predict_correction(recon, model: SparkModel):
    """Complex k-space correction for every coil on the full grid."""
    recon = np.asarray(recon)
    if recon.shape[0] != model.n_c:
        raise ValueError(f"model has {model.n_c} coils, data has {recon.shape[0]}")
    x = network_input(recon, model.scale)
    corr = np.empty(recon.shape, dtype=np.result_type(recon.dtype, np.complex64))
    for c in range(model.n_c):
        re, _ = micronet.forward(model.networks[2 * c], x)
        im, _ = micronet.forward(model.networks[2 * c + 1], x)
        corr[c] = (re[0].astype(np.float64) + 1j * im[0].astype(np.float64)) / model.scale
    return corr


def apply_correction(recon, model: SparkModel, measured, mask: SamplingMask, substitute=True):
    """Add the predicted correction to ``recon``; optionally restore acquired lines."""
    out = np.asarray(recon) + predict_correction(recon, model)
    if substitute:
        out = substitute_acquired(out, measured, mask)
    return out


@dataclass
class SparkResult:
    kspace: np.ndarray
    initial: np.ndarray  # initial method, acquired data substituted
    initial_no_sub: np.ndarray
    model: SparkModel


def spark_pipeline(und, mask: SamplingMask, cfg: SparkConfig | None = None) -> SparkResult:
    cfg = cfg or SparkConfig()
    und = np.asarray(und)
    no_sub = initial_reconstruction(und, mask, cfg.initial, cfg.geometry, cfg.lam, substitute=False)
    initial = substitute_acquired(no_sub, und, mask)
    model = train_spark(no_sub, und, mask.acs, cfg)
    out = apply_correction(no_sub, model, und, mask, substitute=cfg.substitute)
    return SparkResult(out, initial, no_sub, model)


def spark_reconstruct(und, mask: SamplingMask, cfg: SparkConfig | None = None):
    """Initial reconstruction, scan-specific training on the ACS, correction, substitution."""
    return spark_pipeline(und, mask, cfg).kspace


def with_initial(cfg: SparkConfig, initial: str) -> SparkConfig:
    return replace(cfg, initial=initial)
