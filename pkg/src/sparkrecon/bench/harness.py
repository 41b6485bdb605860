"""Experiment configuration and the sweep harness."""
from __future__ import annotations

import dataclasses
import functools
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .. import kcore, raki, simdata, spark
from ..grappa import KernelGeometry, fitting_geometry, grappa_reconstruct
from ..vcsvc import svc_grappa_reconstruct, vc_grappa_reconstruct
from .formats import ResultRow, export_pgm, write_csv, write_ksp

BASE_METHODS = ("grappa", "vc-grappa", "svc-grappa", "raki")
OPTIMIZE_GRID = {"ky_taps": (2, 4), "kx_taps": (3, 5, 7), "lam": (1e-5, 1e-4, 1e-3, 1e-2)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GrappaSettings:
    ky_taps: int = 4
    kx_taps: int = 5
    lam: float = 1e-4
    optimize: bool = False


@dataclass(frozen=True)
class SparkSettings:
    epochs: int = 200
    lr: float = 1e-3
    stem: int = 64
    head: tuple = (32, 8)
    kernel: int = 3
    seed: int = 0
    substitute: bool = True

    def __post_init__(self):
        object.__setattr__(self, "head", tuple(self.head))


@dataclass(frozen=True)
class RakiSettings:
    epochs: int = 300
    lr: float = 1e-3
    lr_final: float | None = None
    width: int = 32
    bottleneck: int = 8
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: tuple = (1,)
    n: int = 128
    n_c: int = 8
    sigma: float = 5e-4
    r: tuple = (4,)
    acs: tuple = (24,)
    methods: tuple = ("grappa",)
    grappa: GrappaSettings = field(default_factory=GrappaSettings)
    spark: SparkSettings = field(default_factory=SparkSettings)
    raki: RakiSettings = field(default_factory=RakiSettings)
    precision: str = "f64"
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("seed", "r", "acs", "methods"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)):
                value = (value,)
            object.__setattr__(self, name, tuple(value))
        _require(isinstance(self.n, int) and self.n >= 16, "n", "must be an integer >= 16")
        _require(self.methods, "methods", "must be non-empty")
        _require(self.r, "r", "must be non-empty")
        _require(self.acs, "acs", "must be non-empty")
        _require(self.seed, "seed", "must be non-empty")
        for m in self.methods:
            _require(is_method(m), "methods", f"unknown method {m!r}")
        for r in self.r:
            _require(isinstance(r, int) and r >= 1, "r", f"must be a positive integer, got {r!r}")
            _require(self.n % r == 0, "r", f"n={self.n} is not divisible by r={r}")
        for a in self.acs:
            _require(isinstance(a, int) and 0 <= a <= self.n, "acs", f"must be in [0, n], got {a!r}")
        _require(isinstance(self.n_c, int) and self.n_c >= 1, "n_c", "must be an integer >= 1")
        _require(isinstance(self.sigma, (int, float)) and self.sigma >= 0, "sigma", "must be a number >= 0")
        _require(self.precision in ("f32", "f64"), "precision", "must be 'f32' or 'f64'")

    @property
    def cases(self):
        return [(m, r, a, s) for m in self.methods for r in self.r for a in self.acs for s in self.seed]


def _require(cond, name, msg):
    if not cond:
        raise ConfigError(f"config field '{name}': {msg}")


def is_method(name) -> bool:
    if not isinstance(name, str):
        return False
    if name in BASE_METHODS:
        return True
    head, _, initial = name.partition(":")
    return head == "spark" and (initial == "" or initial in spark.INITIAL_METHODS)


def _from_mapping(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"config field '{prefix.rstrip('.') or 'root'}': expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = {"grappa": GrappaSettings, "spark": SparkSettings, "raki": RakiSettings}.get(key)
        kwargs[key] = _from_mapping(sub, value, f"{key}.") if cls is ExperimentConfig and sub else value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{prefix.rstrip('.') or 'root'}': {exc}") from exc


def config_from_dict(data) -> ExperimentConfig:
    return _from_mapping(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


# -- single cases -------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _acquisition(n, n_c, sigma, seed, precision):
    with kcore.precision(precision):
        return simdata.make_acquisition(simdata.AcquisitionParams(n=n, n_c=n_c, sigma=sigma, seed=seed))


def acquisition_for(cfg: ExperimentConfig, seed: int):
    return _acquisition(cfg.n, cfg.n_c, cfg.sigma, seed, cfg.precision)


def case_tag(method, r, acs, seed) -> str:
    return f"{method.replace(':', '-')}_r{r}_acs{acs}_seed{seed}"


def optimize_grappa(und, mask, reference):
    """Grid search over kernel size and regularization, scored by image RMSE."""
    best = None
    for ky in OPTIMIZE_GRID["ky_taps"]:
        for kx in OPTIMIZE_GRID["kx_taps"]:
            geom = KernelGeometry(ky, kx, mask.r)
            if mask.acs.count < geom.min_acs:
                continue
            for lam in OPTIMIZE_GRID["lam"]:
                err = kcore.image_rmse(grappa_reconstruct(und, mask, geom, lam), reference)
                if best is None or err < best["rmse"]:
                    best = {"ky_taps": ky, "kx_taps": kx, "lam": lam, "rmse": err}
    if best is None:
        raise ValueError("insufficient calibration data")
    return best


def _grappa_params(cfg, und, mask, reference, sidecar):
    """Kernel geometry and lambda for this case; None geometry when nothing is missing."""
    if mask.r == 1:
        return None, cfg.grappa.lam
    if cfg.grappa.optimize:
        best = optimize_grappa(und, mask, reference)
        sidecar.write_text(json.dumps(best, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return KernelGeometry(best["ky_taps"], best["kx_taps"], mask.r), best["lam"]
    return fitting_geometry(mask.r, mask.acs.count, cfg.grappa.ky_taps, cfg.grappa.kx_taps), cfg.grappa.lam


def reconstruct(cfg: ExperimentConfig, method, und, mask, reference, sidecar):
    if method == "raki":
        s = cfg.raki
        model = raki.train_raki(und, mask, raki.RakiConfig(s.epochs, s.lr, s.lr_final, s.width, s.bottleneck, s.seed))
        return raki.raki_reconstruct(und, mask, model)
    geom, lam = _grappa_params(cfg, und, mask, reference, sidecar)
    if method == "grappa":
        return grappa_reconstruct(und, mask, geom, lam)
    if method == "vc-grappa":
        return kcore.substitute_acquired(vc_grappa_reconstruct(und, mask, geom, lam), und, mask)
    if method == "svc-grappa":
        return svc_grappa_reconstruct(und, mask, geom, lam)
    initial = method.partition(":")[2] or "grappa"
    s = cfg.spark
    scfg = spark.SparkConfig(epochs=s.epochs, lr=s.lr, stem=s.stem, head=s.head, kernel=s.kernel, seed=s.seed,
                             initial=initial, geometry=geom, lam=lam, substitute=s.substitute)
    return spark.spark_reconstruct(und, mask, scfg)


def run_case(cfg: ExperimentConfig, method, r, acs, seed, out_dir) -> ResultRow:
    out_dir = Path(out_dir)
    tag = case_tag(method, r, acs, seed)
    start = time.perf_counter()
    try:
        with kcore.precision(cfg.precision):
            acq = acquisition_for(cfg, seed)
            mask = kcore.make_uniform_mask(cfg.n, r, acs)
            und = kcore.apply_mask(acq.kspace, mask)
            rec = reconstruct(cfg, method, und, mask, acq.kspace, out_dir / f"{tag}.grappa.json")
            err = kcore.image_rmse(rec, acq.kspace)
            mag = kcore.rss_combine(kcore.ifft2c(rec))
            ref = kcore.rss_combine(kcore.ifft2c(acq.kspace))
            write_ksp(out_dir / f"{tag}.ksp", rec.astype(kcore.complex_dtype(), copy=False))
            export_pgm(out_dir / f"{tag}_mag.pgm", mag)
            export_pgm(out_dir / f"{tag}_diff.pgm", np.abs(mag - ref))
        return ResultRow(method, r, acs, cfg.sigma, seed, err, time.perf_counter() - start)
    except Exception as exc:  # recorded per case, the sweep goes on
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        if os.environ.get("SPARK_DEBUG"):
            traceback.print_exc()
        return ResultRow(method, r, acs, cfg.sigma, seed, None, time.perf_counter() - start, msg)


def _run_case_args(args):
    return run_case(*args)


def thread_count() -> int:
    raw = os.environ.get("SPARK_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPARK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"SPARK_THREADS must be a positive integer, got {raw!r}")
    return n


@dataclass
class SweepResult:
    rows: list
    csv_path: Path

    @property
    def n_failed(self):
        return sum(not r.ok for r in self.rows)


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads=None) -> SweepResult:
    """Run every (method, r, acs, seed) case; rows come back in canonical order.

    Cases run in worker processes when more than one thread is allowed. Each
    case is self-contained and seeded, so the results do not depend on the
    schedule.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    cases_dir = out / "cases"
    cases_dir.mkdir(parents=True, exist_ok=True)
    threads = thread_count() if threads is None else threads
    jobs = [(cfg, m, r, a, s, cases_dir) for m, r, a, s in cfg.cases]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs)), mp_context=get_context("spawn")) as pool:
            rows = list(pool.map(_run_case_args, jobs))
    else:
        rows = [run_case(*job) for job in jobs]
    rows.sort(key=lambda row: row.sort_key)
    csv_path = out / "results.csv"
    write_csv(csv_path, rows)
    return SweepResult(rows, csv_path)


def ratio_table(rows, baseline="grappa"):
    """RMSE of each method relative to the baseline on the same (r, acs, seed, sigma)."""
    base = {(r.r, r.acs, r.seed, r.sigma): r.rmse for r in rows if r.method == baseline and r.ok}
    out = []
    for row in sorted(rows, key=lambda r: r.sort_key):
        ref = base.get((row.r, row.acs, row.seed, row.sigma))
        if row.ok and ref:
            out.append((row.method, row.r, row.acs, row.seed, row.rmse / ref))
    return out
