"""Command-line front end: ``python -m sparkrecon.bench <command> ...``.

Exit status is 0 on success, 2 when a sweep finished with failed cases and 1
for configuration, usage or input errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import kcore, spark
from ..grappa import fitting_geometry
from . import formats, harness

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed out of range: {text}")
    return value


def _common(p, *, sampling=False, method=None):
    p.add_argument("--config", type=Path, help="experiment JSON (phantom, kernel and training settings)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=_u64, help="simulation seed (overrides the config)")
    p.add_argument("--precision", choices=("f32", "f64"), help="compute precision (overrides the config)")
    if sampling:
        p.add_argument("-R", dest="r", type=int, required=True, help="acceleration factor")
        p.add_argument("--acs", type=int, required=True, help="number of ACS lines")
    if method is not None:
        p.add_argument("--method", default=method[0], choices=method, help=f"default {method[0]}")


def build_parser():
    parser = _Parser(prog="sparkrecon", description="Scan-specific k-space reconstruction experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="simulate a fully sampled multi-coil acquisition")
    _common(p)

    p = sub.add_parser("mask", help="write a uniform sampling mask, optionally applied to a KSP file")
    p.add_argument("input", nargs="?", type=Path, help="fully sampled KSP file to undersample")
    _common(p, sampling=True)

    p = sub.add_parser("recon", help="reconstruct undersampled k-space with a conventional method")
    p.add_argument("input", type=Path)
    p.add_argument("--reference", type=Path, help="fully sampled KSP file; prints the RMSE")
    _common(p, sampling=True, method=("grappa", "vc-grappa", "svc-grappa", "raki"))

    p = sub.add_parser("spark", help="SPARK correction of an initial reconstruction")
    p.add_argument("input", type=Path)
    p.add_argument("--reference", type=Path, help="fully sampled KSP file; prints the RMSE")
    _common(p, sampling=True, method=spark.INITIAL_METHODS)

    p = sub.add_parser("sweep", help="run the experiment grid of a config file")
    _common(p)

    p = sub.add_parser("eval", help="RMSE of a KSP file against a reference, or ratios from a results CSV")
    p.add_argument("paths", nargs="+", type=Path, help="results.csv, or recon.ksp reference.ksp")
    p.add_argument("--baseline", default="grappa", help="method the CSV ratios are relative to")
    _common(p)
    return parser


def _config(args) -> harness.ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise harness.ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise harness.ConfigError("config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.precision is not None:
        data["precision"] = args.precision
    return harness.config_from_dict(data)


def _mask(args, ny):
    if ny % args.r:
        raise harness.ConfigError(f"-R {args.r} does not divide the {ny} phase-encode lines")
    return kcore.make_uniform_mask(ny, args.r, args.acs)


def _save(path, ksp):
    """KSP output at the run's compute precision."""
    formats.write_ksp(path, ksp.astype(kcore.complex_dtype(), copy=False))


def _write_image(path, ksp):
    formats.export_pgm(path, kcore.rss_combine(kcore.ifft2c(ksp)))


def _report(rec, args):
    if args.reference is not None:
        print(f"rmse {kcore.image_rmse(rec, formats.read_ksp(args.reference)):.9g}")


def cmd_phantom(args, cfg):
    acq = harness.acquisition_for(cfg, cfg.seed[0])
    _save(args.out / "kspace.ksp", acq.kspace)
    formats.export_pgm(args.out / "phantom.pgm", acq.image)
    _write_image(args.out / "rss.pgm", acq.kspace)
    print(f"wrote {args.out / 'kspace.ksp'} ({cfg.n_c} coils, {cfg.n}x{cfg.n}, seed {cfg.seed[0]})")
    return EXIT_OK


def cmd_mask(args, cfg):
    ny = formats.read_ksp(args.input).shape[1] if args.input is not None else cfg.n
    mask = _mask(args, ny)
    record = {"ny": ny, "r": mask.r, "acs_start": mask.acs.start, "acs_count": mask.acs.count,
              "acquired": [int(v) for v in mask.acquired]}
    (args.out / "mask.json").write_text(json.dumps(record) + "\n", encoding="utf-8")
    if args.input is not None:
        _save(args.out / "undersampled.ksp", kcore.apply_mask(formats.read_ksp(args.input), mask))
    print(f"{mask.n_acquired}/{ny} lines acquired")
    return EXIT_OK


def cmd_recon(args, cfg):
    ksp = formats.read_ksp(args.input)
    mask = _mask(args, ksp.shape[1])
    und = kcore.apply_mask(ksp, mask)
    sidecar = args.out / "recon.grappa.json"
    reference = formats.read_ksp(args.reference) if args.reference is not None else None
    if cfg.grappa.optimize and reference is None:
        raise harness.ConfigError("grappa.optimize needs --reference")
    rec = harness.reconstruct(cfg, args.method, und, mask, reference, sidecar)
    _save(args.out / "recon.ksp", rec)
    _write_image(args.out / "recon_mag.pgm", rec)
    _report(rec, args)
    return EXIT_OK


def cmd_spark(args, cfg):
    ksp = formats.read_ksp(args.input)
    mask = _mask(args, ksp.shape[1])
    und = kcore.apply_mask(ksp, mask)
    s = cfg.spark
    geom = None
    if mask.r > 1:
        geom = fitting_geometry(mask.r, mask.acs.count, cfg.grappa.ky_taps, cfg.grappa.kx_taps)
    scfg = spark.SparkConfig(epochs=s.epochs, lr=s.lr, stem=s.stem, head=s.head, kernel=s.kernel, seed=s.seed,
                             initial=args.method, geometry=geom, lam=cfg.grappa.lam, substitute=s.substitute)
    result = spark.spark_pipeline(und, mask, scfg)
    _save(args.out / "initial.ksp", result.initial)
    _save(args.out / "spark.ksp", result.kspace)
    formats.write_spark_model(args.out / "spark_model.kspm", result.model)
    _write_image(args.out / "spark_mag.pgm", result.kspace)
    _report(result.kspace, args)
    return EXIT_OK


def cmd_sweep(args, cfg):
    out = args.out if args.out != Path(".") else Path(cfg.output_dir)
    result = harness.run_experiment(cfg, out)
    print(f"wrote {result.csv_path}: {len(result.rows)} rows, {result.n_failed} failed")
    for row in result.rows:
        if not row.ok:
            print(f"  {row.method} r={row.r} acs={row.acs} seed={row.seed}: {row.error}", file=sys.stderr)
    return EXIT_PARTIAL if result.n_failed else EXIT_OK


def cmd_eval(args, cfg):
    paths = args.paths
    if len(paths) == 1 and paths[0].suffix == ".csv":
        print("method,r,acs,seed,ratio")
        for method, r, acs, seed, ratio in harness.ratio_table(formats.read_csv(paths[0]), args.baseline):
            print(f"{method},{r},{acs},{seed},{ratio:.9g}")
        return EXIT_OK
    if len(paths) != 2:
        raise UsageError("eval takes a results CSV or two KSP files")
    print(f"rmse {kcore.image_rmse(formats.read_ksp(paths[0]), formats.read_ksp(paths[1])):.9g}")
    return EXIT_OK


COMMANDS = {"phantom": cmd_phantom, "mask": cmd_mask, "recon": cmd_recon, "spark": cmd_spark,
            "sweep": cmd_sweep, "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        if args.command != "sweep":
            args.out.mkdir(parents=True, exist_ok=True)
        with kcore.precision(cfg.precision):
            return COMMANDS[args.command](args, cfg)
    except (UsageError, OSError, ValueError) as exc:
        # ConfigError and FormatError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
