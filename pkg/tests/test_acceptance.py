"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (about half an hour on
one core; the end-to-end training runs use 32-bit precision).
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from PIL import Image

from sparkrecon import grappa, kcore, micronet, raki, simdata, spark, vcsvc
from sparkrecon.bench import formats, harness
from sparkrecon.grappa import KernelGeometry
from sparkrecon.kcore import make_uniform_mask

from planted import planted_kspace, planted_virtual_kspace
from test_micronet import naive_conv, random_net
from test_vcsvc import scalar_ls_oracle

HEADLINE = {"seed": 1, "n": 128, "n_c": 8, "sigma": 5e-4, "r": [4, 8], "acs": [24],
            "methods": ["grappa", "spark:grappa"], "precision": "f32"}


def _rows(result):
    return {(r.method, r.r, r.acs): r for r in result.rows}


def _assert_clean(result):
    failed = [f"{r.method} r={r.r} acs={r.acs}: {r.error}" for r in result.rows if not r.ok]
    assert not failed, failed


def test_criterion_1_oracle_suite(verdict):
    start = time.perf_counter()
    checks = {}
    with kcore.precision("f64"):
        rng = np.random.default_rng(0)
        img = rng.standard_normal((4, 32, 24)) + 1j * rng.standard_normal((4, 32, 24))
        k = kcore.fft2c(img)
        checks["fft roundtrip"] = np.abs(kcore.ifft2c(k) - img).max() / np.abs(img).max()
        checks["parseval"] = abs(np.sum(np.abs(k) ** 2) / np.sum(np.abs(img) ** 2) - 1)

        x = rng.integers(-4, 5, (3, 7, 6)).astype(float)
        layer = micronet.Conv(3, 2, 3, 5, weight=rng.integers(-3, 4, (2, 3, 3, 5)), bias=rng.integers(-2, 3, 2))
        checks["conv vs loop"] = float(np.abs(micronet.conv2d_forward(x, layer) - naive_conv(x, layer.weight, layer.bias)).max())

        net = random_net(4, spark.spark_architecture())
        checks["grad spark"] = micronet.grad_check(net, rng.standard_normal((4, 16, 12)), kcore.AcsSpec(5, 6))
        net = random_net(4, raki.raki_architecture(3))
        checks["grad raki"] = micronet.grad_check(net, rng.standard_normal((2, 4, 6, 12)), (1, 5))

        k = kcore.fft2c(img)
        err = 0.0
        for axis, ax in ((vcsvc.GradientAxis.HORIZONTAL, -1), (vcsvc.GradientAxis.VERTICAL, -2)):
            expected = kcore.fft2c(img - np.roll(img, 1, axis=ax))
            err = max(err, np.abs(vcsvc.gradient_weight(k, axis) - expected).max() / np.abs(expected).max())
        checks["gradient weight"] = err

        shape = (1, 16, 16)
        xh, xv, acq = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(3))
        mask = make_uniform_mask(16, 4, 2)
        out = vcsvc.ls_combine(xh, xv, acq, mask, hard=False)
        w = vcsvc.diagonal_weights(16)
        err = 0.0
        for yy in range(16):
            for xx in range(16):
                if yy == 8 and xx == 8:
                    continue
                lam = vcsvc.LAMBDA_DC if mask.acquired[yy] else 0.0
                z = scalar_ls_oracle(w[xx], w[yy], xh[0, yy, xx], xv[0, yy, xx], lam, acq[0, yy, xx])
                err = max(err, abs(out[0, yy, xx] - z) / max(1.0, abs(z)))
        checks["ls_combine"] = err

        geom = KernelGeometry(4, 5, 3)
        K, W = planted_kspace(2, 48, 32, geom, seed=1)
        m = make_uniform_mask(48, 3, 16)
        rec = grappa.interpolate(kcore.apply_mask(K, m), m, grappa.calibrate(kcore.crop_acs(K, m.acs), geom, 0.0))
        checks["grappa planted"] = np.abs(rec - K).max() / np.abs(K).max()
        geom = KernelGeometry(2, 5, 4)
        K, _ = planted_virtual_kspace(2, 48, 32, geom, seed=3)
        m = make_uniform_mask(48, 4, 16)
        rec = vcsvc.vc_grappa_reconstruct(kcore.apply_mask(K, m), m, geom, lam=0.0)
        checks["vc-grappa planted"] = np.abs(rec - K).max() / np.abs(K).max()
    elapsed = time.perf_counter() - start
    bounds = {"fft roundtrip": 1e-10, "parseval": 1e-10, "conv vs loop": 0.0, "grad spark": 1e-6,
              "grad raki": 1e-6, "gradient weight": 1e-10, "ls_combine": 1e-9, "grappa planted": 1e-8,
              "vc-grappa planted": 1e-8}
    ok = all(checks[k] <= b for k, b in bounds.items()) and elapsed < 30
    detail = ", ".join(f"{k}={v:.2e}" for k, v in checks.items()) + f"; {elapsed:.1f}s"
    verdict(ok, detail)


def test_criterion_2_do_no_harm(verdict):
    acq = simdata.make_acquisition(simdata.AcquisitionParams(n=128, n_c=8, sigma=5e-4, seed=1))
    mask = make_uniform_mask(128, 4, 24)
    und = kcore.apply_mask(acq.kspace, mask)
    cfg = spark.SparkConfig(epochs=5)
    with kcore.precision("f32"):
        result = spark.spark_pipeline(und, mask, cfg)
        zero = spark.SparkModel([micronet.build_network(16, cfg.architecture, rng=np.random.default_rng([0, i]))
                                 for i in range(16)], result.model.scale, cfg)
        epoch0 = spark.apply_correction(result.initial_no_sub, zero, und, mask)
    same_initial = bool(np.array_equal(epoch0, result.initial))
    consistent = bool(np.array_equal(result.kspace[:, mask.acquired], und[:, mask.acquired]))
    verdict(same_initial and consistent,
            f"epoch-0 output == initial: {same_initial}; acquired lines bitwise equal: {consistent}")


@pytest.fixture(scope="module")
def headline(tmp_path_factory):
    cfg = harness.config_from_dict(HEADLINE)
    start = time.process_time()
    result = harness.run_experiment(cfg, tmp_path_factory.mktemp("headline"), threads=1)
    return result, time.process_time() - start


@pytest.mark.slow
def test_criterion_3_headline(headline, verdict):
    result, cpu = headline
    _assert_clean(result)
    rows = _rows(result)
    ratios = {r: rows[("spark:grappa", r, 24)].rmse / rows[("grappa", r, 24)].rmse for r in (4, 8)}
    ok = all(v < 1 for v in ratios.values()) and ratios[8] <= 0.8 and cpu < 600
    detail = "; ".join(f"r={r}: grappa {rows[('grappa', r, 24)].rmse:.4f} spark {rows[('spark:grappa', r, 24)].rmse:.4f}"
                       f" ratio {v:.3f}" for r, v in ratios.items())
    verdict(ok, f"{detail}; cpu {cpu:.0f}s")


@pytest.mark.slow
def test_criterion_4_acs_robustness(tmp_path, verdict):
    cfg = harness.config_from_dict({**HEADLINE, "r": [4], "acs": [12, 16, 24, 40],
                                    "methods": ["grappa", "raki", "spark:grappa"]})
    start = time.perf_counter()
    result = harness.run_experiment(cfg, tmp_path, threads=1)
    elapsed = time.perf_counter() - start
    _assert_clean(result)
    rows = _rows(result)
    e = {(m, a): rows[(m, 4, a)].rmse for m in ("grappa", "raki", "spark:grappa") for a in cfg.acs}
    spark_vs_grappa = all(e[("spark:grappa", a)] <= e[("grappa", a)] for a in cfg.acs)
    spark_vs_raki = e[("spark:grappa", 12)] <= e[("raki", 12)]
    raki_breaks = e[("raki", 12)] > e[("raki", 40)]
    table = "; ".join(f"acs={a}: grappa {e[('grappa', a)]:.4f} raki {e[('raki', a)]:.4f} "
                      f"spark {e[('spark:grappa', a)]:.4f}" for a in cfg.acs)
    verdict(spark_vs_grappa and spark_vs_raki and raki_breaks and elapsed < 1200, f"{table}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_5_svc_grappa(tmp_path, verdict):
    cfg = harness.config_from_dict({**HEADLINE, "sigma": 0.0, "r": [8],
                                    "methods": ["grappa", "svc-grappa", "spark:svc-grappa"]})
    result = harness.run_experiment(cfg, tmp_path, threads=1)
    _assert_clean(result)
    rows = _rows(result)
    g, s, sp = (rows[(m, 8, 24)].rmse for m in ("grappa", "svc-grappa", "spark:svc-grappa"))
    verdict(s < g and sp <= 1.01 * s,
            f"grappa {g:.4f}, svc-grappa {s:.4f}, spark-on-svc {sp:.4f} (ratio to svc {sp / s:.3f})")


def _strip_wall_time(text):
    return [",".join(v for i, v in enumerate(line.split(",")) if i != 6) for line in text.splitlines()]


@pytest.mark.slow
def test_criterion_6_determinism(headline, tmp_path, monkeypatch, verdict):
    first, _ = headline
    monkeypatch.setenv("SPARK_THREADS", "2")
    second = harness.run_experiment(harness.config_from_dict(HEADLINE), tmp_path)
    same_csv = _strip_wall_time(first.csv_path.read_text()) == _strip_wall_time(second.csv_path.read_text())
    cases = sorted(p.name for p in (first.csv_path.parent / "cases").iterdir())
    same_files = all((first.csv_path.parent / "cases" / n).read_bytes() == (tmp_path / "cases" / n).read_bytes()
                     for n in cases)
    verdict(same_csv and same_files, f"CSV rows identical: {same_csv}; {len(cases)} artifacts identical: {same_files}")


def test_criterion_7_formats(tmp_path, verdict):
    rng = np.random.default_rng(7)
    ok_ksp = True
    for dtype, real in ((np.complex64, np.float32), (np.complex128, np.float64)):
        k = (rng.standard_normal((3, 8, 6)) + 1j * rng.standard_normal((3, 8, 6))).astype(dtype)
        formats.write_ksp(tmp_path / "k.ksp", k)
        back = formats.read_ksp(tmp_path / "k.ksp")
        ok_ksp &= back.dtype == dtype and np.array_equal(back.view(real), k.view(real))
    img = rng.random((10, 12))
    formats.export_pgm(tmp_path / "i.pgm", img)
    raw = (tmp_path / "i.pgm").read_bytes()
    with Image.open(tmp_path / "i.pgm") as im:
        pix = np.array(im, dtype=np.float64)
    ok_pgm = raw.startswith(b"P5") and pix.shape == img.shape and \
        np.abs(pix / 65535 * img.max() - img).max() <= img.max() / 65535
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": ["grappa"], "r": [4], "acs_lines": 24}))
    proc = subprocess.run([sys.executable, "-m", "sparkrecon.bench", "sweep", "--config", str(bad),
                           "--out", str(tmp_path / "out")], capture_output=True, text=True,
                          env={**os.environ, "PYTHONWARNINGS": "ignore"})
    ok_cfg = proc.returncode == 1 and "acs_lines" in proc.stderr
    verdict(ok_ksp and ok_pgm and ok_cfg,
            f"KSP bit-identical: {ok_ksp}; PGM P5 + Pillow parse: {ok_pgm}; unknown key exit {proc.returncode}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
