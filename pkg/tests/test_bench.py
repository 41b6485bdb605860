import json
import struct

import numpy as np
import pytest
from PIL import Image

from sparkrecon import kcore, spark
from sparkrecon.bench import cli, formats, harness
from sparkrecon.bench.formats import ResultRow


def crandn(rng, *shape, dtype=np.complex128):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)


@pytest.mark.parametrize("dtype", [np.complex64, np.complex128])
def test_ksp_roundtrip_is_bit_identical(tmp_path, dtype):
    k = crandn(np.random.default_rng(0), 3, 5, 7, dtype=dtype)
    k[0, 0, 0] = complex(-0.0, 5e-310 if dtype == np.complex128 else 1e-40)
    path = tmp_path / "a.ksp"
    formats.write_ksp(path, k)
    back = formats.read_ksp(path)
    assert back.dtype == dtype and back.shape == k.shape
    real = np.float32 if dtype == np.complex64 else np.float64
    np.testing.assert_array_equal(back.view(real), k.view(real))
    assert np.signbit(back[0, 0, 0].real)


def test_ksp_layout_matches_hand_parser(tmp_path):
    k = np.arange(2 * 3 * 4).reshape(2, 3, 4) + 0.5j
    path = tmp_path / "b.ksp"
    formats.write_ksp(path, k)
    raw = path.read_bytes()
    assert raw[:4] == b"KSPC"
    assert struct.unpack("<5I", raw[4:24]) == (1, 1, 2, 3, 4)
    assert len(raw) == 24 + 2 * 3 * 4 * 16
    vals = struct.unpack(f"<{2 * 24}d", raw[24:])
    # coil-major, row-major, (re, im) pairs
    assert vals[:4] == (0.0, 0.5, 1.0, 0.5)
    assert vals[2 * 12:2 * 12 + 2] == (12.0, 0.5)


def test_ksp_errors(tmp_path):
    path = tmp_path / "c.ksp"
    formats.write_ksp(path, np.ones((1, 2, 2), complex))
    raw = path.read_bytes()
    for cut in (10, len(raw) - 3):
        path.write_bytes(raw[:cut])
        with pytest.raises(formats.FormatError, match="unexpected end of KSP stream"):
            formats.read_ksp(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(formats.FormatError, match="not a KSP file"):
        formats.read_ksp(path)


def test_pgm_linear_map(tmp_path):
    img = np.array([[0.0, 3.0], [1.5, 3.0]])
    data = formats.pgm_bytes(img)
    assert data.startswith(b"P5\n")
    header = b"P5\n2 2\n65535\n"
    assert data[:len(header)] == header
    pix = np.frombuffer(data[len(header):], ">u2")
    assert pix[0] == 0 and pix[1] == 65535 and pix[3] == 65535
    assert abs(int(pix[2]) - 32768) <= 1


def test_pgm_zero_and_nonfinite(tmp_path):
    data = formats.pgm_bytes(np.zeros((3, 4)))
    assert not any(data[len(b"P5\n4 3\n65535\n"):])
    with pytest.raises(ValueError):
        formats.export_pgm(tmp_path / "x.pgm", np.array([[np.nan, 1.0]]))


def test_pgm_parses_in_independent_reader(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((9, 13)) * 7.0
    path = tmp_path / "img.pgm"
    formats.export_pgm(path, img)
    with Image.open(path) as im:
        assert im.size == (13, 9)
        pix = np.array(im, dtype=np.float64)
    np.testing.assert_allclose(pix / 65535 * img.max(), img, atol=img.max() / 65535)


def test_csv_header_only_and_roundtrip(tmp_path):
    path = tmp_path / "r.csv"
    formats.write_csv(path, [])
    assert path.read_bytes() == b"method,r,acs,sigma,seed,rmse,wall_time_s,error\n"
    row = ResultRow("spark:grappa", 4, 24, 5e-4, 1, 0.123456789123, 1.5)
    formats.write_csv(path, [row])
    text = path.read_bytes().decode("utf-8")
    assert "\r" not in text
    assert text.splitlines()[1] == "spark:grappa,4,24,0.0005,1,0.123456789,1.5,"
    back = formats.read_csv(path)[0]
    assert back.method == row.method and (back.r, back.acs, back.seed) == (4, 24, 1)
    assert back.rmse == pytest.approx(row.rmse, rel=1e-8)


def test_csv_sorted_and_error_column(tmp_path):
    rows = [ResultRow("raki", 4, 12, 0.0, 1, 0.5, 1.0), ResultRow("grappa", 8, 12, 0.0, 1, 0.2, 1.0),
            ResultRow("grappa", 4, 40, 0.0, 1, 0.1, 1.0), ResultRow("grappa", 4, 12, 0.0, 1, None, 1.0, "boom, bad")]
    path = tmp_path / "r.csv"
    formats.write_csv(path, rows)
    back = formats.read_csv(path)
    assert [(r.method, r.r, r.acs) for r in back] == [("grappa", 4, 12), ("grappa", 4, 40), ("grappa", 8, 12),
                                                      ("raki", 4, 12)]
    assert back[0].error == "boom, bad" and back[0].rmse is None
    assert all(np.isfinite(r.rmse) for r in back if r.ok)
    with pytest.raises(ValueError):
        ResultRow("grappa", 4, 12, 0.0, 1, -1.0, 0.0)


def test_spark_model_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    und_full = crandn(rng, 2, 16, 12)
    mask = kcore.make_uniform_mask(16, 2, 8)
    cfg = spark.SparkConfig(epochs=2, stem=4, head=(3,), seed=5)
    result = spark.spark_pipeline(kcore.apply_mask(und_full, mask), mask, cfg)
    path = tmp_path / "m.kspm"
    formats.write_spark_model(path, result.model)
    back = formats.read_spark_model(path)
    assert back.config == result.model.config and back.scale == result.model.scale
    assert back.histories == [[float(v) for v in h] for h in result.model.histories]
    for a, b in zip(result.model.networks, back.networks):
        assert [repr(l) for l in a.layers] == [repr(l) for l in b.layers]
        for pa, pb in zip(a.params(), b.params()):
            assert pa.dtype == pb.dtype
            np.testing.assert_array_equal(pa, pb)
    np.testing.assert_array_equal(spark.predict_correction(result.initial_no_sub, back),
                                  spark.predict_correction(result.initial_no_sub, result.model))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(formats.FormatError, match="unexpected end"):
        formats.read_spark_model(path)


def test_config_validation():
    cfg = harness.config_from_dict({"r": [2, 4], "acs": 24, "methods": ["grappa", "spark:svc-grappa"]})
    assert cfg.acs == (24,) and cfg.seed == (1,)
    with pytest.raises(harness.ConfigError, match="unknown config key.*sigmaa"):
        harness.config_from_dict({"sigmaa": 0})
    with pytest.raises(harness.ConfigError, match="spark.epoch"):
        harness.config_from_dict({"spark": {"epoch": 3}})
    with pytest.raises(harness.ConfigError, match="'r'"):
        harness.config_from_dict({"n": 128, "r": [5]})
    with pytest.raises(harness.ConfigError, match="'methods'"):
        harness.config_from_dict({"methods": []})
    with pytest.raises(harness.ConfigError, match="'methods'"):
        harness.config_from_dict({"methods": ["loraks"]})


def test_fig4_grid_enumeration():
    cfg = harness.config_from_dict({"n": 210, "r": [5, 6, 7], "acs": [12, 16, 24, 40],
                                    "methods": ["spark:grappa", "raki", "grappa"]})
    rows = [ResultRow(m, r, a, cfg.sigma, s, 0.1, 0.0) for m, r, a, s in cfg.cases]
    assert len(rows) == 36
    lines = formats.csv_text(rows).splitlines()[1:]
    keys = [(l.split(",")[0], int(l.split(",")[1]), int(l.split(",")[2])) for l in lines]
    assert keys == sorted(keys)


SMALL = {"n": 32, "n_c": 4, "sigma": 0.0, "acs": [12], "spark": {"epochs": 2, "stem": 4, "head": [3]},
         "raki": {"epochs": 2, "width": 4, "bottleneck": 2}}


def test_sweep_r1_grappa_is_exact(tmp_path):
    res = harness.run_experiment(harness.config_from_dict({**SMALL, "r": [1], "methods": ["grappa"]}), tmp_path)
    assert len(res.rows) == 1 and res.rows[0].rmse < 1e-6
    for suffix in (".ksp", "_mag.pgm", "_diff.pgm"):
        assert (tmp_path / "cases" / f"grappa_r1_acs12_seed1{suffix}").exists()


def _strip_wall_time(text):
    return [",".join(v for i, v in enumerate(line.split(",")) if i != 6) for line in text.splitlines()]


def test_sweep_completeness_failures_and_determinism(tmp_path, monkeypatch):
    cfg = harness.config_from_dict({**SMALL, "r": [1, 2], "seed": [1, 2],
                                    "methods": ["raki", "svc-grappa", "spark:grappa"]})
    monkeypatch.setenv("SPARK_THREADS", "1")
    a = harness.run_experiment(cfg, tmp_path / "a")
    monkeypatch.setenv("SPARK_THREADS", "3")
    b = harness.run_experiment(cfg, tmp_path / "b")
    assert len(a.rows) == 3 * 2 * 1 * 2
    assert [r.method for r in a.rows if not r.ok] == ["raki", "raki"]
    assert _strip_wall_time(a.csv_path.read_text()) == _strip_wall_time(b.csv_path.read_text())
    for name in ("spark-grappa_r2_acs12_seed2.ksp", "svc-grappa_r2_acs12_seed1_mag.pgm"):
        assert (tmp_path / "a" / "cases" / name).read_bytes() == (tmp_path / "b" / "cases" / name).read_bytes()


def test_optimize_writes_sidecar(tmp_path):
    cfg = harness.config_from_dict({**SMALL, "r": [2], "methods": ["grappa"], "grappa": {"optimize": True}})
    res = harness.run_experiment(cfg, tmp_path)
    side = json.loads((tmp_path / "cases" / "grappa_r2_acs12_seed1.grappa.json").read_text())
    assert side["ky_taps"] in (2, 4) and side["kx_taps"] in (3, 5, 7)
    assert side["rmse"] == pytest.approx(res.rows[0].rmse, rel=1e-12)
    plain = harness.run_experiment(harness.config_from_dict({**SMALL, "r": [2], "methods": ["grappa"]}),
                                   tmp_path / "plain")
    assert res.rows[0].rmse <= plain.rows[0].rmse


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": ["grappa"], "colour": "blue"}))
    assert cli.main(["sweep", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["recon"]) == 1
    good = tmp_path / "good.json"
    good.write_text(json.dumps({**SMALL, "r": [2], "methods": ["grappa"]}))
    assert cli.main(["sweep", "--config", str(good), "--out", str(tmp_path / "ok")]) == 0
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({**SMALL, "r": [1, 2], "methods": ["raki"]}))
    assert cli.main(["sweep", "--config", str(partial), "--out", str(tmp_path / "p")]) == 2


def test_cli_pipeline(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 32, "n_c": 4, "sigma": 0.0, "spark": {"epochs": 2, "stem": 4, "head": [3]}}))
    out = str(tmp_path)
    assert cli.main(["phantom", "--config", str(cfg), "--out", out, "--seed", "7"]) == 0
    assert cli.main(["mask", str(tmp_path / "kspace.ksp"), "-R", "2", "--acs", "12", "--out", out]) == 0
    mask = json.loads((tmp_path / "mask.json").read_text())
    assert sum(mask["acquired"]) == 16 + 6
    und = str(tmp_path / "undersampled.ksp")
    ref = str(tmp_path / "kspace.ksp")
    assert cli.main(["recon", und, "-R", "2", "--acs", "12", "--config", str(cfg), "--out", out,
                     "--reference", ref]) == 0
    assert cli.main(["spark", und, "-R", "2", "--acs", "12", "--config", str(cfg), "--out", out,
                     "--precision", "f32"]) == 0
    assert formats.read_ksp(tmp_path / "spark.ksp").dtype == np.complex64
    capsys.readouterr()
    assert cli.main(["eval", str(tmp_path / "recon.ksp"), ref]) == 0
    rmse = float(capsys.readouterr().out.split()[1])
    assert 0 < rmse < 0.1
    assert formats.read_spark_model(tmp_path / "spark_model.kspm").n_c == 4
