"""On-disk formats: KSP k-space files, a KSP-family model container, 16-bit PGM, results CSV.

KSP layout (all integers u32 little-endian)::

    "KSPC" | version=1 | dtype (0 = f32 pairs, 1 = f64 pairs) | n_c | ny | nx | payload

The payload is n_c * ny * nx complex samples stored as (re, im) pairs,
coil-major then row-major. Model files share the idea but carry a JSON
header describing the networks::

    "KSPM" | version=1 | header byte length | UTF-8 JSON header | tensors (LE, header order)
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..micronet import Conv, Network, ReLU, ResidualEnd, ResidualStart

KSP_MAGIC = b"KSPC"
MODEL_MAGIC = b"KSPM"
VERSION = 1
_KSP_HEADER = struct.Struct("<4s5I")
_MODEL_HEADER = struct.Struct("<4s2I")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.complex64): 0, np.dtype(np.complex128): 1}

CSV_HEADER = ("method", "r", "acs", "sigma", "seed", "rmse", "wall_time_s", "error")


class FormatError(ValueError):
    pass


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of KSP stream")
    return data


# -- KSP ----------------------------------------------------------------------

def write_ksp(path, ksp):
    ksp = np.asarray(ksp)
    if ksp.ndim == 2:
        ksp = ksp[None]
    if ksp.ndim != 3:
        raise ValueError(f"expected (n_c, ny, nx) k-space, got shape {ksp.shape}")
    if ksp.dtype not in _CODES:
        ksp = ksp.astype(np.complex128)
    code = _CODES[ksp.dtype]
    pairs = np.empty(ksp.shape + (2,), dtype=_DTYPES[code])
    pairs[..., 0] = ksp.real
    pairs[..., 1] = ksp.imag
    with open(path, "wb") as f:
        f.write(_KSP_HEADER.pack(KSP_MAGIC, VERSION, code, *ksp.shape))
        f.write(pairs.tobytes())


def read_ksp(path):
    with open(path, "rb") as f:
        head = f.read(_KSP_HEADER.size)
        if len(head) >= 4 and head[:4] != KSP_MAGIC:
            raise FormatError("not a KSP file")
        if len(head) != _KSP_HEADER.size:
            raise FormatError("unexpected end of KSP stream")
        _, version, code, n_c, ny, nx = _KSP_HEADER.unpack(head)
        if version != VERSION:
            raise FormatError(f"unsupported KSP version {version}")
        if code not in _DTYPES:
            raise FormatError(f"unknown KSP dtype code {code}")
        dt = _DTYPES[code]
        count = n_c * ny * nx * 2
        raw = _read_exact(f, count * dt.itemsize)
        if f.read(1):
            raise FormatError("trailing bytes after KSP payload")
    pairs = np.frombuffer(raw, dtype=dt).reshape(n_c, ny, nx, 2)
    out = np.empty((n_c, ny, nx), dtype=np.complex64 if code == 0 else np.complex128)
    out.real = pairs[..., 0]
    out.imag = pairs[..., 1]
    return out


# -- networks -----------------------------------------------------------------

def _layer_record(layer):
    if isinstance(layer, Conv):
        return {"conv": [layer.in_channels, layer.out_channels, layer.kh, layer.kw]}
    if isinstance(layer, ReLU):
        return "relu"
    if isinstance(layer, ResidualStart):
        return "res["
    return "]res"


def _tensor_records(net):
    return [{"shape": list(p.shape), "dtype": p.dtype.str} for p in net.params()]


def encode_networks(networks, meta: dict) -> bytes:
    header = dict(meta)
    header["networks"] = [{"layers": [_layer_record(l) for l in net.layers], "tensors": _tensor_records(net)}
                          for net in networks]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, VERSION, len(blob)), blob]
    for net in networks:
        for p in net.params():
            parts.append(np.ascontiguousarray(p, dtype=p.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def decode_networks(data: bytes):
    """Returns ``(networks, header)``."""
    f = io.BytesIO(data)
    head = f.read(_MODEL_HEADER.size)
    if len(head) >= 4 and head[:4] != MODEL_MAGIC:
        raise FormatError("not a KSP model file")
    if len(head) != _MODEL_HEADER.size:
        raise FormatError("unexpected end of KSP stream")
    _, version, length = _MODEL_HEADER.unpack(head)
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    header = json.loads(_read_exact(f, length).decode("utf-8"))
    networks = []
    for rec in header.pop("networks"):
        tensors = []
        for t in rec["tensors"]:
            dt = np.dtype(t["dtype"])
            n = math.prod(t["shape"])
            tensors.append(np.frombuffer(_read_exact(f, n * dt.itemsize), dtype=dt).reshape(t["shape"]))
        layers, k = [], 0
        for item in rec["layers"]:
            if isinstance(item, dict):
                cin, cout, kh, kw = item["conv"]
                w, b = tensors[k], tensors[k + 1]
                layers.append(Conv(cin, cout, kh, kw, weight=w, bias=b, dtype=w.dtype.newbyteorder("=")))
                k += 2
            else:
                layers.append({"relu": ReLU, "res[": ResidualStart, "]res": ResidualEnd}[item]())
        networks.append(Network(layers))
    if f.read(1):
        raise FormatError("trailing bytes after model payload")
    return networks, header


def write_spark_model(path, model):
    cfg = asdict(model.config)
    cfg["geometry"] = None if model.config.geometry is None else asdict(model.config.geometry)
    meta = {"kind": "spark", "scale": model.scale, "config": cfg, "histories": [[float(v) for v in h] for h in model.histories]}
    Path(path).write_bytes(encode_networks(model.networks, meta))


def read_spark_model(path):
    from ..grappa import KernelGeometry
    from ..spark import SparkConfig, SparkModel
    networks, header = decode_networks(Path(path).read_bytes())
    if header.get("kind") != "spark":
        raise FormatError(f"expected a spark model, found {header.get('kind')!r}")
    cfg = dict(header["config"])
    if cfg["geometry"] is not None:
        cfg["geometry"] = KernelGeometry(**cfg["geometry"])
    return SparkModel(networks, header["scale"], SparkConfig(**cfg), header["histories"])


# -- PGM ----------------------------------------------------------------------

def pgm_bytes(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("non-finite pixel values")
    peak = img.max() if img.size else 0.0
    if peak > 0:
        pix = np.rint(np.clip(img, 0, None) / peak * 65535)
    else:
        pix = np.zeros(img.shape)
    h, w = img.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + pix.astype(">u2").tobytes()


def export_pgm(path, img):
    """16-bit binary PGM, linear map [0, max] -> [0, 65535]."""
    Path(path).write_bytes(pgm_bytes(img))


# -- CSV ----------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    method: str
    r: int
    acs: int
    sigma: float
    seed: int
    rmse: float | None
    wall_time_s: float
    error: str = ""

    def __post_init__(self):
        if self.rmse is not None and not self.rmse >= 0:
            raise ValueError(f"rmse must be >= 0, got {self.rmse}")

    @property
    def sort_key(self):
        return self.method, self.r, self.acs, self.seed, self.sigma

    @property
    def ok(self):
        return not self.error


def _num(x):
    return "" if x is None else f"{x:.9g}"


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in sorted(rows, key=lambda r: r.sort_key):
        w.writerow([row.method, row.r, row.acs, _num(row.sigma), row.seed, _num(row.rmse),
                    _num(row.wall_time_s), row.error])
    return buf.getvalue()


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(csv_text(rows))


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise FormatError(f"unexpected CSV header {header}")
        return [ResultRow(m, int(r), int(a), float(s), int(seed), float(e) if e else None, float(t), err)
                for m, r, a, s, seed, e, t, err in reader]
