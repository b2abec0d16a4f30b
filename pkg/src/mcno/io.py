"""Binary dataset/checkpoint files, metrics CSV and JSON configs.

Both binary files share one layout::

    magic (4 bytes) | version (1 byte) | header length (uint32 LE) | UTF-8 JSON header | payload

with float64 little-endian payloads.  Datasets (``MCND``) store ``a`` then
``u`` row-major; checkpoints (``MCNC``) store the named tensors back to back at
the byte offsets listed in the header, which also carries the config, grid
size, sample indices and the two normalization scales.
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import fields

import numpy as np

from .autodiff import Tensor
from .model import MCNOConfig, MCNOModel, SampleSet, check_scales
from .spectral import Dataset
from .training import TrainConfig

DATASET_MAGIC = b"MCND"
CHECKPOINT_MAGIC = b"MCNC"
VERSION = 1
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class SchemaError(FormatError):
    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + bytes([VERSION]) + struct.pack("<I", len(hdr)) + hdr + payload


def _unpack(blob: bytes, magic: bytes, path):
    if len(blob) < 9:
        raise TruncatedPayloadError(f"{path}: file too short for a header")
    if blob[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    if blob[4] != VERSION:
        raise VersionMismatchError(f"{path}: version {blob[4]}, expected {VERSION}")
    (n,) = struct.unpack("<I", blob[5:9])
    if len(blob) < 9 + n:
        raise TruncatedPayloadError(f"{path}: header truncated")
    try:
        header = json.loads(blob[9:9 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("header", f"not valid JSON ({e})") from None
    return header, blob[9 + n:]


def _require(header, key, kind):
    if key not in header:
        raise SchemaError(key, "missing from header")
    if not isinstance(header[key], kind) or isinstance(header[key], bool) and kind is not bool:
        raise SchemaError(key, f"expected {kind.__name__}, got {type(header[key]).__name__}")
    return header[key]


# ----------------------------------------------------------------------------
# datasets


def dataset_bytes(ds: Dataset) -> bytes:
    meta = {k: v for k, v in ds.meta.items() if k not in ("pde", "n_samples", "resolution")}
    header = {"pde": ds.pde, "n_samples": ds.n_samples, "resolution": ds.resolution,
              "dtype": "f64", "seed": meta.pop("seed", None), "solver": meta.pop("solver", {}),
              "meta": meta}
    payload = ds.a.astype(_F64).tobytes() + ds.u.astype(_F64).tobytes()
    return _pack(DATASET_MAGIC, header, payload)


def save_dataset(path, ds: Dataset):
    _atomic_write(path, dataset_bytes(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header, payload = _unpack(fh.read(), DATASET_MAGIC, path)
    pde = _require(header, "pde", str)
    n = _require(header, "n_samples", int)
    s = _require(header, "resolution", int)
    if _require(header, "dtype", str) != "f64":
        raise SchemaError("dtype", f"unsupported dtype {header['dtype']!r}")
    if n < 1 or s < 1:
        raise SchemaError("n_samples" if n < 1 else "resolution", "must be >= 1")
    need = 2 * n * s * 8
    if len(payload) < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise SchemaError("payload", f"{len(payload) - need} trailing bytes")
    arr = np.frombuffer(payload, dtype=_F64).astype(np.float64)
    meta = dict(header.get("meta") or {})
    meta.update(seed=header.get("seed"), solver=header.get("solver", {}))
    return Dataset(pde, s, arr[:n * s].reshape(n, s), arr[n * s:].reshape(n, s), meta)


# ----------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(model: MCNOModel) -> bytes:
    table, chunks, offset = [], [], 0
    for name, t in model.params.items():
        b = t.data.astype(_F64).tobytes()
        table.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(b)
        offset += len(b)
    header = {"config": model.config.to_dict(), "grid_size": model.grid_size,
              "sample_indices": [int(i) for i in model.samples.indices],
              "scales": list(model.scales), "tensors": table}
    return _pack(CHECKPOINT_MAGIC, header, b"".join(chunks))


def save_checkpoint(path, model: MCNOModel):
    _atomic_write(path, checkpoint_bytes(model))


def load_checkpoint(path) -> MCNOModel:
    with open(path, "rb") as fh:
        header, payload = _unpack(fh.read(), CHECKPOINT_MAGIC, path)
    cfg = _require(header, "config", dict)
    try:
        config = MCNOConfig(**cfg)
    except TypeError as e:
        raise SchemaError("config", str(e)) from None
    grid = _require(header, "grid_size", int)
    samples = SampleSet(np.array(_require(header, "sample_indices", list), dtype=np.int64), grid)
    params = OrderedDict()
    for entry in _require(header, "tensors", list):
        name, shape, off = entry.get("name"), entry.get("shape"), entry.get("offset")
        if not isinstance(name, str) or not isinstance(shape, list) or not isinstance(off, int):
            raise SchemaError("tensors", f"malformed entry {entry!r}")
        size = int(np.prod(shape)) * 8
        if off < 0 or off + size > len(payload):
            raise TruncatedPayloadError(f"{path}: tensor {name} exceeds payload")
        data = np.frombuffer(payload[off:off + size], dtype=_F64).astype(np.float64)
        params[name] = Tensor(data.reshape(shape), requires_grad=True)
    try:
        scales = check_scales(header.get("scales", [1.0, 1.0]))
    except (ValueError, TypeError) as e:
        raise SchemaError("scales", str(e)) from None
    return MCNOModel(config, grid, samples, params, scales)


# ----------------------------------------------------------------------------
# metrics and reports

METRICS_HEADER = ["epoch", "train_rel_l2", "test_rel_l2", "lr", "seconds"]


def decimal(x: float) -> str:
    """Plain decimal notation (no exponent) with 12 significant digits."""
    return np.format_float_positional(float(x), precision=12, unique=False, fractional=False)


def export_metrics(path, report):
    rows = [[r.epoch, decimal(r.train_rel_l2), decimal(r.test_rel_l2), decimal(r.lr),
             decimal(r.seconds)] for r in report.rows]
    _write_csv(path, METRICS_HEADER, rows)


def _write_csv(path, header, rows):
    import io as _io
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def export_bound_report(path_prefix, report):
    """Write ``<prefix>.json`` and ``<prefix>.csv``."""
    _atomic_write(path_prefix + ".json",
                  json.dumps(report.to_dict(), indent=2, sort_keys=True).encode("utf-8"))
    keys = list(report.cells[0])
    _write_csv(path_prefix + ".csv", keys,
               [[decimal(c[k]) if isinstance(c[k], float) else c[k] for k in keys]
                for c in report.cells])


# ----------------------------------------------------------------------------
# configs

_CONFIG_TYPES = {"model": MCNOConfig, "train": TrainConfig}


def load_config(source) -> dict:
    """Validate ``{"model": {...}, "train": {...}}`` JSON (path, string or dict)."""
    if isinstance(source, dict):
        raw = source
    else:
        text = source
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaError("config", f"not valid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise SchemaError("config", "top level must be an object")
    out = {}
    for section, values in raw.items():
        if section not in _CONFIG_TYPES:
            raise SchemaError(section, f"unknown section; expected one of {sorted(_CONFIG_TYPES)}")
        cls = _CONFIG_TYPES[section]
        known = {f.name: f for f in fields(cls)}
        if not isinstance(values, dict):
            raise SchemaError(section, "must be an object")
        for k, v in values.items():
            if k not in known:
                raise SchemaError(f"{section}.{k}", "unknown key")
            default = known[k].default
            if isinstance(default, bool) and not isinstance(v, bool):
                raise SchemaError(f"{section}.{k}", "expected a boolean")
            if isinstance(default, (int, float)) and not isinstance(default, bool) and \
                    (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise SchemaError(f"{section}.{k}", "expected a number")
            if isinstance(default, int) and not isinstance(default, bool) and isinstance(v, float):
                raise SchemaError(f"{section}.{k}", "expected an integer")
        try:
            out[section] = cls(**values)
        except ValueError as e:
            raise SchemaError(section, str(e)) from None
    return out
