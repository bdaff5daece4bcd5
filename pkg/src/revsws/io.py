"""``.rvf`` field container and SWS map writers.

Container layout, all integers little-endian::

    0   4 bytes  magic b"RVSF"
    4   uint32   format version
    8   uint32   header length in bytes
    12  ...      UTF-8 JSON header (sorted keys, compact separators)
    ..  ...      float32 payload, row-major, space axes first then time;
                 complex fields store interleaved (re, im) pairs
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .pipeline import SwsMap
from .spectral import ComplexPlaneField
from .wavefield import GridSpec, MotionSeries

MAGIC = b"RVSF"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


class RvfError(Exception):
    code = 10


class RvfMagicError(RvfError):
    code = 11


class RvfVersionError(RvfError):
    code = 12


class RvfSizeError(RvfError):
    code = 13


class RvfNaNError(RvfError):
    code = 14


class RvfHeaderError(RvfError):
    code = 15


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _series_header(series: MotionSeries) -> dict:
    g = series.grid
    return {
        "kind": "motion_series",
        "complex": False,
        "dims": [g.nx, g.ny, g.nz, g.nt],
        "spacing": list(g.spacing),
        "dt": g.dt,
        "f0": g.f0,
        "sensor_axis": series.sensor_axis,
        "units": series.units,
        "provenance": series.metadata,
    }


def _plane_header(fld: ComplexPlaneField) -> dict:
    return {
        "kind": "plane_field",
        "complex": True,
        "dims": list(fld.shape),
        "spacing": list(fld.spacing),
        "f0": fld.f0,
        "axes": list(fld.axes),
        "plane_kind": fld.plane_kind,
        "sensor_axis": fld.sensor_axis,
        "weak_signal": bool(fld.weak_signal),
        "units": "m/s",
        "provenance": fld.metadata,
    }


def encode_field(obj) -> bytes:
    if isinstance(obj, MotionSeries):
        header = _series_header(obj)
        payload = np.ascontiguousarray(obj.samples, dtype="<f4")
    elif isinstance(obj, ComplexPlaneField):
        header = _plane_header(obj)
        inter = np.stack([obj.values.real, obj.values.imag], axis=-1)
        payload = np.ascontiguousarray(inter, dtype="<f4")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")
    if not np.all(np.isfinite(payload)):
        raise RvfNaNError("refusing to write non-finite samples")
    hbytes = canonical_json(header).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + payload.tobytes()


def write_field(obj, path) -> None:
    atomic_write_bytes(path, encode_field(obj))


def decode_field(data: bytes):
    if len(data) < _PREFIX.size:
        raise RvfSizeError(f"file of {len(data)} bytes is shorter than the {_PREFIX.size}-byte prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise RvfMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise RvfVersionError(f"format version {version} not supported (expected {FORMAT_VERSION})")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise RvfSizeError(f"header claims {hlen} bytes but file ends early")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
        dims = [int(d) for d in header["dims"]]
        kind = header["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise RvfHeaderError(f"unreadable header: {exc}") from exc
    expected = int(np.prod(dims)) * (2 if header.get("complex") else 1)
    actual_bytes = len(data) - start
    if actual_bytes != 4 * expected:
        raise RvfSizeError(f"payload holds {actual_bytes / 4:g} float32 values, expected {expected}")
    payload = np.frombuffer(data, dtype="<f4", offset=start, count=expected)
    if not np.all(np.isfinite(payload)):
        raise RvfNaNError("payload contains NaN or infinite values")

    if kind == "motion_series":
        nx, ny, nz, nt = dims
        grid = GridSpec(nx, ny, nz, tuple(header["spacing"]), nt, header["dt"], header["f0"])
        samples = payload.reshape(dims).astype(np.float32)
        return MotionSeries(grid, samples, header["sensor_axis"], header.get("units", "m/s"),
                            header.get("provenance", {}))
    if kind == "plane_field":
        pairs = payload.reshape(dims + [2]).astype(np.float64)
        values = pairs[..., 0] + 1j * pairs[..., 1]
        return ComplexPlaneField(values, tuple(header["spacing"]), header["f0"],
                                 header["plane_kind"], tuple(header["axes"]),
                                 header.get("sensor_axis", "z"), bool(header.get("weak_signal")),
                                 header.get("provenance", {}))
    raise RvfHeaderError(f"unknown field kind {kind!r}")


def read_field(path):
    return decode_field(Path(path).read_bytes())


# --- SWS maps ---------------------------------------------------------------

def _csv_columns(smap: SwsMap):
    return [f"{smap.axes[0]}_m", f"{smap.axes[1]}_m", "sws", "valid", "residual"]


def write_map_csv(smap: SwsMap, path) -> None:
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_csv_columns(smap))
    c0, c1 = smap.centers
    for i in range(smap.shape[0]):
        for j in range(smap.shape[1]):
            ok = bool(smap.validity[i, j])
            w.writerow([f"{c0[i]:.9g}", f"{c1[j]:.9g}",
                        f"{smap.values[i, j]:.9g}" if ok else "nan", int(ok),
                        f"{smap.residuals[i, j]:.9g}"])
    atomic_write_text(path, buf.getvalue())


def read_map_csv(path) -> SwsMap:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    axes = (head[0].removesuffix("_m"), head[1].removesuffix("_m"))
    a = np.array([float(r[0]) for r in body])
    b = np.array([float(r[1]) for r in body])
    c0, c1 = np.unique(a), np.unique(b)
    values = np.full((len(c0), len(c1)), np.nan)
    valid = np.zeros_like(values, dtype=bool)
    residuals = np.full_like(values, np.nan)
    for r, x, y in zip(body, a, b):
        i, j = np.searchsorted(c0, x), np.searchsorted(c1, y)
        valid[i, j] = r[3] == "1"
        values[i, j] = float(r[2])
        residuals[i, j] = float(r[4])
    return SwsMap(values, valid, residuals, (c0, c1), axes, {"source": str(path)})


def write_map_pgm16(smap: SwsMap, path) -> dict:
    """16-bit PGM with a JSON sidecar holding the linear scale.

    Valid speeds map linearly onto 1..65535; 0 marks invalid windows.
    """
    vals = smap.values[smap.validity]
    lo = float(vals.min()) if vals.size else 0.0
    hi = float(vals.max()) if vals.size else 0.0
    span = hi - lo
    img = np.zeros(smap.shape, dtype=">u2")
    if vals.size:
        scaled = (smap.values - lo) / span if span > 0 else np.zeros(smap.shape)
        q = 1 + np.rint(np.nan_to_num(scaled) * 65534)
        img[smap.validity] = q[smap.validity].astype(np.uint16)
    h, w = smap.shape
    data = f"P5\n{w} {h}\n65535\n".encode("ascii") + img.tobytes()
    atomic_write_bytes(path, data)
    side = {"min": lo, "max": hi, "shape": list(smap.shape), "axes": list(smap.axes),
            "centers": [list(map(float, c)) for c in smap.centers], "invalid_value": 0}
    atomic_write_text(str(path) + ".json", canonical_json(side))
    return side


def read_map_pgm16(path) -> SwsMap:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)
    side = json.loads(Path(str(path) + ".json").read_text())
    valid = img > 0
    values = np.full((h, w), np.nan)
    values[valid] = side["min"] + (img[valid].astype(float) - 1) / 65534 * (side["max"] - side["min"])
    centers = tuple(np.array(c) for c in side["centers"])
    return SwsMap(values, valid, np.full((h, w), np.nan), centers, tuple(side["axes"]),
                  {"source": str(path)})


def write_map(smap: SwsMap, path, fmt: str = "csv"):
    if fmt == "csv":
        return write_map_csv(smap, path)
    if fmt == "pgm16":
        return write_map_pgm16(smap, path)
    raise ValueError(f"unknown map format {fmt!r}")
