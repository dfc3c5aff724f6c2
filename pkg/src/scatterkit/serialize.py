"""On-disk formats: the SKB1 array container, ASC line files, flat configs.

SKB1 layout (all little-endian)::

    offset  size  field
    0       4     magic b"SKB1"
    4       2     u16 version (1)
    6       2     u16 flags (bit 0: complex, data interleaved re/im)
    8       4     u32 ndim
    12      4     u32 n_meta
    16      4*nd  u32 dims
    ...     8*nm  f64 metadata values
    ...           f32 payload, row-major
"""
from __future__ import annotations

import io
import json
import math
import os
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .radar import ASPECT_TERMS, ChipImage, RadarConfig, ScatterCenter, Spectrum

MAGIC = b"SKB1"
VERSION = 1
FLAG_COMPLEX = 1
_HEADER = struct.Struct("<4sHHII")


class FormatError(ValueError):
    pass


def pack_skb(array: np.ndarray, meta: Sequence[float] = ()) -> bytes:
    arr = np.asarray(array)
    is_complex = np.iscomplexobj(arr)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, FLAG_COMPLEX if is_complex else 0, arr.ndim, len(meta)))
    buf.write(np.asarray(arr.shape, dtype="<u4").tobytes())
    buf.write(np.asarray(meta, dtype="<f8").tobytes())
    if is_complex:
        payload = np.empty(arr.shape + (2,), dtype="<f4")
        payload[..., 0] = arr.real
        payload[..., 1] = arr.imag
    else:
        payload = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(payload.tobytes())
    return buf.getvalue()


def unpack_skb(blob: bytes) -> tuple[np.ndarray, tuple[float, ...]]:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated SKB1 header")
    magic, version, flags, ndim, n_meta = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SKB1 version {version}")
    off = _HEADER.size
    dims = tuple(int(d) for d in np.frombuffer(blob, dtype="<u4", count=ndim, offset=off))
    off += 4 * ndim
    meta = tuple(float(v) for v in np.frombuffer(blob, dtype="<f8", count=n_meta, offset=off))
    off += 8 * n_meta
    count = math.prod(dims) * (2 if flags & FLAG_COMPLEX else 1)
    if len(blob) - off != 4 * count:
        raise FormatError(f"payload size {len(blob) - off} != expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    if flags & FLAG_COMPLEX:
        data = data.reshape(dims + (2,))
        arr = np.empty(dims, dtype=np.complex64)
        arr.real = data[..., 0]
        arr.imag = data[..., 1]
    else:
        arr = data.reshape(dims).copy()
    return arr, meta


def write_skb(path: str | os.PathLike | BinaryIO, array: np.ndarray, meta: Sequence[float] = ()):
    blob = pack_skb(array, meta)
    if hasattr(path, "write"):
        path.write(blob)
    else:
        Path(path).write_bytes(blob)


def read_skb(path: str | os.PathLike | BinaryIO) -> tuple[np.ndarray, tuple[float, ...]]:
    blob = path.read() if hasattr(path, "read") else Path(path).read_bytes()
    return unpack_skb(blob)


def save_spectrum(path, spec: Spectrum):
    g = spec.grid
    meta = (g.center_freq, g.bandwidth, g.aspect_center, g.aspect_span, g.c,
            float(ASPECT_TERMS.index(g.aspect_term)))
    write_skb(path, spec.data, meta)


def load_spectrum(path) -> Spectrum:
    data, meta = read_skb(path)
    if len(meta) != 6 or data.ndim != 2:
        raise FormatError("not a spectrum container")
    fc, bw, ac, span, c, term = meta
    grid = RadarConfig(center_freq=fc, bandwidth=bw, aspect_center=ac, aspect_span=span,
                       n_freq=data.shape[0], n_aspect=data.shape[1], c=c,
                       aspect_term=ASPECT_TERMS[int(term)])
    return Spectrum(grid, data.astype(np.complex128))


def save_chip(path, chip: ChipImage):
    write_skb(path, chip.pixels, (chip.meters_per_pixel_range, chip.meters_per_pixel_crossrange))


def load_chip(path) -> ChipImage:
    data, meta = read_skb(path)
    if len(meta) != 2 or data.ndim != 2:
        raise FormatError("not a chip container")
    return ChipImage(data, meta[0], meta[1])


# ---------------------------------------------------------------- ASC lines

_CENTER_KEYS = ("A_re", "A_im", "x", "y", "alpha", "L", "phi_bar", "gamma")


def center_to_line(sc: ScatterCenter) -> str:
    vals = (sc.amplitude_re, sc.amplitude_im, sc.x, sc.y, sc.alpha, sc.length, sc.phi_bar, sc.gamma)
    return json.dumps(dict(zip(_CENTER_KEYS, (float(v) for v in vals))))


def line_to_center(line: str) -> ScatterCenter:
    d = json.loads(line)
    missing = [k for k in _CENTER_KEYS if k not in d]
    if missing:
        raise FormatError(f"center line missing keys {missing}")
    return ScatterCenter(d["A_re"], d["A_im"], d["x"], d["y"], d["alpha"], d["L"],
                         d["phi_bar"], d["gamma"])


def dump_centers(centers: Iterable[ScatterCenter], metadata: dict | None = None) -> str:
    lines = [center_to_line(sc) for sc in centers]
    if metadata is not None:
        lines.append(json.dumps(metadata))
    return "".join(line + "\n" for line in lines)


def parse_centers(text: str) -> tuple[list[ScatterCenter], dict | None]:
    centers, meta = [], None
    for raw in text.splitlines():
        raw = raw.strip()
        if not raw:
            continue
        d = json.loads(raw)
        if "A_re" in d:
            centers.append(line_to_center(raw))
        else:
            meta = d
    return centers, meta


def write_centers(path, centers, metadata=None):
    Path(path).write_text(dump_centers(centers, metadata), encoding="utf-8")


def read_centers(path) -> tuple[list[ScatterCenter], dict | None]:
    return parse_centers(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- configs

def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {n}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(values.items()))
