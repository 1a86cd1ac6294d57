# csi/services/dump.py
#
# Binary CSI dump, little-endian:
#   "CSID" | u32 version | u16 M | u16 N | u16 K | u32 T | f32 sample_rate | u8 label
#   then T·M·N·K complex values as f32 (re, im), t-major, then m, n, k.
import logging
import struct
from pathlib import Path

import numpy as np

from cronos_lab.storage import atomic_write_bytes
from csi.exceptions import (
    DumpDimensionError,
    DumpFormatError,
    DumpMagicError,
    DumpTruncatedError,
    EmptySeriesError,
)
from csi.types import CsiSeries

logger = logging.getLogger(__name__)

DUMP_MAGIC = b"CSID"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIHHHIfB")
_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


def write_dump(series: CsiSeries, path) -> None:
    """Write a series; values are stored as complex64 (f32 pairs)."""
    t_count = len(series)
    m, n, k = series.dims
    if max(m, n, k) > _U16_MAX or t_count > _U32_MAX:
        raise DumpDimensionError(f"series shape {series.values.shape} does not fit the dump header")

    header = _HEADER.pack(DUMP_MAGIC, DUMP_VERSION, m, n, k, t_count,
                          float(series.sample_rate_hz), series.label or 0)
    payload = np.ascontiguousarray(series.values, dtype="<c8").tobytes()

    atomic_write_bytes(path, header + payload)
    logger.debug("wrote dump %s (T=%d, %dx%dx%d)", path, t_count, m, n, k)


def read_dump(path) -> CsiSeries:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] and not DUMP_MAGIC.startswith(raw[:4]):
            raise DumpMagicError(f"{path}: not a CSI dump")
        raise DumpTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")

    magic, version, m, n, k, t_count, sample_rate, label = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise DumpMagicError(f"{path}: bad magic {magic!r}")
    if version != DUMP_VERSION:
        raise DumpFormatError(f"{path}: unsupported dump version {version}")
    if t_count == 0:
        raise EmptySeriesError(f"{path}: dump holds no frames")
    if 0 in (m, n, k):
        raise DumpDimensionError(f"{path}: zero antenna or subcarrier count ({m}x{n}x{k})")
    if label > 4:
        raise DumpFormatError(f"{path}: label {label} out of range")

    expected = t_count * m * n * k * 8
    available = len(raw) - _HEADER.size
    if available < expected:
        raise DumpTruncatedError(f"{path}: payload has {available} bytes, expected {expected}")
    if available > expected:
        raise DumpDimensionError(f"{path}: {available - expected} trailing bytes after payload")

    values = np.frombuffer(raw, dtype="<c8", count=t_count * m * n * k, offset=_HEADER.size)
    return CsiSeries(
        values=values.reshape(t_count, m, n, k).astype(np.complex64),
        sample_rate_hz=float(sample_rate),
        label=label or None,
    )
