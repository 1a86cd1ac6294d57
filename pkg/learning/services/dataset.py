# learning/services/dataset.py
#
# Feature dataset container, little-endian:
#   "CRDS" | u32 version | u16 Q | u16 w | u16 h | u32 count
#   then per record: u8 label | u8 split | u16 source | u32 t | f32 rp[1·h·w] | f32 ratio[Q·h·w]
import logging
import math
import struct
from pathlib import Path
from typing import List

import numpy as np

from cronos_lab.storage import atomic_write_bytes
from feig.types import FeatureDataset
from learning.exceptions import DatasetFormatError, MissingClassError
from learning.types import N_CLASSES

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"CRDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIHHHI")


def record_dtype(ratio_channels: int, height: int, width: int) -> np.dtype:
    return np.dtype([
        ("label", "u1"),
        ("split", "u1"),
        ("source", "<u2"),
        ("t", "<u4"),
        ("rp", "<f4", (1, height, width)),
        ("ratio", "<f4", (ratio_channels, height, width)),
    ])


def write_dataset(dataset: FeatureDataset, path) -> None:
    height, width = dataset.image_size
    q = dataset.ratio_channels
    records = np.empty(len(dataset), dtype=record_dtype(q, height, width))
    records["label"] = dataset.labels
    records["split"] = dataset.splits
    records["source"] = dataset.sources
    records["t"] = dataset.timestamps
    records["rp"] = dataset.rp
    records["ratio"] = dataset.ratio

    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, q, width, height, len(dataset))
    atomic_write_bytes(path, header + records.tobytes())
    logger.info("wrote %d records to %s", len(dataset), path)


def read_dataset(path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, q, width, height, count = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
    if 0 in (q, width, height):
        raise DatasetFormatError(f"{path}: zero image dimension (Q={q}, {width}x{height})")

    dtype = record_dtype(q, height, width)
    expected = count * dtype.itemsize
    available = len(raw) - _HEADER.size
    if available != expected:
        raise DatasetFormatError(f"{path}: payload has {available} bytes, expected {expected} for {count} records")

    records = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    if count and (records["label"].max() > N_CLASSES or records["split"].max() > 2):
        raise DatasetFormatError(f"{path}: label or split code out of range")
    return FeatureDataset(
        labels=records["label"].copy(),
        splits=records["split"].copy(),
        sources=records["source"].astype(np.uint16),
        timestamps=records["t"].astype(np.uint32),
        rp=records["rp"].astype(np.float32),
        ratio=records["ratio"].astype(np.float32),
    )


# ── Batching ─────────────────────────────────────────────────────────────────

def check_classes(labels: np.ndarray, minimum: int = 2) -> np.ndarray:
    """Per-class counts for cases 1..4; every case needs `minimum` samples."""
    counts = np.array([np.count_nonzero(labels == c) for c in range(1, N_CLASSES + 1)])
    missing = [c for c, n in zip(range(1, N_CLASSES + 1), counts) if n < minimum]
    if missing:
        raise MissingClassError(f"cases {missing} have fewer than {minimum} samples (counts {counts.tolist()})")
    return counts


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Index batches of roughly batch_size in which every case contributes at
    least two samples, so every anchor has a positive among the originals.
    """
    counts = check_classes(labels)
    n_batches = max(1, min(math.ceil(len(labels) / batch_size), int(counts.min()) // 2))

    per_class = []
    for case in range(1, N_CLASSES + 1):
        index = np.flatnonzero(labels == case)
        per_class.append(np.array_split(rng.permutation(index), n_batches))

    batches = []
    for b in range(n_batches):
        batch = np.concatenate([chunks[b] for chunks in per_class])
        batches.append(rng.permutation(batch))
    return batches
