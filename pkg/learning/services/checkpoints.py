# learning/services/checkpoints.py
#
# Named-tensor checkpoints, little-endian:
#   "CRNM" | u32 version
#   then per tensor: u16 name length | name (utf-8) | u8 dtype code | u8 rank | u32 dims[rank] | payload
# Names are dotted module paths prefixed by the stage, e.g. "stage2.encoder.stem.0.weight".
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict

import numpy as np
import torch
import torch.nn as nn

from cronos_lab.storage import atomic_write_bytes
from learning.exceptions import CheckpointFormatError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CRNM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sI")
_RECORD = struct.Struct("<H")
_DTYPE_RANK = struct.Struct("<BB")

_DTYPE_CODES = {torch.float32: 0, torch.int64: 1}
_NUMPY_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}


def _encode_tensor(name: str, tensor: torch.Tensor) -> bytes:
    if tensor.dtype not in _DTYPE_CODES:
        tensor = tensor.to(torch.float32)
    code = _DTYPE_CODES[tensor.dtype]
    array = tensor.detach().cpu().contiguous().numpy().astype(_NUMPY_DTYPES[code], copy=False)
    encoded = name.encode("utf-8")
    return b"".join([
        _RECORD.pack(len(encoded)),
        encoded,
        _DTYPE_RANK.pack(code, array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        array.tobytes(),
    ])


def save_checkpoint(tensors: Dict[str, torch.Tensor], path) -> None:
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)]
    chunks.extend(_encode_tensor(name, tensor) for name, tensor in tensors.items())
    atomic_write_bytes(path, b"".join(chunks))
    logger.info("saved %d tensors to %s", len(tensors), path)


def load_checkpoint(path) -> "OrderedDict[str, torch.Tensor]":
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointFormatError(f"{path}: header truncated")
    magic, version = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")

    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    offset = _HEADER.size
    try:
        while offset < len(raw):
            (name_len,) = _RECORD.unpack_from(raw, offset)
            offset += _RECORD.size
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, rank = _DTYPE_RANK.unpack_from(raw, offset)
            offset += _DTYPE_RANK.size
            if code not in _NUMPY_DTYPES:
                raise CheckpointFormatError(f"{path}: tensor {name!r} has unknown dtype code {code}")
            shape = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            dtype = _NUMPY_DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + n_bytes > len(raw):
                raise CheckpointFormatError(f"{path}: tensor {name!r} truncated")
            array = np.frombuffer(raw, dtype=dtype, count=n_bytes // dtype.itemsize, offset=offset)
            offset += n_bytes
            tensors[name] = torch.from_numpy(array.reshape(shape).copy())
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt record near byte {offset}: {exc}") from exc
    return tensors


# ── Module <-> named tensors ────────────────────────────────────────────────

def module_tensors(prefix: str, module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((f"{prefix}.{name}", t) for name, t in module.state_dict().items())


def load_module(prefix: str, module: nn.Module, tensors: Dict[str, torch.Tensor]) -> None:
    """Load the tensors under `prefix` into module; names and shapes must match exactly."""
    head = f"{prefix}."
    state = OrderedDict((name[len(head):], t) for name, t in tensors.items() if name.startswith(head))
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"checkpoint does not fit {prefix}: {exc}") from exc
