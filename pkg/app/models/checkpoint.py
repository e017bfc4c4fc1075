"""Binary checkpoint container: a flat list of named float64 tensors.

Layout (little-endian):

    magic   4 bytes  b"JDCK"
    version u16
    count   u32
    count times:
        name_len u16, name (utf-8), ndim u8, dims u32 * ndim, values f8 * prod(dims)
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..core.exceptions import DataFormatError, ShapeError
from ..engine.autodiff import Parameter
from .sequence import SequenceModel

logger = logging.getLogger(__name__)

MAGIC = b"JDCK"
VERSION = 1


def save_checkpoint(params: Mapping[str, Parameter], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, param in params.items():
        encoded = name.encode("utf-8")
        value = np.asarray(param.value, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        chunks.append(value.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    logger.info(f"Saved {len(params)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read checkpoint: {e}", path) from e
    if data[:4] != MAGIC:
        raise DataFormatError("not a checkpoint (bad magic)", path)
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise DataFormatError("checkpoint truncated", path)
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    version, count = take("<HI")
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", path)
    tensors: Dict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = take("<H")
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if offset + nbytes > len(data):
            raise DataFormatError(f"checkpoint truncated inside {name}", path)
        tensors[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(dims).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise DataFormatError(f"{len(data) - offset} trailing bytes after the last tensor", path)
    return tensors


def load_into(model: SequenceModel, path: Union[str, Path]) -> SequenceModel:
    """Overwrite ``model``'s parameter values from a checkpoint with the same names and shapes"""
    tensors = load_checkpoint(path)
    missing = set(model.params) ^ set(tensors)
    if missing:
        raise DataFormatError(f"checkpoint and model disagree on tensors: {', '.join(sorted(missing))}", path)
    for name, value in tensors.items():
        param = model.params[name]
        if param.shape != value.shape:
            raise ShapeError(f"checkpoint tensor {name} does not fit", value.shape, param.shape)
        param.value = value.copy()
        param.zero_grad()
    return model
