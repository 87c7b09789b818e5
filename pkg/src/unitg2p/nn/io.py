"""
UGPT named-tensor container.

Layout: magic "UGPT", version u32, count u32, then per tensor:
name length u32, UTF-8 name, dtype code u8, ndim u32, ndim x u32 shape,
little-endian row-major data.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import torch

from ..exceptions import ContainerFormatError

TENSOR_MAGIC = b"UGPT"
TENSOR_VERSION = 1
CONFIG_KEY = "__config__"

_DTYPES = {
    0: (torch.float32, "<f4"),
    1: (torch.float64, "<f8"),
    2: (torch.int64, "<i8"),
    3: (torch.uint8, "u1"),
    4: (torch.bool, "?"),
}
_CODES = {torch_dtype: code for code, (torch_dtype, _) in _DTYPES.items()}


def save_tensors(path: Union[str, Path], tensors: Mapping[str, torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", TENSOR_MAGIC, TENSOR_VERSION, len(tensors)))
        for name, tensor in tensors.items():
            tensor = tensor.detach().cpu().contiguous()
            if tensor.dtype not in _CODES:
                raise ContainerFormatError(f"cannot store tensor '{name}' of dtype {tensor.dtype}")
            code = _CODES[tensor.dtype]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BI", code, tensor.dim()))
            fh.write(struct.pack(f"<{tensor.dim()}I", *tensor.shape))
            fh.write(tensor.numpy().astype(_DTYPES[code][1], copy=False).tobytes())


def load_tensors(path: Union[str, Path]) -> "OrderedDict[str, torch.Tensor]":
    """
    Read a UGPT container.

    Raises:
        ContainerFormatError: Bad magic, unsupported version, unknown dtype or truncation
    """
    raw = Path(path).read_bytes()
    try:
        magic, version, count = struct.unpack_from("<4sII", raw, 0)
        if magic != TENSOR_MAGIC:
            raise ContainerFormatError(f"{path}: bad magic {magic!r}")
        if version != TENSOR_VERSION:
            raise ContainerFormatError(f"{path}: unsupported tensor container version {version}")
        offset = 12
        out: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BI", raw, offset)
            offset += 5
            if code not in _DTYPES:
                raise ContainerFormatError(f"{path}: tensor '{name}' has unknown dtype code {code}")
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            np_dtype = np.dtype(_DTYPES[code][1])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            if offset + n_bytes > len(raw):
                raise ContainerFormatError(f"{path}: tensor '{name}' is truncated")
            array = np.frombuffer(raw[offset:offset + n_bytes], dtype=np_dtype).reshape(shape)
            offset += n_bytes
            out[name] = torch.from_numpy(array.copy())
    except struct.error as e:
        raise ContainerFormatError(f"{path}: truncated container ({e})") from e
    if offset != len(raw):
        raise ContainerFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return out


def save_module(path: Union[str, Path], module: torch.nn.Module, config: Optional[Dict[str, Any]] = None,
                extra: Optional[Mapping[str, torch.Tensor]] = None) -> None:
    """Persist a module's state dict, with its config as a JSON byte tensor."""
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    if config is not None:
        payload = json.dumps(config, sort_keys=True).encode("utf-8")
        tensors[CONFIG_KEY] = torch.tensor(list(payload), dtype=torch.uint8)
    for name, value in (extra or {}).items():
        tensors[name] = value
    tensors.update(module.state_dict())
    save_tensors(path, tensors)


def load_module_state(path: Union[str, Path]) -> Tuple["OrderedDict[str, torch.Tensor]", Optional[Dict[str, Any]]]:
    tensors = load_tensors(path)
    config = None
    if CONFIG_KEY in tensors:
        config = json.loads(bytes(tensors.pop(CONFIG_KEY).tolist()).decode("utf-8"))
    return tensors, config
