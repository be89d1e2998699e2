"""Project binary tensor format and named-tensor archives.

File layout (little-endian):
    b"DAFT" | u8 version | u8 dtype (0=f32, 1=f64) | u8 rank | u32 dims[rank] | raw values

An archive is a directory holding one `.daft` file per tensor name plus a
`manifest.txt` that lists name, dtype and dims, followed by an optional
`[config]` section of key=value lines.
"""

import os
from pathlib import Path
import struct
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from daflow.errors import FormatError

MAGIC = b"DAFT"
VERSION = 1
_CODE_TO_DTYPE = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_NAMES = {0: 'f32', 1: 'f64'}
MANIFEST_NAME = 'manifest.txt'


def _to_array(value) -> np.ndarray:
    return np.asarray(getattr(value, 'data', value))


def encode_tensor(value) -> bytes:
    arr = _to_array(value)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise FormatError(f"Unsupported dtype {arr.dtype}; only float32/float64 are stored")
    if arr.ndim > 255:
        raise FormatError(f"Rank {arr.ndim} is too large for the tensor format")
    header = MAGIC + struct.pack('<BBB', VERSION, code, arr.ndim)
    header += struct.pack(f'<{arr.ndim}I', *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise FormatError("Not a DAFT tensor file (bad magic)")
    version, code, rank = struct.unpack_from('<BBB', blob, 4)
    if version != VERSION:
        raise FormatError(f"Unsupported DAFT version {version}")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"Unknown DAFT dtype code {code}")
    offset = 7 + 4 * rank
    if len(blob) < offset:
        raise FormatError("Truncated DAFT header")
    dims = struct.unpack_from(f'<{rank}I', blob, 7)
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(f"DAFT payload holds {len(blob) - offset} bytes, expected {expected} for dims {dims}")
    arr = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims)
    return arr.astype(dtype.newbyteorder('='), copy=True)


def save_tensor(path, value):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(encode_tensor(value))


def load_tensor(path) -> np.ndarray:
    with open(path, 'rb') as f:
        return decode_tensor(f.read())


def _file_name(name: str) -> str:
    return name.replace(os.sep, '_') + '.daft'


def save_archive(root, tensors: Mapping[str, object], config: Optional[Mapping[str, str]] = None):
    """Write every named tensor plus a manifest describing them."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, value in tensors.items():
        arr = _to_array(value)
        save_tensor(root / _file_name(name), arr)
        code = _DTYPE_TO_CODE[arr.dtype]
        dims = 'x'.join(str(d) for d in arr.shape) or 'scalar'
        lines.append(f"{name}\t{_DTYPE_NAMES[code]}\t{dims}")
    if config:
        lines.append('[config]')
        lines.extend(f"{k}={v}" for k, v in config.items())
    (root / MANIFEST_NAME).write_text('\n'.join(lines) + '\n')


def read_manifest(root) -> Tuple[Dict[str, Tuple[str, Tuple[int, ...]]], Dict[str, str]]:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"Archive manifest missing: {path}")
    entries, config, in_config = {}, {}, False
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == '[config]':
            in_config = True
            continue
        if in_config:
            key, _, value = line.partition('=')
            config[key.strip()] = value.strip()
            continue
        parts = line.split('\t')
        if len(parts) != 3:
            raise FormatError(f"Malformed manifest line: {raw!r}")
        name, dtype, dims = parts
        shape = () if dims == 'scalar' else tuple(int(d) for d in dims.split('x'))
        entries[name] = (dtype, shape)
    return entries, config


def load_archive(root) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Load every tensor listed in the manifest, checking dtype and dims."""
    root = Path(root)
    entries, config = read_manifest(root)
    tensors = {}
    for name, (dtype, shape) in entries.items():
        arr = load_tensor(root / _file_name(name))
        if arr.shape != shape or _DTYPE_NAMES[_DTYPE_TO_CODE[arr.dtype]] != dtype:
            raise FormatError(
                f"Tensor '{name}' on disk is {arr.dtype}{arr.shape}, manifest says {dtype}{shape}")
        tensors[name] = arr
    return tensors, config
