"""Binary record files ("ICRE" checkpoints, "ICRT" raster bundles).

Layout (all integers little-endian)::

    magic        4 bytes
    version      u16
    count        u32
    count x record:
        name_len u32, name (UTF-8)
        dtype    u8   (0 = raw bytes, 1 = float64, 2 = float32, 3 = int64)
        rank     u8
        extents  rank x u64
        payload  product(extents) * itemsize bytes
"""
from __future__ import annotations

import json
import mmap
import os
import struct

import numpy as np

from icare.errors import FormatError

CHECKPOINT_MAGIC = b"ICRE"
RASTER_MAGIC = b"ICRT"
FORMAT_VERSION = 1

_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float64): 1, np.dtype(np.float32): 2, np.dtype(np.int64): 3}
_DTYPES = {code: dt.newbyteorder("<") for dt, code in _CODES.items()}


def _encode_record(name, array):
    array = np.asarray(array)
    if array.dtype.newbyteorder("=") not in _CODES:
        if np.issubdtype(array.dtype, np.integer):
            array = array.astype(np.int64)
        else:
            raise FormatError(f"record {name!r}: unsupported dtype {array.dtype}")
    code = _CODES[np.dtype(array.dtype.newbyteorder("="))]
    raw_name = name.encode("utf-8")
    header = struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


def encode_records(records, magic=CHECKPOINT_MAGIC):
    parts = [magic, struct.pack("<HI", FORMAT_VERSION, len(records))]
    for name, array in records.items():
        parts.append(_encode_record(name, array))
    return b"".join(parts)


def decode_records(blob, magic=CHECKPOINT_MAGIC):
    if bytes(blob[:4]) != magic:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    offset = 10
    records = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = bytes(blob[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            code, rank = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(blob):
                raise FormatError(f"record {name!r} is truncated")
            arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
            records[name] = arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
            del arr
            offset += nbytes
    except (struct.error, KeyError) as exc:
        raise FormatError(f"corrupt record stream: {exc}") from exc
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after {count} records")
    return records


def save_records(path, records, magic=CHECKPOINT_MAGIC):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_records(records, magic))
    os.replace(tmp, path)


def load_records(path, magic=CHECKPOINT_MAGIC):
    with open(path, "rb") as fh:
        if os.fstat(fh.fileno()).st_size == 0:
            raise FormatError(f"{path}: empty file")
        with mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ) as buf:
            try:
                return decode_records(buf, magic)
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}") from exc


def json_record(obj):
    """Pack a JSON-serialisable descriptor as a raw-bytes record."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def read_json_record(array):
    return json.loads(np.asarray(array, dtype=np.uint8).tobytes().decode("utf-8"))


def save_checkpoint(path, module, arch, optimizer=None, extra=None):
    """Write a module's parameters/buffers, its architecture descriptor and optional Adam state."""
    records = {"__arch__": json_record(arch)}
    records.update(module.state_dict())
    if optimizer is not None:
        records.update(optimizer.state_records())
    if extra:
        records.update(extra)
    save_records(path, records)


def load_checkpoint(path):
    records = load_records(path)
    if "__arch__" not in records:
        raise FormatError(f"{path}: missing architecture descriptor")
    arch = read_json_record(records.pop("__arch__"))
    return arch, records


class RecordWriter:
    """Stream records to disk one at a time (large raster bundles)."""

    def __init__(self, path, count, magic=RASTER_MAGIC):
        self.path, self.count, self.written = path, count, 0
        self._tmp = f"{path}.tmp"
        self._fh = open(self._tmp, "wb")
        self._fh.write(magic + struct.pack("<HI", FORMAT_VERSION, count))

    def write(self, name, array):
        if self.written >= self.count:
            raise FormatError(f"{self.path}: more than the declared {self.count} records")
        self._fh.write(_encode_record(name, array))
        self.written += 1

    def close(self):
        self._fh.close()
        if self.written != self.count:
            os.remove(self._tmp)
            raise FormatError(f"{self.path}: wrote {self.written} of {self.count} declared records")
        os.replace(self._tmp, self.path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
            os.remove(self._tmp)
