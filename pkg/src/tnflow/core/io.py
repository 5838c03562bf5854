"""Binary dump/load of states, operators and raw tensor lists.

Layout (all integers little-endian ``uint32``): magic ``b"TNFL"``, version,
kind byte (``S`` state, ``O`` operator, ``T`` tensor list), ``n``, the two
entries of ``axis_split``, the number of bonds followed by the bonds, the
number of shape entries per core followed by all core shapes, then the core
data as little-endian complex128 in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

from .operator import TensorTrainOperator
from .state import TensorTrainState

MAGIC = b"TNFL"
VERSION = 1
_U32 = struct.Struct("<I")
_DT = np.dtype("<c16")


class FormatError(ValueError):
    pass


def _pack_u32(*vals) -> bytes:
    return b"".join(_U32.pack(int(v)) for v in vals)


def _encode(kind: bytes, cores, axis_split, bonds) -> bytes:
    ndim = cores[0].ndim if cores else 0
    head = [MAGIC, _pack_u32(VERSION), kind, _pack_u32(len(cores), *axis_split),
            _pack_u32(len(bonds), *bonds), _pack_u32(ndim)]
    for c in cores:
        if c.ndim != ndim:
            raise ValueError("all tensors must have the same rank")
        head.append(_pack_u32(*c.shape))
    body = [np.ascontiguousarray(c, dtype=_DT).tobytes() for c in cores]
    return b"".join(head + body)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos:self.pos + k]
        self.pos += k
        return out

    def u32(self, count: int = 1):
        vals = [_U32.unpack(self.take(4))[0] for _ in range(count)]
        return vals if count != 1 else vals[0]


def _decode(data: bytes):
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    kind = r.take(1)
    n = r.u32()
    split = tuple(r.u32(2))
    nb = r.u32()
    bonds = r.u32(nb) if nb != 1 else [r.u32()]
    ndim = r.u32()
    shapes = [tuple(r.u32(ndim)) if ndim != 1 else (r.u32(),) for _ in range(n)]
    cores = []
    for shape in shapes:
        size = int(np.prod(shape)) * _DT.itemsize
        cores.append(np.frombuffer(r.take(size), dtype=_DT).reshape(shape).astype(complex))
    if r.pos != len(data):
        raise FormatError("trailing bytes")
    return kind, split, list(bonds), cores


def dumps(obj) -> bytes:
    """Serialize a state, an operator, or a list of arrays."""
    if isinstance(obj, TensorTrainState):
        cores = list(obj.cores)
        cores[0] = cores[0] * obj.prefactor
        return _encode(b"S", cores, obj.axis_split, obj.bonds)
    if isinstance(obj, TensorTrainOperator):
        return _encode(b"O", list(obj.cores), (obj.n, 0), obj.bonds)
    arrays = [np.asarray(a) for a in obj]
    return _encode(b"T", arrays, (len(arrays), 0), [])


def loads(data: bytes):
    kind, split, bonds, cores = _decode(data)
    if kind == b"S":
        s = TensorTrainState(tuple(cores), 1.0, split)
        if s.bonds != bonds:
            raise FormatError("bond list does not match the cores")
        return s
    if kind == b"O":
        op = TensorTrainOperator(tuple(cores))
        if op.bonds != bonds:
            raise FormatError("bond list does not match the cores")
        return op
    if kind == b"T":
        return cores
    raise FormatError(f"unknown kind {kind!r}")


def dump(obj, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
