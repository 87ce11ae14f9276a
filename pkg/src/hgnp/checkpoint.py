"""Binary checkpoint format for masked networks.

Layout (all integers little-endian)::

    magic            4 bytes  b"HGNP"
    version          u16
    input ndim       u8, then u32 per input dimension
    original params  u64      parameter count before any pruning
    layer count      u16
    per layer        u8 kind code followed by kind-specific fields
        dense        u32 fan_in, u32 fan_out, i32 group
        conv2d       u32 fan_in, u32 fan_out, u16 kh, u16 kw, u8 padding, u8 pool, i32 group
        relu/flatten (nothing)
        residual_add u32 source
    group names      u16 count, then per name u16 length + utf-8 bytes
    neuron count     u32, then ceil(count/8) bytes of mask bits, LSB first
    parameter count  u64, then that many float64 values, layer order, W then b
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import LayerSpec, MaskedNetwork, infer_shapes

MAGIC = b"HGNP"
VERSION = 1
_KIND_CODES = {"dense": 1, "conv2d": 2, "relu": 3, "flatten": 4, "residual_add": 5}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class CheckpointError(ValueError):
    pass


def to_bytes(net: MaskedNetwork) -> bytes:
    groups = sorted({s.group_id for s in net.layers if s.group_id is not None})
    gidx = {g: k for k, g in enumerate(groups)}
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    out += struct.pack("<B", len(net.input_shape))
    out += struct.pack(f"<{len(net.input_shape)}I", *net.input_shape)
    out += struct.pack("<Q", net.original_param_count)
    out += struct.pack("<H", len(net.layers))
    for s in net.layers:
        out += struct.pack("<B", _KIND_CODES[s.kind])
        g = gidx.get(s.group_id, -1)
        if s.kind == "dense":
            out += struct.pack("<IIi", s.fan_in, s.fan_out, g)
        elif s.kind == "conv2d":
            out += struct.pack(
                "<IIHHBBi", s.fan_in, s.fan_out, s.kernel[0], s.kernel[1],
                0 if s.padding == "same" else 1, int(s.pool), g,
            )
        elif s.kind == "residual_add":
            out += struct.pack("<I", s.source)
    out += struct.pack("<H", len(groups))
    for g in groups:
        raw = g.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    bits = net.mask_b
    out += struct.pack("<I", bits.size)
    out += np.packbits(bits, bitorder="little").tobytes()
    flat = net.flat_params()
    out += struct.pack("<Q", flat.size)
    out += flat.astype("<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {size} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {size} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk


def from_bytes(data: bytes) -> MaskedNetwork:
    r = _Reader(data)
    if r.raw(4) != MAGIC:
        raise CheckpointError("bad magic: not an HGNP checkpoint")
    (version,) = r.take("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (ndim,) = r.take("<B")
    input_shape = r.take(f"<{ndim}I")
    (original,) = r.take("<Q")
    (count,) = r.take("<H")
    raw_layers = []
    for _ in range(count):
        (code,) = r.take("<B")
        if code not in _CODE_KINDS:
            raise CheckpointError(f"unknown layer code {code} at offset {r.pos - 1}")
        kind = _CODE_KINDS[code]
        if kind == "dense":
            fi, fo, g = r.take("<IIi")
            raw_layers.append((LayerSpec("dense", fi, fo), g))
        elif kind == "conv2d":
            fi, fo, kh, kw, pad, pool, g = r.take("<IIHHBBi")
            spec = LayerSpec("conv2d", fi, fo, (kh, kw), "same" if pad == 0 else "valid", bool(pool))
            raw_layers.append((spec, g))
        elif kind == "residual_add":
            (src,) = r.take("<I")
            raw_layers.append((LayerSpec("residual_add", source=src), -1))
        else:
            raw_layers.append((LayerSpec(kind), -1))
    (ngroups,) = r.take("<H")
    names = []
    for _ in range(ngroups):
        (length,) = r.take("<H")
        names.append(r.raw(length).decode("utf-8"))
    layers = []
    for spec, g in raw_layers:
        if g >= 0:
            if g >= len(names):
                raise CheckpointError(f"group index {g} out of range")
            spec = LayerSpec(**{**spec.__dict__, "group_id": names[g]})
        layers.append(spec)
    try:
        infer_shapes(layers, tuple(input_shape))
    except ValueError as exc:
        raise CheckpointError(f"invalid layer table: {exc}") from exc
    (nbits,) = r.take("<I")
    bits = np.unpackbits(np.frombuffer(r.raw((nbits + 7) // 8), dtype=np.uint8), bitorder="little")
    bits = bits[:nbits].astype(bool)
    (nparams,) = r.take("<Q")
    flat = np.frombuffer(r.raw(8 * nparams), dtype="<f8").astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"trailing bytes after offset {r.pos}")

    params = [i for i, s in enumerate(layers) if s.parametric]
    weights: list = [None] * len(layers)
    biases: list = [None] * len(layers)
    masks: list = [None] * len(layers)
    k = b = 0
    for i in params:
        s = layers[i]
        shape = (s.fan_out, s.fan_in) if s.kind == "dense" else (s.fan_out, s.fan_in, *s.kernel)
        n = int(np.prod(shape))
        if k + n + s.fan_out > flat.size:
            raise CheckpointError("parameter block shorter than the layer table implies")
        weights[i] = flat[k : k + n].reshape(shape).copy()
        k += n
        biases[i] = flat[k : k + s.fan_out].copy()
        k += s.fan_out
        if i != params[-1]:
            if b + s.fan_out > nbits:
                raise CheckpointError("mask bitset shorter than the neuron count")
            masks[i] = bits[b : b + s.fan_out].copy()
            b += s.fan_out
    if k != flat.size or b != nbits:
        raise CheckpointError("parameter or mask count does not match the layer table")
    return MaskedNetwork(layers, tuple(input_shape), weights, biases, masks, int(original))


def save(net: MaskedNetwork, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path: str | Path) -> MaskedNetwork:
    return from_bytes(Path(path).read_bytes())
