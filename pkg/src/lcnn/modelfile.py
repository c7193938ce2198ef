"""Binary model container.

Layout: 8-byte magic ``LCNNMDL1``, a length-prefixed UTF-8 JSON header
(architecture, per-layer geometry and hyperparameters, format version), one
length-prefixed chunk per parametric layer, and a trailing CRC-32 over every
byte between the magic and the checksum.  All integers are little-endian u32,
all reals little-endian 32-bit.

Lookup-layer chunks hold the dictionary and bias, then either the P form
(values plus the frozen-zero mask as a bitset) or the ragged form (per-tap
length-prefixed index/coefficient lists).  Dense-layer chunks hold W and bias.
Save -> load -> save is bitwise lossless.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import DataError, DimensionError
from .layer import Dictionary, LcnnConvLayer, LookupTables, SparseCombiner
from .model import (
    DenseConvLayer,
    GlobalAvgPoolLayer,
    LcnnModel,
    MaxPoolLayer,
    ReluLayer,
)
from .tensor_ops import ConvGeom

MAGIC = b"LCNNMDL1"
FORMAT_VERSION = 1
FORM_P = 0
FORM_RAGGED = 1


def _geom_list(g: ConvGeom) -> list[int]:
    return [g.m, g.n, g.kh, g.kw, g.h, g.w, g.stride, g.pad]


def _geom_from(vals) -> ConvGeom:
    m, n, kh, kw, h, w, stride, pad = vals
    return ConvGeom(m=m, n=n, kh=kh, kw=kw, h=h, w=w, stride=stride, pad=pad)


def _f32_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype != np.float32:
        raise DataError("model files store 32-bit reals; cast the model to float32 first")
    return np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()


def _layer_meta(layer) -> dict:
    if isinstance(layer, LcnnConvLayer):
        return {
            "kind": "lcnn",
            "is_fc": layer.is_fc,
            "geom": _geom_list(layer.geom),
            "k": layer.dict.k,
            "mode": layer.mode,
            "frozen": layer.dict.frozen,
            "epsilon": layer.epsilon,
            "lam": layer.lam,
            "s_max": layer.s_max,
            "sparsity_mode": layer.sparsity_mode,
            "name": layer.name,
        }
    if isinstance(layer, DenseConvLayer):
        return {"kind": "dense", "is_fc": layer.is_fc, "geom": _geom_list(layer.geom),
                "name": layer.name}
    if isinstance(layer, ReluLayer):
        return {"kind": "relu"}
    if isinstance(layer, MaxPoolLayer):
        return {"kind": "pool", "size": layer.size, "stride": layer.stride, "pad": layer.pad}
    if isinstance(layer, GlobalAvgPoolLayer):
        return {"kind": "gap"}
    raise DataError(f"cannot serialize layer of type {type(layer).__name__}")


def _lcnn_chunk(layer: LcnnConvLayer) -> bytes:
    parts = [_f32_bytes(layer.dict.data), _f32_bytes(layer.bias)]
    if layer.mode == "training":
        comb = layer.combiner
        parts.append(struct.pack("<B", FORM_P))
        parts.append(_f32_bytes(comb.p))
        parts.append(np.packbits(comb.frozen_zero_mask.reshape(-1)).tobytes())
    else:
        parts.append(struct.pack("<B", FORM_RAGGED))
        for _, _, _, idx, co in layer.tables.taps():
            parts.append(struct.pack("<I", idx.size))
            parts.append(idx.astype("<u4").tobytes())
            parts.append(_f32_bytes(co))
    return b"".join(parts)


def save_model(model: LcnnModel, path: str) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "input_shape": list(model.input_shape),
        "classes": model.classes,
        "layers": [_layer_meta(l) for l in model.layers],
        "hyper": model.meta.get("hyper", {}),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = [struct.pack("<I", len(header_bytes)), header_bytes]
    for layer in model.layers:
        if isinstance(layer, LcnnConvLayer):
            chunk = _lcnn_chunk(layer)
        elif isinstance(layer, DenseConvLayer):
            chunk = _f32_bytes(layer.weights) + _f32_bytes(layer.bias)
        else:
            continue
        payload.append(struct.pack("<I", len(chunk)))
        payload.append(chunk)
    blob = b"".join(payload)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.buf):
            raise DataError("model file truncated")
        out = self.buf[self.off : self.off + count]
        self.off += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32_array(self, count: int, shape) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    @property
    def exhausted(self) -> bool:
        return self.off == len(self.buf)


def _read_lcnn_layer(meta: dict, rd: _Reader) -> LcnnConvLayer:
    geom = _geom_from(meta["geom"])
    k = meta["k"]
    d = rd.f32_array(k * geom.m, (k, geom.m))
    bias = rd.f32_array(geom.n, (geom.n,))
    form = rd.u8()
    combiner = tables = None
    if form == FORM_P:
        total = geom.n * k * geom.kh * geom.kw
        p = rd.f32_array(total, (geom.n, k, geom.kh, geom.kw))
        mask_bytes = rd.take((total + 7) // 8)
        mask = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8), count=total)
        combiner = SparseCombiner(p=p, frozen_zero_mask=mask.astype(bool).reshape(p.shape),
                                  s_max=meta["s_max"])
    elif form == FORM_RAGGED:
        indices, coeffs = [], []
        for i in range(geom.n):
            indices.append([])
            coeffs.append([])
            for r in range(geom.kh):
                indices[i].append([])
                coeffs[i].append([])
                for c in range(geom.kw):
                    length = rd.u32()
                    idx = np.frombuffer(rd.take(4 * length), dtype="<u4").astype(np.int64)
                    co = np.frombuffer(rd.take(4 * length), dtype="<f4").astype(np.float32)
                    indices[i][r].append(idx)
                    coeffs[i][r].append(co)
        # external input may carry duplicates; canonicalize (merge by summing)
        tables = LookupTables.canonical(indices, coeffs, geom.n, geom.kh, geom.kw)
        tables.validate(k)
    else:
        raise DataError(f"unknown parameter form tag {form}")
    return LcnnConvLayer(
        geom=geom, dictionary=Dictionary(d, frozen=meta["frozen"]), bias=bias,
        combiner=combiner, tables=tables, is_fc=meta["is_fc"],
        epsilon=meta["epsilon"], lam=meta["lam"], s_max=meta["s_max"],
        sparsity_mode=meta["sparsity_mode"], name=meta["name"],
    )


def load_model(path: str) -> LcnnModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a model file (bad magic)")
    blob, (stored_crc,) = raw[len(MAGIC) : -4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(blob) & 0xFFFFFFFF != stored_crc:
        raise DataError(f"{path}: checksum mismatch, file corrupt")
    rd = _Reader(blob)
    header_len = rd.u32()
    try:
        header = json.loads(rd.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {header.get('format_version')}")
    layers = []
    for meta in header["layers"]:
        kind = meta["kind"]
        if kind in ("lcnn", "dense"):
            chunk_len = rd.u32()
            chunk = _Reader(rd.take(chunk_len))
            if kind == "lcnn":
                layers.append(_read_lcnn_layer(meta, chunk))
            else:
                geom = _geom_from(meta["geom"])
                w = chunk.f32_array(geom.n * geom.m * geom.kh * geom.kw,
                                    (geom.n, geom.m, geom.kh, geom.kw))
                bias = chunk.f32_array(geom.n, (geom.n,))
                layers.append(DenseConvLayer(geom, w, bias, is_fc=meta["is_fc"],
                                             name=meta["name"]))
            if not chunk.exhausted:
                raise DataError(f"{path}: layer chunk has trailing bytes")
        elif kind == "relu":
            layers.append(ReluLayer())
        elif kind == "pool":
            layers.append(MaxPoolLayer(size=meta["size"], stride=meta["stride"],
                                       pad=meta["pad"]))
        elif kind == "gap":
            layers.append(GlobalAvgPoolLayer())
        else:
            raise DataError(f"{path}: unknown layer kind {kind!r}")
    if not rd.exhausted:
        raise DataError(f"{path}: trailing bytes after last chunk")
    model = LcnnModel(layers, tuple(header["input_shape"]), header["classes"],
                      arch=header["arch"], meta={"hyper": header.get("hyper", {})})
    return model
