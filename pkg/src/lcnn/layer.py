"""Lookup-based convolutional layer.

A layer never stores its weight stack.  It stores a small shared dictionary
``D`` (k rows of length m) and, per output filter, either

* a sparse combiner tensor ``P`` of shape (k, kh, kw) -- the trainable form, or
* ragged lookup tables ``(I, C)`` -- the inference form, holding the indices
  and coefficients of the nonzero entries of ``P``.

Both forms drive the same two-stage forward pass: precompute
``S = conv1x1_all(X, D)`` once, then either convolve ``S`` with ``P``
(training form) or gather-and-scale channels of ``S`` (inference form).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, DimensionError, ModeError
from .tensor_ops import (
    DTYPE,
    ConvGeom,
    _col2im,
    _split_batch,
    check_tensor3,
    conv1x1_all_batch,
    conv2d_batch,
    pad2d,
)


@dataclass
class Dictionary:
    """The k x m matrix of shared basis vectors of one layer."""

    data: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DimensionError(f"dictionary must be a (k, m) matrix with k >= 1, got {self.data.shape}")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


@dataclass
class SparseCombiner:
    """Training-form parameters: per-filter sparse tensors P of shape (k, kh, kw).

    Stored stacked as one (n, k, kh, kw) array; zeros are exact zeros.
    ``frozen_zero_mask`` marks entries pinned to zero permanently
    (threshold-mode training); ``s_max`` caps column support in fixed-s mode.
    """

    p: np.ndarray
    frozen_zero_mask: np.ndarray = None
    s_max: int | None = None

    def __post_init__(self):
        if self.p.ndim != 4:
            raise DimensionError(f"combiner must be (n, k, kh, kw), got {self.p.shape}")
        if self.frozen_zero_mask is None:
            self.frozen_zero_mask = np.zeros(self.p.shape, dtype=bool)
        if self.frozen_zero_mask.shape != self.p.shape:
            raise DimensionError("frozen_zero_mask shape must match p")

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def k(self) -> int:
        return self.p.shape[1]

    def column_l0(self) -> np.ndarray:
        """Support size of every column P_i[:, r, c]; shape (n, kh, kw)."""
        return (self.p != 0).sum(axis=1)

    def nnz(self) -> int:
        return int((self.p != 0).sum())


class LookupTables:
    """Inference-form parameters: ragged per-filter, per-tap index/coefficient lists.

    ``indices[i][r][c]`` is a strictly increasing int array of dictionary rows,
    ``coeffs[i][r][c]`` the matching nonzero float coefficients.
    """

    def __init__(self, indices, coeffs, n: int, kh: int, kw: int):
        self.indices = indices
        self.coeffs = coeffs
        self.n = n
        self.kh = kh
        self.kw = kw

    @classmethod
    def empty(cls, n: int, kh: int, kw: int, dtype=DTYPE) -> "LookupTables":
        idx = [[[np.zeros(0, dtype=np.int32) for _ in range(kw)] for _ in range(kh)] for _ in range(n)]
        co = [[[np.zeros(0, dtype=dtype) for _ in range(kw)] for _ in range(kh)] for _ in range(n)]
        return cls(idx, co, n, kh, kw)

    @classmethod
    def canonical(cls, indices, coeffs, n: int, kh: int, kw: int, dtype=DTYPE) -> "LookupTables":
        """Build tables from possibly messy input: duplicate indices are merged
        by summing their coefficients, exact zeros dropped, indices sorted."""
        out = cls.empty(n, kh, kw, dtype=dtype)
        for i in range(n):
            for r in range(kh):
                for c in range(kw):
                    idx = np.asarray(indices[i][r][c], dtype=np.int64)
                    co = np.asarray(coeffs[i][r][c], dtype=dtype)
                    if idx.size != co.size:
                        raise DimensionError("index and coefficient lists differ in length")
                    if idx.size:
                        uniq, inv = np.unique(idx, return_inverse=True)
                        merged = np.zeros(uniq.size, dtype=np.float64)
                        np.add.at(merged, inv, co.astype(np.float64))
                        merged = merged.astype(dtype)
                        keep = merged != 0
                        out.indices[i][r][c] = uniq[keep].astype(np.int32)
                        out.coeffs[i][r][c] = merged[keep]
        return out

    def taps(self):
        for i in range(self.n):
            for r in range(self.kh):
                for c in range(self.kw):
                    yield i, r, c, self.indices[i][r][c], self.coeffs[i][r][c]

    def total_components(self) -> int:
        return sum(idx.size for _, _, _, idx, _ in self.taps())

    def mean_s(self) -> float:
        return self.total_components() / (self.n * self.kh * self.kw)

    def max_index(self) -> int:
        mx = -1
        for _, _, _, idx, _ in self.taps():
            if idx.size:
                mx = max(mx, int(idx.max()))
        return mx

    def validate(self, k: int) -> None:
        for i, r, c, idx, co in self.taps():
            if idx.size != co.size:
                raise DimensionError(f"ragged lists at ({i},{r},{c}) differ in length")
            if idx.size:
                if int(idx.max()) >= k or int(idx.min()) < 0:
                    raise BoundsError(f"lookup index out of range at tap ({i},{r},{c})")
                if np.any(np.diff(idx) <= 0):
                    raise DimensionError(f"indices not strictly increasing at tap ({i},{r},{c})")
                if np.any(co == 0):
                    raise DimensionError(f"zero coefficient stored at tap ({i},{r},{c})")

    def astype(self, dtype) -> "LookupTables":
        out = LookupTables.empty(self.n, self.kh, self.kw, dtype=dtype)
        for i, r, c, idx, co in self.taps():
            out.indices[i][r][c] = idx.copy()
            out.coeffs[i][r][c] = co.astype(dtype)
        return out


def p_to_ic(combiner: SparseCombiner) -> LookupTables:
    """Read the nonzero structure of P off into canonical lookup tables."""
    n, k, kh, kw = combiner.p.shape
    tables = LookupTables.empty(n, kh, kw, dtype=combiner.p.dtype)
    for i in range(n):
        for r in range(kh):
            for c in range(kw):
                col = combiner.p[i, :, r, c]
                j = np.flatnonzero(col)
                if j.size:
                    tables.indices[i][r][c] = j.astype(np.int32)
                    tables.coeffs[i][r][c] = col[j].copy()
    return tables


def ic_to_p(tables: LookupTables, k: int) -> SparseCombiner:
    """Scatter lookup tables back into an explicit sparse tensor P."""
    dtype = DTYPE
    for _, _, _, _, co in tables.taps():
        if co.size:
            dtype = co.dtype
            break
    p = np.zeros((tables.n, k, tables.kh, tables.kw), dtype=dtype)
    for i, r, c, idx, co in tables.taps():
        if idx.size:
            if int(idx.max()) >= k:
                raise BoundsError(f"lookup index {int(idx.max())} >= dictionary size {k}")
            p[i, idx, r, c] = co
    return SparseCombiner(p=p)


def reconstruct_weights(dictionary: Dictionary, tables: LookupTables, geom: ConvGeom) -> np.ndarray:
    """Materialize the dense (n, m, kh, kw) weight stack from dictionary + tables.

    Each weight-filter vector W[i, :, r, c] is the linear combination of the
    dictionary rows named by the tap's index list; empty taps give zero vectors.
    """
    w = np.zeros((geom.n, geom.m, geom.kh, geom.kw), dtype=dictionary.data.dtype)
    for i, r, c, idx, co in tables.taps():
        if idx.size:
            if int(idx.max()) >= dictionary.k:
                raise BoundsError(f"lookup index {int(idx.max())} >= dictionary size {dictionary.k}")
            w[i, :, r, c] = co @ dictionary.data[idx, :]
    return w


def fc_as_conv(in_features: int, out_features: int) -> ConvGeom:
    """Geometry of a fully connected layer viewed as a 1x1 convolution over m x 1 x 1."""
    return ConvGeom(m=in_features, n=out_features, kh=1, kw=1, h=1, w=1, stride=1, pad=0)


TRAINING = "training"
INFERENCE = "inference"


class LcnnConvLayer:
    """One lookup-based convolutional (or fully connected) layer."""

    def __init__(self, geom: ConvGeom, dictionary: Dictionary, bias: np.ndarray | None = None,
                 combiner: SparseCombiner | None = None, tables: LookupTables | None = None,
                 is_fc: bool = False, epsilon: float = 0.0, lam: float = 0.0,
                 s_max: int | None = None, sparsity_mode: str = "threshold",
                 name: str | None = None):
        if dictionary.m != geom.m:
            raise DimensionError(f"dictionary width {dictionary.m} != layer input channels {geom.m}")
        if (combiner is None) == (tables is None):
            raise ModeError("exactly one of combiner (training) or tables (inference) must be set")
        if dictionary.k >= geom.n * geom.kh * geom.kw:
            warnings.warn(
                f"dictionary size k={dictionary.k} is not smaller than the filter-vector "
                f"count n*kh*kw={geom.n * geom.kh * geom.kw}; no compression at this size",
                stacklevel=2,
            )
        if combiner is not None and combiner.p.shape != (geom.n, dictionary.k, geom.kh, geom.kw):
            raise DimensionError(f"combiner shape {combiner.p.shape} does not match layer")
        if tables is not None:
            tables.validate(dictionary.k)
        self.geom = geom
        self.dict = dictionary
        self.bias = np.zeros(geom.n, dtype=dictionary.data.dtype) if bias is None else bias
        self.combiner = combiner
        self.tables = tables
        self.is_fc = is_fc
        self.epsilon = float(epsilon)
        self.lam = float(lam)
        self.s_max = s_max
        self.sparsity_mode = sparsity_mode
        self.name = name

    # -- mode ----------------------------------------------------------------

    @property
    def mode(self) -> str:
        return TRAINING if self.combiner is not None else INFERENCE

    def to_inference(self) -> None:
        if self.mode != TRAINING:
            raise ModeError("layer is already in inference mode")
        self.tables = p_to_ic(self.combiner)
        self.combiner = None

    def to_training(self) -> None:
        if self.mode != INFERENCE:
            raise ModeError("layer is already in training mode")
        self.combiner = ic_to_p(self.tables, self.dict.k)
        if self.sparsity_mode == "fixed_s":
            self.combiner.s_max = self.s_max
        self.tables = None

    @property
    def sgeom(self) -> ConvGeom:
        """Geometry of the S * P convolution (k input channels)."""
        g = self.geom
        return ConvGeom(m=self.dict.k, n=g.n, kh=g.kh, kw=g.kw, h=g.h, w=g.w,
                        stride=g.stride, pad=g.pad)

    def mean_s(self) -> float:
        if self.tables is not None:
            return self.tables.mean_s()
        g = self.geom
        return self.combiner.nnz() / (g.n * g.kh * g.kw)

    # -- forward -------------------------------------------------------------

    def _flatten_fc(self, xb: np.ndarray) -> np.ndarray:
        if not self.is_fc:
            return xb
        b = xb.shape[0]
        feat = int(np.prod(xb.shape[1:]))
        if feat != self.geom.m:
            raise DimensionError(f"fc layer expects {self.geom.m} features, got {feat}")
        return xb.reshape(b, feat, 1, 1)

    def forward_batch(self, xb: np.ndarray, counter=None) -> np.ndarray:
        xb = self._flatten_fc(xb)
        if self.mode == TRAINING:
            return _sparse_forward_batch(xb, self, counter)
        return _lookup_forward_batch(xb, self, counter)

    # -- training-path cache/backward ----------------------------------------

    def forward_train(self, xb: np.ndarray):
        if self.mode != TRAINING:
            raise ModeError("forward_train requires training mode")
        orig_shape = xb.shape
        xb = self._flatten_fc(xb)
        s = conv1x1_all_batch(xb, self.dict.data)
        cols: list = []
        y = conv2d_batch(s, self.combiner.p, self.bias, self.sgeom, cols_out=cols)
        cache = {"x": xb, "s": s, "cols": cols[0], "orig_shape": orig_shape}
        return y, cache

    def backward(self, dy: np.ndarray, cache):
        g = self.sgeom
        b = dy.shape[0]
        dy_flat = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(
            g.n, b * g.h_out * g.w_out)
        dbias = dy.sum(axis=(0, 2, 3))
        dp = (dy_flat @ cache["cols"].T).reshape(self.combiner.p.shape)
        ds_cols = self.combiner.p.reshape(g.n, -1).T @ dy_flat
        ds = _col2im(ds_cols, b, g, dy.dtype)
        x = cache["x"]
        _, m, h, w = x.shape
        dd = np.tensordot(ds, x, axes=([0, 2, 3], [0, 2, 3]))
        ds_flat = np.ascontiguousarray(ds.transpose(1, 0, 2, 3)).reshape(
            self.dict.k, b * h * w)
        dx = _split_batch(self.dict.data.T @ ds_flat, b, m, h, w)
        if self.is_fc:
            dx = dx.reshape(cache["orig_shape"])
        return dx, {"dp": dp, "dd": dd, "dbias": dbias}

    def astype(self, dtype) -> "LcnnConvLayer":
        return LcnnConvLayer(
            geom=self.geom,
            dictionary=Dictionary(self.dict.data.astype(dtype), frozen=self.dict.frozen),
            bias=self.bias.astype(dtype),
            combiner=None if self.combiner is None else SparseCombiner(
                p=self.combiner.p.astype(dtype),
                frozen_zero_mask=self.combiner.frozen_zero_mask.copy(),
                s_max=self.combiner.s_max,
            ),
            tables=None if self.tables is None else self.tables.astype(dtype),
            is_fc=self.is_fc, epsilon=self.epsilon, lam=self.lam,
            s_max=self.s_max, sparsity_mode=self.sparsity_mode, name=self.name,
        )


def _lookup_forward_batch(xb: np.ndarray, layer: LcnnConvLayer, counter=None) -> np.ndarray:
    """Two-stage inference pass: one dictionary precompute, then gather + scale."""
    g = layer.geom
    if xb.shape[1] != g.m or xb.shape[2] != g.h or xb.shape[3] != g.w:
        raise DimensionError(f"input shape {xb.shape} does not match layer geometry")
    b = xb.shape[0]
    s = conv1x1_all_batch(xb, layer.dict.data, counter)
    sp = pad2d(s, g.pad)
    y = np.empty((b, g.n, g.h_out, g.w_out), dtype=xb.dtype)
    y[:] = layer.bias[None, :, None, None]
    if counter is not None:
        counter.bias_adds += b * g.n * g.h_out * g.w_out
    st = g.stride
    rows = st * (g.h_out - 1) + 1
    cols = st * (g.w_out - 1) + 1
    for i, r, c, idx, co in layer.tables.taps():
        if idx.size == 0:
            continue
        win = sp[:, idx, r : r + rows : st, c : c + cols : st]
        y[:, i] += np.tensordot(co, win, axes=([0], [1]))
        if counter is not None:
            ops = b * idx.size * g.h_out * g.w_out
            counter.scale_mults += ops
            counter.scale_adds += ops
            counter.lookups += ops
    return y


def _sparse_forward_batch(xb: np.ndarray, layer: LcnnConvLayer, counter=None) -> np.ndarray:
    """Training-path pass: precompute S, then a standard convolution with P."""
    s = conv1x1_all_batch(xb, layer.dict.data, counter)
    return conv2d_batch(s, layer.combiner.p, layer.bias, layer.sgeom, counter=counter)


def forward_lookup(x: np.ndarray, layer: LcnnConvLayer, counter=None) -> np.ndarray:
    """Single-sample inference forward; requires the layer's lookup tables."""
    if layer.mode != INFERENCE:
        raise ModeError("forward_lookup requires inference mode (convert P first)")
    check_tensor3(x)
    return _lookup_forward_batch(layer._flatten_fc(x[None]), layer, counter)[0]


def forward_sparse(x: np.ndarray, layer: LcnnConvLayer, counter=None) -> np.ndarray:
    """Single-sample training-path forward; requires the sparse combiner P."""
    if layer.mode != TRAINING:
        raise ModeError("forward_sparse requires training mode")
    check_tensor3(x)
    return _sparse_forward_batch(layer._flatten_fc(x[None]), layer, counter)[0]
