"""Dense tensor primitives: shifts, reference convolutions, dictionary precompute.

Layout conventions used everywhere in this package:

* activations are ``(channels, height, width)`` float arrays; a batch adds a
  leading axis ``(B, channels, height, width)``,
* weight stacks are ``(filters, channels, kh, kw)``,
* convolution is cross-correlation (no kernel flip):
  ``Y[i, y, x] = sum_{ch,r,c} X[ch, y*stride + r - pad, x*stride + c - pad] * W[i, ch, r, c] + b[i]``
  with out-of-bounds reads treated as zero.

All public operations leave their inputs unmodified.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UnsupportedGeometryError, BoundsError

DTYPE = np.float32


@dataclass(frozen=True)
class ConvGeom:
    """Geometry of one convolution: channel counts, kernel, stride/pad, input size.

    Output dims are derived and must divide exactly; a geometry that would
    need floor division is rejected at construction.
    """

    m: int
    n: int
    kh: int
    kw: int
    h: int
    w: int
    stride: int = 1
    pad: int = 0
    h_out: int = field(init=False)
    w_out: int = field(init=False)

    def __post_init__(self):
        fields = (self.m, self.n, self.kh, self.kw, self.h, self.w, self.stride)
        if min(fields) < 1:
            raise DimensionError(f"geometry counts must be positive, got "
                                 f"m,n,kh,kw,h,w,stride = {fields}")
        if self.pad < 0:
            raise DimensionError(f"pad must be nonnegative, got {self.pad}")
        for name, size, k in (("h", self.h, self.kh), ("w", self.w, self.kw)):
            span = size + 2 * self.pad - k
            if span < 0 or span % self.stride != 0:
                raise DimensionError(
                    f"({name} + 2*pad - k{name}) = {span} is not a nonnegative "
                    f"multiple of stride {self.stride}"
                )
        object.__setattr__(self, "h_out", (self.h + 2 * self.pad - self.kh) // self.stride + 1)
        object.__setattr__(self, "w_out", (self.w + 2 * self.pad - self.kw) // self.stride + 1)
        if self.h_out < 1 or self.w_out < 1:
            raise DimensionError(f"derived output dims must be >= 1, got "
                                 f"({self.h_out}, {self.w_out})")


def check_tensor3(x: np.ndarray, channels: int | None = None) -> np.ndarray:
    if x.ndim != 3:
        raise DimensionError(f"expected (channels, h, w) array, got shape {x.shape}")
    if channels is not None and x.shape[0] != channels:
        raise DimensionError(f"expected {channels} channels, got {x.shape[0]}")
    return x


def shift2d(t: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Shift every channel of `t` by dr rows / dc columns, zero-filling.

    out[ch, y, x] = t[ch, y - dr, x - dc] where in bounds, else 0.  A shift
    larger than the tensor yields an all-zero tensor of the same shape.
    """
    check_tensor3(t)
    ch, h, w = t.shape
    out = np.zeros_like(t)
    ys = slice(max(dr, 0), min(h + dr, h))
    xs = slice(max(dc, 0), min(w + dc, w))
    if ys.start < ys.stop and xs.start < xs.stop:
        out[:, ys, xs] = t[:, ys.start - dr : ys.stop - dr, xs.start - dc : xs.stop - dc]
    return out


def tap_shift_offsets(r: int, c: int, kh: int, kw: int) -> tuple[int, int]:
    """(dr, dc) such that a kernel tap (r, c) under "same" padding acts as shift2d.

    Convolving with a one-hot kernel at (r, c) and pad (kh//2, kw//2) moves
    content by exactly these offsets.
    """
    return kh // 2 - r, kw // 2 - c


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing (spatial) axes of a 3d or 4d array."""
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width)


def _im2col(xb: np.ndarray, geom: ConvGeom) -> np.ndarray:
    """Gather conv input windows: (B, m, h, w) -> (m*kh*kw, B*h_out*w_out).

    Row index flattens (ch, r, c) in C order, matching W.reshape(n, -1); the
    batch axis is folded into the columns so the convolution is one large
    matrix product.  Gathered tap-by-tap: kh*kw strided block copies beat one
    generic multi-axis copy by a wide margin.
    """
    b = xb.shape[0]
    s = geom.stride
    xpt = pad2d(xb, geom.pad).transpose(1, 0, 2, 3)
    rows = s * (geom.h_out - 1) + 1
    cols_span = s * (geom.w_out - 1) + 1
    out = np.empty((geom.m, geom.kh, geom.kw, b, geom.h_out, geom.w_out), dtype=xb.dtype)
    for r in range(geom.kh):
        for c in range(geom.kw):
            out[:, r, c] = xpt[:, :, r : r + rows : s, c : c + cols_span : s]
    return out.reshape(geom.m * geom.kh * geom.kw, b * geom.h_out * geom.w_out)


def _col2im(cols: np.ndarray, b: int, geom: ConvGeom, dtype) -> np.ndarray:
    """Scatter-add im2col columns back to input shape (adjoint of _im2col)."""
    hp, wp = geom.h + 2 * geom.pad, geom.w + 2 * geom.pad
    xpt = np.zeros((geom.m, b, hp, wp), dtype=dtype)
    cols = cols.reshape(geom.m, geom.kh, geom.kw, b, geom.h_out, geom.w_out)
    s = geom.stride
    for r in range(geom.kh):
        for c in range(geom.kw):
            xpt[:, :, r : r + s * geom.h_out : s, c : c + s * geom.w_out : s] += cols[:, r, c]
    xp = np.ascontiguousarray(xpt.transpose(1, 0, 2, 3))
    if geom.pad == 0:
        return xp
    return xp[:, :, geom.pad : geom.pad + geom.h, geom.pad : geom.pad + geom.w]


def _split_batch(flat: np.ndarray, b: int, n: int, h_out: int, w_out: int) -> np.ndarray:
    """(n, B*h_out*w_out) -> (B, n, h_out, w_out)."""
    return np.ascontiguousarray(flat.reshape(n, b, h_out, w_out).transpose(1, 0, 2, 3))


def conv2d_batch(xb: np.ndarray, w: np.ndarray, bias: np.ndarray | None, geom: ConvGeom,
                 counter=None, cols_out: list | None = None) -> np.ndarray:
    """Batched cross-correlation via im2col + a single matrix product.

    `cols_out`, when given, receives the im2col matrix for reuse in backward.
    """
    if xb.ndim != 4 or xb.shape[1] != geom.m:
        raise DimensionError(f"input shape {xb.shape} does not match geometry m={geom.m}")
    if xb.shape[2] != geom.h or xb.shape[3] != geom.w:
        raise DimensionError(f"input spatial {xb.shape[2:]} != geometry ({geom.h}, {geom.w})")
    if w.shape != (geom.n, geom.m, geom.kh, geom.kw):
        raise DimensionError(f"weight shape {w.shape} does not match geometry")
    b = xb.shape[0]
    cols = _im2col(xb, geom)
    if cols_out is not None:
        cols_out.append(cols)
    y = _split_batch(w.reshape(geom.n, -1) @ cols, b, geom.n, geom.h_out, geom.w_out)
    if bias is not None:
        if bias.shape != (geom.n,):
            raise DimensionError(f"bias shape {bias.shape} != ({geom.n},)")
        y += bias[None, :, None, None]
    if counter is not None:
        macs = b * geom.n * geom.m * geom.kh * geom.kw * geom.h_out * geom.w_out
        counter.conv_mults += macs
        counter.conv_adds += macs
        if bias is not None:
            counter.bias_adds += b * geom.n * geom.h_out * geom.w_out
    return y


def conv2d_dense(x: np.ndarray, w: np.ndarray, bias: np.ndarray, geom: ConvGeom,
                 counter=None) -> np.ndarray:
    """Single-sample dense convolution: (m, h, w) -> (n, h_out, w_out)."""
    check_tensor3(x, geom.m)
    return conv2d_batch(x[None], w, np.asarray(bias), geom, counter=counter)[0]


def conv1x1_all(x: np.ndarray, d: np.ndarray, counter=None) -> np.ndarray:
    """Convolve `x` with every row of the matrix `d` as a 1x1 filter.

    A single (k, m) @ (m, h*w) matrix product; the per-layer precompute of
    the lookup path.
    """
    check_tensor3(x)
    k, m = d.shape
    if x.shape[0] != m:
        raise DimensionError(f"dictionary width {m} != input channels {x.shape[0]}")
    _, h, w = x.shape
    s = (d @ x.reshape(m, h * w)).reshape(k, h, w)
    if counter is not None:
        counter.precompute_mults += k * m * h * w
        counter.precompute_adds += k * m * h * w
    return s


def conv1x1_all_batch(xb: np.ndarray, d: np.ndarray, counter=None) -> np.ndarray:
    k, m = d.shape
    if xb.shape[1] != m:
        raise DimensionError(f"dictionary width {m} != input channels {xb.shape[1]}")
    b, _, h, w = xb.shape
    flat = np.ascontiguousarray(xb.transpose(1, 0, 2, 3)).reshape(m, b * h * w)
    s = _split_batch(d @ flat, b, k, h, w)
    if counter is not None:
        counter.precompute_mults += b * k * m * h * w
        counter.precompute_adds += b * k * m * h * w
    return s


def conv2d_as_shifted_sum(x: np.ndarray, w: np.ndarray, geom: ConvGeom) -> np.ndarray:
    """Stride-1 convolution decomposed into per-tap 1x1 convolutions and shifts.

    Reference decomposition (kept simple on purpose): each kernel tap (r, c)
    contributes shift(X * W[:, :, r, c]); accumulation is in float64.
    """
    check_tensor3(x, geom.m)
    if geom.stride != 1:
        raise UnsupportedGeometryError("shifted-sum decomposition is defined for stride 1")
    if w.shape != (geom.n, geom.m, geom.kh, geom.kw):
        raise DimensionError(f"weight shape {w.shape} does not match geometry")
    out = np.zeros((geom.n, geom.h_out, geom.w_out), dtype=np.float64)
    zp = np.zeros(
        (geom.n, geom.h + 2 * geom.pad, geom.w + 2 * geom.pad), dtype=np.float64
    )
    for r in range(geom.kh):
        for c in range(geom.kw):
            z = conv1x1_all(x.astype(np.float64), w[:, :, r, c].astype(np.float64))
            zp[:] = 0.0
            zp[:, geom.pad : geom.pad + geom.h, geom.pad : geom.pad + geom.w] = z
            out += zp[:, r : r + geom.h_out, c : c + geom.w_out]
    return out.astype(x.dtype)


def one_hot_kernel(t: int, r: int, c: int, k: int, kh: int, kw: int) -> np.ndarray:
    """A (1, k, kh, kw) kernel with a single 1 at (t, r, c); the shift-identity probe."""
    if not (0 <= t < k and 0 <= r < kh and 0 <= c < kw):
        raise BoundsError(f"one-hot index ({t},{r},{c}) outside ({k},{kh},{kw})")
    w = np.zeros((1, k, kh, kw), dtype=DTYPE)
    w[0, t, r, c] = 1.0
    return w
