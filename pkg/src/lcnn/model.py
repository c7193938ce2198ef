"""Model container and the non-lookup layer kinds (dense conv, relu, pooling)."""
from __future__ import annotations

import copy

import numpy as np

from .errors import DimensionError, ModeError
from .layer import INFERENCE, TRAINING, LcnnConvLayer
from .tensor_ops import ConvGeom, _col2im, conv2d_batch


class ReluLayer:
    name = "relu"

    def forward_batch(self, xb, counter=None):
        return np.maximum(xb, 0)

    def forward_train(self, xb):
        mask = xb > 0
        return xb * mask, {"mask": mask}

    def backward(self, dy, cache):
        return dy * cache["mask"], None

    def out_shape(self, shape):
        return shape

    def astype(self, dtype):
        return self


class MaxPoolLayer:
    def __init__(self, size: int = 2, stride: int | None = None, pad: int = 0, name: str = "pool"):
        self.size = size
        self.stride = size if stride is None else stride
        self.pad = pad
        self.name = name

    def out_shape(self, shape):
        c, h, w = shape
        for dim in (h, w):
            span = dim + 2 * self.pad - self.size
            if span < 0 or span % self.stride != 0:
                raise DimensionError(f"pool window {self.size}/{self.stride} does not tile {dim}")
        ho = (h + 2 * self.pad - self.size) // self.stride + 1
        wo = (w + 2 * self.pad - self.size) // self.stride + 1
        return (c, ho, wo)

    def _windows(self, xb):
        if self.pad:
            fill = -np.inf if np.issubdtype(xb.dtype, np.floating) else 0
            xb = np.pad(xb, [(0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)],
                        constant_values=fill)
        win = np.lib.stride_tricks.sliding_window_view(xb, (self.size, self.size), axis=(2, 3))
        return win[:, :, :: self.stride, :: self.stride]

    def forward_batch(self, xb, counter=None):
        return self._windows(xb).max(axis=(4, 5))

    def forward_train(self, xb):
        win = self._windows(xb)
        b, c, ho, wo = win.shape[:4]
        flat = win.reshape(b, c, ho, wo, -1)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, {"arg": arg, "in_shape": xb.shape}

    def backward(self, dy, cache):
        b, c, h, w = cache["in_shape"]
        arg = cache["arg"]
        ho, wo = arg.shape[2], arg.shape[3]
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        dxp = np.zeros((b, c, hp, wp), dtype=dy.dtype)
        rows = self.stride * (ho - 1) + 1
        cols = self.stride * (wo - 1) + 1
        for r in range(self.size):
            for cc in range(self.size):
                sel = arg == (r * self.size + cc)
                dxp[:, :, r : r + rows : self.stride, cc : cc + cols : self.stride] += dy * sel
        if self.pad:
            return dxp[:, :, self.pad : self.pad + h, self.pad : self.pad + w], None
        return dxp, None

    def astype(self, dtype):
        return self


class GlobalAvgPoolLayer:
    name = "gap"

    def forward_batch(self, xb, counter=None):
        return xb.mean(axis=(2, 3), keepdims=True)

    def forward_train(self, xb):
        return xb.mean(axis=(2, 3), keepdims=True), {"in_shape": xb.shape}

    def backward(self, dy, cache):
        b, c, h, w = cache["in_shape"]
        return np.broadcast_to(dy / (h * w), (b, c, h, w)).astype(dy.dtype), None

    def out_shape(self, shape):
        return (shape[0], 1, 1)

    def astype(self, dtype):
        return self


class DenseConvLayer:
    """Plain convolution storing its full weight stack; baseline counterpart."""

    def __init__(self, geom: ConvGeom, weights: np.ndarray, bias: np.ndarray,
                 is_fc: bool = False, name: str | None = None):
        if weights.shape != (geom.n, geom.m, geom.kh, geom.kw):
            raise DimensionError(f"weight shape {weights.shape} does not match geometry")
        self.geom = geom
        self.weights = weights
        self.bias = bias
        self.is_fc = is_fc
        self.name = name

    def _flatten_fc(self, xb):
        if not self.is_fc:
            return xb
        b = xb.shape[0]
        feat = int(np.prod(xb.shape[1:]))
        if feat != self.geom.m:
            raise DimensionError(f"fc layer expects {self.geom.m} features, got {feat}")
        return xb.reshape(b, feat, 1, 1)

    def forward_batch(self, xb, counter=None):
        return conv2d_batch(self._flatten_fc(xb), self.weights, self.bias, self.geom, counter=counter)

    def forward_train(self, xb):
        orig_shape = xb.shape
        xb = self._flatten_fc(xb)
        cols: list = []
        y = conv2d_batch(xb, self.weights, self.bias, self.geom, cols_out=cols)
        return y, {"x": xb, "cols": cols[0], "orig_shape": orig_shape}

    def backward(self, dy, cache):
        g = self.geom
        b = dy.shape[0]
        dy_flat = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(
            g.n, b * g.h_out * g.w_out)
        dbias = dy.sum(axis=(0, 2, 3))
        dw = (dy_flat @ cache["cols"].T).reshape(self.weights.shape)
        dx_cols = self.weights.reshape(g.n, -1).T @ dy_flat
        dx = _col2im(dx_cols, b, g, dy.dtype)
        if self.is_fc:
            dx = dx.reshape(cache["orig_shape"])
        return dx, {"dw": dw, "dbias": dbias}

    def out_shape(self, shape):
        return (self.geom.n, self.geom.h_out, self.geom.w_out)

    def astype(self, dtype):
        return DenseConvLayer(self.geom, self.weights.astype(dtype), self.bias.astype(dtype),
                              is_fc=self.is_fc, name=self.name)


PARAMETRIC_KINDS = (LcnnConvLayer, DenseConvLayer)


class LcnnModel:
    """An ordered stack of layers plus enough metadata to serialize it."""

    def __init__(self, layers: list, input_shape: tuple[int, int, int], classes: int,
                 arch: str = "custom", meta: dict | None = None):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.arch = arch
        self.meta = dict(meta or {})

    def lcnn_layers(self):
        return [l for l in self.layers if isinstance(l, LcnnConvLayer)]

    def parametric_layers(self):
        return [l for l in self.layers if isinstance(l, PARAMETRIC_KINDS)]

    @property
    def mode(self) -> str:
        lcnn = self.lcnn_layers()
        if not lcnn:
            return INFERENCE
        modes = {l.mode for l in lcnn}
        if len(modes) > 1:
            raise ModeError("model layers are in mixed modes")
        return modes.pop()

    def to_inference(self) -> None:
        if self.mode != TRAINING:
            raise ModeError("model is already in inference mode")
        for l in self.lcnn_layers():
            l.to_inference()

    def forward_batch(self, xb: np.ndarray, counter=None) -> np.ndarray:
        if xb.shape[1:] != self.input_shape:
            raise DimensionError(f"input shape {xb.shape[1:]} != model input {self.input_shape}")
        out = xb
        for layer in self.layers:
            out = layer.forward_batch(out, counter=counter)
        return out

    def logits(self, xb: np.ndarray, counter=None) -> np.ndarray:
        out = self.forward_batch(xb, counter=counter)
        return out.reshape(out.shape[0], -1)

    def predict(self, xb: np.ndarray) -> np.ndarray:
        """Top-1 labels; ties resolve to the lowest class id."""
        return np.argmax(self.logits(xb), axis=1)

    def copy(self) -> "LcnnModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "LcnnModel":
        layers = [l.astype(dtype) for l in self.layers]
        return LcnnModel(layers, self.input_shape, self.classes, arch=self.arch, meta=dict(self.meta))

    def layer_names(self) -> list[str]:
        names = []
        conv_i = fc_i = 0
        for l in self.parametric_layers():
            if l.name:
                names.append(l.name)
            elif getattr(l, "is_fc", False):
                fc_i += 1
                names.append(f"fc{fc_i}")
            else:
                conv_i += 1
                names.append(f"conv{conv_i}")
        return names
