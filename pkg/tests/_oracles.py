"""Independent reference implementations used only by tests.

Everything here is written as plain nested loops in float64, deliberately
sharing no code with the package's vectorized paths.  Exact-equality
comparisons use small-integer-valued tensors so that no float rounding can
occur on either side.
"""
import numpy as np


def naive_conv2d(x, w, b, stride, pad):
    """Septuple-loop cross-correlation; float64 accumulation."""
    m, h, win = x.shape
    n, m2, kh, kw = w.shape
    assert m == m2
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (win + 2 * pad - kw) // stride + 1
    y = np.zeros((n, h_out, w_out), dtype=np.float64)
    for i in range(n):
        for oy in range(h_out):
            for ox in range(w_out):
                acc = float(b[i])
                for ch in range(m):
                    for r in range(kh):
                        for c in range(kw):
                            iy = oy * stride + r - pad
                            ix = ox * stride + c - pad
                            if 0 <= iy < h and 0 <= ix < win:
                                acc += float(x[ch, iy, ix]) * float(w[i, ch, r, c])
                y[i, oy, ox] = acc
    return y


def naive_conv1x1(x, d):
    """Per-pixel dot products of every dictionary row with the channel vector."""
    k, m = d.shape
    _, h, w = x.shape
    s = np.zeros((k, h, w), dtype=np.float64)
    for i in range(k):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for ch in range(m):
                    acc += float(d[i, ch]) * float(x[ch, y, xx])
                s[i, y, xx] = acc
    return s


def naive_shift2d(t, dr, dc):
    ch, h, w = t.shape
    out = np.zeros_like(t)
    for c in range(ch):
        for y in range(h):
            for x in range(w):
                sy, sx = y - dr, x - dc
                if 0 <= sy < h and 0 <= sx < w:
                    out[c, y, x] = t[c, sy, sx]
    return out


def naive_reconstruct(d, tables, n, m, kh, kw):
    """Per-tap loop over index/coefficient lists."""
    w = np.zeros((n, m, kh, kw), dtype=np.float64)
    for i in range(n):
        for r in range(kh):
            for c in range(kw):
                idx = tables.indices[i][r][c]
                co = tables.coeffs[i][r][c]
                for t in range(len(idx)):
                    for ch in range(m):
                        w[i, ch, r, c] += float(co[t]) * float(d[idx[t], ch])
    return w


def int_tensor(rng, shape, lo=-4, hi=5, dtype=np.float32):
    """Small-integer-valued float tensor; sums of products stay exact in f32."""
    return rng.integers(lo, hi, size=shape).astype(dtype)


def assert_close(actual, expected, rtol, context=""):
    """Scale-relative comparison: max |a-e| <= rtol * max(|e|, 1)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    assert actual.shape == expected.shape, f"{context}: shape {actual.shape} vs {expected.shape}"
    scale = max(float(np.abs(expected).max(initial=0.0)), 1.0)
    err = float(np.abs(actual - expected).max(initial=0.0)) / scale
    assert err <= rtol, f"{context}: relative error {err:.3e} > {rtol:g}"


def random_sparse_combiner(rng, n, k, kh, kw, density=0.4, dtype=np.float32):
    from lcnn.layer import SparseCombiner

    p = rng.normal(size=(n, k, kh, kw)).astype(dtype)
    p[rng.random(p.shape) >= density] = 0.0
    return SparseCombiner(p=p)


def random_lcnn_layer(rng, m=None, n=None, k=None, kernel=None, stride=None, pad=None,
                      mode="training", dtype=np.float32):
    """A random valid layer for property suites (warnings suppressed upstream)."""
    import warnings

    from lcnn.layer import Dictionary, LcnnConvLayer, p_to_ic
    from lcnn.tensor_ops import ConvGeom

    m = m or int(rng.integers(1, 9))
    n = n or int(rng.integers(1, 9))
    k = k or int(rng.integers(1, 9))
    kernel = kernel if kernel is not None else int(rng.choice([1, 3, 5]))
    stride = stride if stride is not None else int(rng.choice([1, 2]))
    pad = pad if pad is not None else int(rng.choice([0, 1, 2]))
    size = None
    for cand in range(kernel, kernel + 12):
        if cand + 2 * pad - kernel >= 0 and (cand + 2 * pad - kernel) % stride == 0:
            size = cand + int(rng.integers(0, 3)) * stride
            break
    geom = ConvGeom(m=m, n=n, kh=kernel, kw=kernel, h=size, w=size, stride=stride, pad=pad)
    d = rng.normal(size=(k, m)).astype(dtype)
    comb = random_sparse_combiner(rng, n, k, kernel, kernel, dtype=dtype)
    bias = rng.normal(size=n).astype(dtype)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        layer = LcnnConvLayer(geom=geom, dictionary=Dictionary(d), combiner=comb, bias=bias)
        if mode == "inference":
            layer.to_inference()
    return layer
