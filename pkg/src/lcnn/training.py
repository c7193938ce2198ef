"""Joint training of dictionaries and sparse combiners.

Two sparsity regimes, selected per run:

* ``fixed_s``  -- after every update, each column P_i[:, r, c] is projected
  onto its top-s entries by magnitude (ties keep the lower dictionary index),
* ``threshold`` -- entries with |x| <= epsilon are zeroed and pinned to zero
  for the rest of the run.

Both regimes keep an l1 penalty on P; its gradient contribution is
``lam * sign(P)`` with sign(0) = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NumericFailureError
from .layer import Dictionary, LcnnConvLayer, SparseCombiner
from .model import DenseConvLayer, LcnnModel
from .tensor_ops import DTYPE, ConvGeom

FIXED_S = "fixed_s"
THRESHOLD = "threshold"


@dataclass
class TrainConfig:
    mode: str = THRESHOLD
    s_max: int = 3
    c: float = 0.01                 # threshold scale: epsilon = c * sigma per layer
    lambda_prime: float = 0.1       # l1 weight: lam = lambda_prime * epsilon
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay_d: float = 0.0
    body_lr_scale: float = 0.1      # few-shot: body lr = body_lr_scale * learning_rate
    batch_size: int = 32
    iterations: int = 0
    epochs: int = 0
    seed: int = 0
    k_list: list[int] | None = None
    k_policy: str | None = None     # "half": k = ceil(0.5 * n * kh * kw)
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if self.mode not in (FIXED_S, THRESHOLD):
            raise DimensionError(f"unknown sparsity mode {self.mode!r}")
        if self.c <= 0:
            raise DimensionError("threshold scale c must be positive")
        if self.lambda_prime < 0:
            raise DimensionError("lambda_prime must be nonnegative")
        if self.mode == FIXED_S and self.s_max < 1:
            raise DimensionError("s_max must be >= 1 in fixed_s mode")


@dataclass
class LayerGrads:
    dp: np.ndarray | None = None
    dd: np.ndarray | None = None
    dw: np.ndarray | None = None
    dbias: np.ndarray | None = None


def layer_sigma(geom: ConvGeom) -> float:
    """Per-layer Gaussian stddev: sqrt(2 / (fan_in + fan_out))."""
    fan_in = geom.m * geom.kh * geom.kw
    fan_out = geom.n * geom.kh * geom.kw
    return math.sqrt(2.0 / (fan_in + fan_out))


def dictionary_size(geom: ConvGeom, cfg: TrainConfig, index: int) -> int:
    if cfg.k_list is not None:
        return cfg.k_list[index]
    if cfg.k_policy == "half":
        return math.ceil(0.5 * geom.n * geom.kh * geom.kw)
    raise DimensionError("no dictionary size given: set k_list or k_policy")


def init_layer(geom: ConvGeom, k: int, cfg: TrainConfig, rng: np.random.Generator,
               is_fc: bool = False, name: str | None = None) -> LcnnConvLayer:
    """Gaussian-initialize a training-mode layer and derive its epsilon / lambda."""
    if k < 1:
        raise DimensionError("dictionary size must be >= 1")
    sigma = layer_sigma(geom)
    d = rng.normal(0.0, sigma, size=(k, geom.m)).astype(DTYPE)
    p = rng.normal(0.0, sigma, size=(geom.n, k, geom.kh, geom.kw)).astype(DTYPE)
    epsilon = cfg.c * sigma
    lam = cfg.lambda_prime * epsilon
    combiner = SparseCombiner(p=p, s_max=cfg.s_max if cfg.mode == FIXED_S else None)
    layer = LcnnConvLayer(
        geom=geom, dictionary=Dictionary(d), combiner=combiner, is_fc=is_fc,
        epsilon=epsilon, lam=lam,
        s_max=cfg.s_max if cfg.mode == FIXED_S else None,
        sparsity_mode=cfg.mode, name=name,
    )
    if cfg.mode == THRESHOLD:
        apply_threshold(combiner, epsilon)
    return layer


def init_dense_layer(geom: ConvGeom, rng: np.random.Generator, is_fc: bool = False,
                     name: str | None = None) -> DenseConvLayer:
    sigma = layer_sigma(geom)
    w = rng.normal(0.0, sigma, size=(geom.n, geom.m, geom.kh, geom.kw)).astype(DTYPE)
    return DenseConvLayer(geom, w, np.zeros(geom.n, dtype=DTYPE), is_fc=is_fc, name=name)


def l1_of_p(combiner: SparseCombiner) -> float:
    """Sum of |entry| over every P_i of the layer."""
    return float(np.abs(combiner.p, dtype=np.float64).sum())


def project_top_s(combiner: SparseCombiner, s: int) -> None:
    """Keep the s largest-magnitude entries of every column, zero the rest.

    Ranking is by |value| descending; ties keep the lower dictionary index
    (stable sort).  Idempotent.
    """
    if s < 1:
        raise DimensionError("s must be >= 1")
    p = combiner.p
    k = p.shape[1]
    if s >= k:
        return
    order = np.argsort(-np.abs(p), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(
        np.arange(k)[None, :, None, None], p.shape).copy(), axis=1)
    p[ranks >= s] = 0.0


def apply_threshold(combiner: SparseCombiner, epsilon: float) -> None:
    """Zero entries with |x| <= epsilon and pin them to zero permanently."""
    if epsilon <= 0:
        raise DimensionError("epsilon must be positive")
    combiner.frozen_zero_mask |= np.abs(combiner.p) <= epsilon
    combiner.p[combiner.frozen_zero_mask] = 0.0


# -- loss and gradients ------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    b = logits.shape[0]
    picked = z[np.arange(b), labels]
    loss = float(np.mean(np.log(ez.sum(axis=1)) - picked))
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, dlogits.astype(logits.dtype)


def penalty_of(model: LcnnModel) -> float:
    return sum(l.lam * l1_of_p(l.combiner) for l in model.lcnn_layers())


def total_loss(model: LcnnModel, xb: np.ndarray, yb: np.ndarray) -> float:
    """Classification loss plus the per-layer l1 penalties (no gradients)."""
    loss, _ = softmax_cross_entropy(model.logits(xb), yb)
    return loss + penalty_of(model)


def backward(batch, model: LcnnModel, cfg: TrainConfig | None = None):
    """Forward + backward over one batch.

    Returns ``(grads, loss)`` where grads is a list aligned with model.layers
    (None for parameter-free layers).  dP includes the l1 term
    ``lam * sign(P)`` and is forced to zero under the frozen-zero mask.
    """
    xb, yb = batch
    caches = []
    out = xb
    for layer in model.layers:
        out, cache = layer.forward_train(out)
        caches.append(cache)
    logits = out.reshape(out.shape[0], -1)
    if not np.all(np.isfinite(logits)):
        bad = _first_nonfinite_layer(model, xb)
        raise NumericFailureError(f"non-finite activations at layer {bad}", layer_id=bad)
    loss, dlogits = softmax_cross_entropy(logits, yb)
    loss += penalty_of(model)
    if not np.isfinite(loss):
        raise NumericFailureError("non-finite loss", layer_id=len(model.layers) - 1)

    grads: list[LayerGrads | None] = [None] * len(model.layers)
    dy = dlogits.reshape(out.shape)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        dy, g = layer.backward(dy, caches[idx])
        if g is None:
            continue
        if isinstance(layer, LcnnConvLayer):
            dp = g["dp"] + layer.lam * np.sign(layer.combiner.p)
            dp[layer.combiner.frozen_zero_mask] = 0.0
            grads[idx] = LayerGrads(dp=dp, dd=g["dd"], dbias=g["dbias"])
        else:
            grads[idx] = LayerGrads(dw=g["dw"], dbias=g["dbias"])
    return grads, loss


def _first_nonfinite_layer(model: LcnnModel, xb: np.ndarray) -> int:
    out = xb
    for idx, layer in enumerate(model.layers):
        out, _ = layer.forward_train(out)
        if not np.all(np.isfinite(out)):
            return idx
    return len(model.layers) - 1


# -- optimizer ---------------------------------------------------------------


def new_optimizer_state(cfg: TrainConfig) -> dict:
    return {"velocity": {}, "lr": cfg.learning_rate, "step": 0}


def _momentum_update(state: dict, key, param: np.ndarray, grad: np.ndarray,
                     lr: float, momentum: float) -> None:
    v = state["velocity"].get(key)
    if v is None:
        v = np.zeros_like(param)
        state["velocity"][key] = v
    v *= momentum
    v += grad
    param -= lr * v


def enforce_sparsity(layer: LcnnConvLayer, opt_state: dict | None = None,
                     layer_idx: int | None = None) -> None:
    comb = layer.combiner
    if layer.sparsity_mode == FIXED_S:
        project_top_s(comb, layer.s_max)
    else:
        apply_threshold(comb, layer.epsilon)
        if opt_state is not None and layer_idx is not None:
            v = opt_state["velocity"].get((layer_idx, "p"))
            if v is not None:
                v[comb.frozen_zero_mask] = 0.0


def train_step(batch, model: LcnnModel, cfg: TrainConfig, opt_state: dict) -> float:
    """One SGD-with-momentum update followed by sparsity enforcement."""
    grads, loss = backward(batch, model, cfg)
    lr = opt_state.get("lr", cfg.learning_rate)
    mu = cfg.momentum
    for idx, g in enumerate(grads):
        if g is None:
            continue
        layer = model.layers[idx]
        if isinstance(layer, LcnnConvLayer):
            _momentum_update(opt_state, (idx, "p"), layer.combiner.p, g.dp, lr, mu)
            if not layer.dict.frozen:
                dd = g.dd
                if cfg.weight_decay_d:
                    dd = dd + cfg.weight_decay_d * layer.dict.data
                _momentum_update(opt_state, (idx, "d"), layer.dict.data, dd, lr, mu)
            _momentum_update(opt_state, (idx, "bias"), layer.bias, g.dbias, lr, mu)
            enforce_sparsity(layer, opt_state, idx)
        else:
            _momentum_update(opt_state, (idx, "w"), layer.weights, g.dw, lr, mu)
            _momentum_update(opt_state, (idx, "bias"), layer.bias, g.dbias, lr, mu)
    opt_state["step"] += 1
    if cfg.lr_decay_every and opt_state["step"] % cfg.lr_decay_every == 0:
        opt_state["lr"] = opt_state.get("lr", cfg.learning_rate) * cfg.lr_decay_factor
    return loss


# -- metrics and the driver loop ---------------------------------------------


def model_sparsity(model: LcnnModel):
    """(mean l0 over all columns of all layers, total l1) of the model's P tensors."""
    l0s = []
    l1 = 0.0
    for l in model.lcnn_layers():
        l0s.append(l.combiner.column_l0().mean())
        l1 += l1_of_p(l.combiner)
    mean_l0 = float(np.mean(l0s)) if l0s else 0.0
    return mean_l0, l1


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    l1: float
    mean_l0: float
    acc: float

    def format(self) -> str:
        return (f"iter={self.iteration} loss={self.loss:.6f} l1={self.l1:.6f} "
                f"mean_l0={self.mean_l0:.4f} acc={self.acc:.4f}")


def run_training(model: LcnnModel, images: np.ndarray, labels: np.ndarray,
                 cfg: TrainConfig, rng: np.random.Generator,
                 record_fn=None, checkpoint_fn=None, checkpoint_every: int = 0,
                 iterations: int | None = None) -> list[TrainRecord]:
    """Drive train_step over shuffled batches for a fixed iteration budget."""
    n = images.shape[0]
    bs = min(cfg.batch_size, n)
    if iterations is None:
        iterations = cfg.iterations
        if not iterations:
            if not cfg.epochs:
                raise DimensionError("training needs iterations or epochs")
            iterations = cfg.epochs * max(1, n // bs)
    opt = new_optimizer_state(cfg)
    records = []
    order = rng.permutation(n)
    cursor = 0
    for it in range(1, iterations + 1):
        if cursor + bs > n:
            order = rng.permutation(n)
            cursor = 0
        sel = order[cursor : cursor + bs]
        cursor += bs
        xb, yb = images[sel], labels[sel]
        loss = train_step((xb, yb), model, cfg, opt)
        acc = float(np.mean(model.predict(xb) == yb))
        mean_l0, l1 = model_sparsity(model)
        rec = TrainRecord(it, loss, l1, mean_l0, acc)
        records.append(rec)
        if record_fn is not None:
            record_fn(rec)
        if checkpoint_fn is not None and checkpoint_every and it % checkpoint_every == 0:
            checkpoint_fn(model, it)
    return records


# -- gradient checking -------------------------------------------------------


@dataclass
class FdReport:
    entries: list = field(default_factory=list)  # (name, max_rel_err, probed)
    tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for _, err, probed in self.entries if probed)

    def format(self) -> str:
        lines = [f"{'tensor':<20} {'max_rel_err':>12} {'probed':>7}"]
        for name, err, probed in self.entries:
            lines.append(f"{name:<20} {err:>12.3e} {probed:>7}")
        lines.append(f"pass={self.passed} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-12:
        return 0.0
    return abs(a - b) / scale


def finite_diff_check(model: LcnnModel, batch, tolerance: float = 1e-3,
                      rng: np.random.Generator | None = None,
                      coords_per_tensor: int = 20, step: float = 1e-3) -> FdReport:
    """Compare analytic gradients against central differences in float64.

    P coordinates with |value| < 10*step are skipped (the l1 kink), as are
    coordinates pinned by the frozen-zero mask (their defined gradient is 0
    while the raw coordinate is not stationary).
    """
    rng = rng or np.random.default_rng(0)
    m64 = model.astype(np.float64)
    xb, yb = batch
    xb = xb.astype(np.float64)
    grads, _ = backward((xb, yb), m64)
    report = FdReport(tolerance=tolerance)

    def probe(name, param, grad, skip=None):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        count = min(coords_per_tensor, flat_p.size)
        coords = rng.choice(flat_p.size, size=count, replace=False)
        worst = 0.0
        probed = 0
        for ci in coords:
            if skip is not None and skip.reshape(-1)[ci]:
                continue
            old = flat_p[ci]
            flat_p[ci] = old + step
            up = total_loss(m64, xb, yb)
            flat_p[ci] = old - step
            down = total_loss(m64, xb, yb)
            flat_p[ci] = old
            fd = (up - down) / (2 * step)
            worst = max(worst, _rel_err(float(flat_g[ci]), fd))
            probed += 1
        report.entries.append((name, worst, probed))

    for idx, g in enumerate(grads):
        if g is None:
            continue
        layer = m64.layers[idx]
        if isinstance(layer, LcnnConvLayer):
            comb = layer.combiner
            skip = comb.frozen_zero_mask | (np.abs(comb.p) < 10 * step)
            probe(f"layer{idx}.p", comb.p, g.dp, skip=skip)
            probe(f"layer{idx}.d", layer.dict.data, g.dd)
            probe(f"layer{idx}.bias", layer.bias, g.dbias)
        else:
            probe(f"layer{idx}.w", layer.weights, g.dw)
            probe(f"layer{idx}.bias", layer.bias, g.dbias)
    return report
