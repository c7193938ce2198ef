"""Dictionary reuse: freezing, cross-model transfer, and few-shot fine-tuning.

The few-shot protocol freezes every dictionary, reinitializes the head's
combiner and bias for the novel classes, and then trains only

* the head's P and bias (learning rate eta), and
* the currently nonzero entries of every other layer's P (eta * body scale);

no new nonzero may appear outside the head, so the body's index structure is
fixed and only its coefficients move.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StructureError, TransferError
from .layer import LcnnConvLayer, SparseCombiner
from .model import LcnnModel
from .tensor_ops import DTYPE, ConvGeom
from .training import (
    THRESHOLD,
    TrainConfig,
    apply_threshold,
    backward,
    enforce_sparsity,
    layer_sigma,
    new_optimizer_state,
    _momentum_update,
)


@dataclass
class TransferPlan:
    """Pairs of (source layer index, destination layer index) into model.layers."""

    mapping: list[tuple[int, int]]
    freeze_after_transfer: bool = True
    strict: bool = True

    def __post_init__(self):
        dests = [d for _, d in self.mapping]
        if len(dests) != len(set(dests)):
            raise TransferError("a destination layer appears more than once in the plan")


@dataclass
class TransferOutcome:
    model: LcnnModel
    applied: list[tuple[int, int]] = field(default_factory=list)
    skipped: list[tuple[tuple[int, int], str]] = field(default_factory=list)


def _lcnn_at(model: LcnnModel, idx: int, role: str) -> LcnnConvLayer:
    if idx < 0 or idx >= len(model.layers):
        raise TransferError(f"{role} layer index {idx} out of range")
    layer = model.layers[idx]
    if not isinstance(layer, LcnnConvLayer):
        raise TransferError(f"{role} layer {idx} is not a lookup layer")
    return layer


def transfer_dictionaries(src: LcnnModel, dst: LcnnModel, plan: TransferPlan) -> TransferOutcome:
    """Copy source dictionaries into mapped destination layers (bitwise).

    Destination combiners / tables and biases are untouched.  A pair whose
    channel width or dictionary size does not match raises (strict) or is
    skipped and recorded (non-strict).
    """
    outcome = TransferOutcome(model=dst)
    for pair in plan.mapping:
        si, di = pair
        s_layer = _lcnn_at(src, si, "source")
        d_layer = _lcnn_at(dst, di, "destination")
        problem = None
        if s_layer.dict.m != d_layer.geom.m:
            problem = (f"channel size mismatch: source m={s_layer.dict.m}, "
                       f"destination m={d_layer.geom.m}")
        elif s_layer.dict.k != d_layer.dict.k:
            problem = (f"dictionary size mismatch: source k={s_layer.dict.k}, "
                       f"destination k={d_layer.dict.k}")
        if problem:
            if plan.strict:
                raise TransferError(f"pair {pair}: {problem}")
            outcome.skipped.append((pair, problem))
            continue
        d_layer.dict.data = s_layer.dict.data.copy()
        if plan.freeze_after_transfer:
            d_layer.dict.frozen = True
        outcome.applied.append(pair)
    return outcome


def freeze_dictionaries(model: LcnnModel) -> None:
    for layer in model.lcnn_layers():
        layer.dict.frozen = True


def auto_plan(src: LcnnModel, dst: LcnnModel, freeze: bool = True, strict: bool = True) -> TransferPlan:
    """Map each destination lookup layer to the first source layer with the
    same (m, k); destinations without a match are left unmapped."""
    pairs = []
    src_idx = [(i, l) for i, l in enumerate(src.layers) if isinstance(l, LcnnConvLayer)]
    for di, d_layer in enumerate(dst.layers):
        if not isinstance(d_layer, LcnnConvLayer):
            continue
        for si, s_layer in src_idx:
            if s_layer.dict.m == d_layer.geom.m and s_layer.dict.k == d_layer.dict.k:
                pairs.append((si, di))
                break
    return TransferPlan(pairs, freeze_after_transfer=freeze, strict=strict)


# -- few-shot ------------------------------------------------------------------


@dataclass
class FewShotEpisode:
    novel_class_count: int
    shots_per_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    resample_seed: int = 0

    def __post_init__(self):
        counts = np.bincount(self.support_y, minlength=self.novel_class_count)
        if not np.all(counts == self.shots_per_class):
            raise ContractError(
                f"support set must have exactly {self.shots_per_class} samples per class, "
                f"got counts {counts.tolist()}"
            )


def replace_head(model: LcnnModel, new_classes: int, rng: np.random.Generator,
                 cfg: TrainConfig | None = None) -> LcnnModel:
    """Swap the final lookup-fc layer for a fresh new_classes-way head.

    The head's dictionary is retained and frozen; only its combiner and bias
    are reinitialized (same Gaussian scheme as a fresh layer, with epsilon /
    lambda rescaled to the new fan-out).
    """
    head = model.layers[-1] if model.layers else None
    if not isinstance(head, LcnnConvLayer) or not head.is_fc:
        raise StructureError("final layer must be a lookup fully connected layer")
    old_geom = head.geom
    new_geom = ConvGeom(m=old_geom.m, n=new_classes, kh=1, kw=1, h=1, w=1)
    sigma_new = layer_sigma(new_geom)
    if cfg is not None:
        epsilon = cfg.c * sigma_new
        lam = cfg.lambda_prime * epsilon
    else:
        scale = sigma_new / layer_sigma(old_geom)
        epsilon = head.epsilon * scale
        lam = head.lam * scale
    dtype = head.dict.data.dtype
    p = rng.normal(0.0, sigma_new, size=(new_classes, head.dict.k, 1, 1)).astype(dtype)
    combiner = SparseCombiner(p=p, s_max=head.s_max)
    head.dict.frozen = True
    new_head = LcnnConvLayer(
        geom=new_geom, dictionary=head.dict, bias=np.zeros(new_classes, dtype=dtype),
        combiner=combiner, is_fc=True, epsilon=epsilon, lam=lam,
        s_max=head.s_max, sparsity_mode=head.sparsity_mode, name=head.name,
    )
    if new_head.sparsity_mode == THRESHOLD:
        apply_threshold(combiner, epsilon)
    model.layers[-1] = new_head
    model.classes = new_classes
    return model


def trainable_scalar_count(model: LcnnModel) -> dict:
    """Few-shot trainable parameters: head nonzeros + head biases + body nonzeros."""
    head = model.layers[-1]
    head_nnz = head.combiner.nnz()
    body_nnz = sum(l.combiner.nnz() for l in model.lcnn_layers() if l is not head)
    return {
        "head_p": head_nnz,
        "head_bias": int(head.bias.size),
        "body_p": body_nnz,
        "total": head_nnz + int(head.bias.size) + body_nnz,
    }


@dataclass
class FewShotResult:
    query_accuracy: float
    trainable: dict
    losses: list[float] = field(default_factory=list)


def few_shot_finetune(model: LcnnModel, episode: FewShotEpisode, cfg: TrainConfig,
                      iterations: int | None = None) -> FewShotResult:
    """Fine-tune a frozen-dictionary model on an episode's support set.

    Head P and bias train at cfg.learning_rate; body P coefficients train at
    cfg.body_lr_scale times that, masked to their current support.  Body
    biases and all dictionaries stay fixed.
    """
    for layer in model.lcnn_layers():
        if not layer.dict.frozen:
            raise ContractError("few-shot fine-tuning requires every dictionary frozen")
    head = model.layers[-1]
    if not isinstance(head, LcnnConvLayer) or not head.is_fc:
        raise StructureError("final layer must be a lookup fully connected layer")
    if iterations is None:
        iterations = cfg.iterations or 50
    trainable = trainable_scalar_count(model)
    supports = {}
    head_idx = len(model.layers) - 1
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, LcnnConvLayer) and idx != head_idx:
            supports[idx] = layer.combiner.p != 0

    opt = new_optimizer_state(cfg)
    lr_head = cfg.learning_rate
    lr_body = cfg.learning_rate * cfg.body_lr_scale
    losses = []
    batch = (episode.support_x, episode.support_y)
    for _ in range(iterations):
        grads, loss = backward(batch, model, cfg)
        losses.append(loss)
        for idx, g in enumerate(grads):
            if g is None or not isinstance(model.layers[idx], LcnnConvLayer):
                continue
            layer = model.layers[idx]
            if idx == head_idx:
                _momentum_update(opt, (idx, "p"), layer.combiner.p, g.dp, lr_head, cfg.momentum)
                _momentum_update(opt, (idx, "bias"), layer.bias, g.dbias, lr_head, cfg.momentum)
                enforce_sparsity(layer, opt, idx)
            elif lr_body > 0:
                dp = g.dp * supports[idx]
                _momentum_update(opt, (idx, "p"), layer.combiner.p, dp, lr_body, cfg.momentum)
    if episode.query_x.shape[0]:
        preds = model.predict(episode.query_x)
        acc = float(np.mean(preds == episode.query_y))
    else:
        acc = float("nan")
    return FewShotResult(query_accuracy=acc, trainable=trainable, losses=losses)
