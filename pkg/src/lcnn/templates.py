"""Architecture templates.

Trainable desk-scale nets: ``toy-cnn`` (+ its dense twin) and the
``blocknet-1`` / ``blocknet-2`` pair used for shallow-to-deep dictionary
transfer.  Structural skeletons for flop reporting: ``alexnet-template`` and
``resnet18-template`` (inference-mode layers with empty tables; supply a
mean component count when benchmarking them).
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .layer import Dictionary, LcnnConvLayer, LookupTables, fc_as_conv
from .model import (
    DenseConvLayer,
    GlobalAvgPoolLayer,
    LcnnModel,
    MaxPoolLayer,
    ReluLayer,
)
from .tensor_ops import DTYPE, ConvGeom
from .training import TrainConfig, dictionary_size, init_dense_layer, init_layer

TEMPLATES = ("toy-cnn", "toy-cnn-dense", "blocknet-1", "blocknet-2",
             "alexnet-template", "resnet18-template")


def _skeleton_lcnn(geom: ConvGeom, k: int, is_fc=False, name=None) -> LcnnConvLayer:
    """Inference-mode layer with empty tables; geometry/dictionary-size carrier."""
    return LcnnConvLayer(
        geom=geom, dictionary=Dictionary(np.zeros((k, geom.m), dtype=DTYPE)),
        tables=LookupTables.empty(geom.n, geom.kh, geom.kw), is_fc=is_fc, name=name,
    )


def _skeleton_dense(geom: ConvGeom, is_fc=False, name=None) -> DenseConvLayer:
    return DenseConvLayer(geom, np.zeros((geom.n, geom.m, geom.kh, geom.kw), dtype=DTYPE),
                          np.zeros(geom.n, dtype=DTYPE), is_fc=is_fc, name=name)


def toy_cnn_geoms(input_shape, classes, channels=(16, 32)):
    c, h, w = input_shape
    c1, c2 = channels
    g1 = ConvGeom(m=c, n=c1, kh=3, kw=3, h=h, w=w, stride=1, pad=1)
    g2 = ConvGeom(m=c1, n=c2, kh=3, kw=3, h=h // 2, w=w // 2, stride=1, pad=1)
    gfc = fc_as_conv(c2 * (h // 4) * (w // 4), classes)
    return [g1, g2, gfc]


def build_toy_cnn(input_shape, classes, cfg: TrainConfig, rng: np.random.Generator,
                  channels=(16, 32), dense: bool = False) -> LcnnModel:
    geoms = toy_cnn_geoms(input_shape, classes, channels)
    layers = []
    for i, geom in enumerate(geoms[:2]):
        if dense:
            layers.append(init_dense_layer(geom, rng))
        else:
            layers.append(init_layer(geom, dictionary_size(geom, cfg, i), cfg, rng))
        layers.append(ReluLayer())
        layers.append(MaxPoolLayer(2))
    if dense:
        layers.append(init_dense_layer(geoms[2], rng, is_fc=True))
    else:
        layers.append(init_layer(geoms[2], dictionary_size(geoms[2], cfg, 2), cfg, rng, is_fc=True))
    arch = "toy-cnn-dense" if dense else "toy-cnn"
    return LcnnModel(layers, input_shape, classes, arch=arch)


BLOCKNET_KS = {"stem": 3, "a": 6, "trans": 6, "b": 12, "fc": 9}


def _rescale_dictionary_atoms(model: LcnnModel) -> None:
    """Grow each dictionary so composed weights start at Glorot variance.

    Drawing both D and P at sigma leaves the composed filter entries at
    ~ k * sigma^4 variance, which attenuates activations multiplicatively
    with depth; scaling D by 1 / (sigma * sqrt(k)) restores sigma^2 (atoms
    end up near unit norm, the usual dictionary-learning convention).
    """
    import math

    from .training import layer_sigma

    for layer in model.lcnn_layers():
        sigma = layer_sigma(layer.geom)
        layer.dict.data *= 1.0 / (sigma * math.sqrt(layer.dict.k))


def build_blocknet(blocks_per_type: int, input_shape, classes, cfg: TrainConfig,
                   rng: np.random.Generator) -> LcnnModel:
    """Small block-structured net; channel width doubles at the type boundary.

    blocks_per_type=1 gives the shallow variant, 2 the deep one; every layer
    of the deep net has a same-(m, k) counterpart in the shallow net, so
    dictionaries transfer one-to-one.  Dictionaries are rescaled to atom
    norm after init; without that, five stacked lookup layers attenuate the
    forward signal too much to train in a small iteration budget.
    """
    c, h, w = input_shape
    ks = dict(BLOCKNET_KS)
    if cfg.k_list is not None:
        ks = dict(zip(("stem", "a", "trans", "b", "fc"), cfg.k_list))
    layers = [init_layer(ConvGeom(m=c, n=8, kh=3, kw=3, h=h, w=w, pad=1), ks["stem"], cfg, rng),
              ReluLayer()]
    for _ in range(blocks_per_type):
        layers.append(init_layer(ConvGeom(m=8, n=8, kh=3, kw=3, h=h, w=w, pad=1), ks["a"], cfg, rng))
        layers.append(ReluLayer())
    layers.append(MaxPoolLayer(2))
    h2, w2 = h // 2, w // 2
    layers.append(init_layer(ConvGeom(m=8, n=16, kh=3, kw=3, h=h2, w=w2, pad=1), ks["trans"], cfg, rng))
    layers.append(ReluLayer())
    for _ in range(blocks_per_type):
        layers.append(init_layer(ConvGeom(m=16, n=16, kh=3, kw=3, h=h2, w=w2, pad=1), ks["b"], cfg, rng))
        layers.append(ReluLayer())
    layers.append(MaxPoolLayer(2))
    feat = 16 * (h2 // 2) * (w2 // 2)
    layers.append(init_layer(fc_as_conv(feat, classes), ks["fc"], cfg, rng, is_fc=True))
    model = LcnnModel(layers, input_shape, classes, arch=f"blocknet-{blocks_per_type}")
    _rescale_dictionary_atoms(model)
    return model


def build_alexnet_template(classes: int = 1000) -> LcnnModel:
    """Classic 8-layer geometry at 3x227x227 with small-dictionary defaults;
    the final classifier stays dense."""
    L = []
    L.append(_skeleton_lcnn(ConvGeom(m=3, n=96, kh=11, kw=11, h=227, w=227, stride=4), 3, name="conv1"))
    L.append(ReluLayer())
    L.append(MaxPoolLayer(3, 2))
    L.append(_skeleton_lcnn(ConvGeom(m=96, n=256, kh=5, kw=5, h=27, w=27, pad=2), 30, name="conv2"))
    L.append(ReluLayer())
    L.append(MaxPoolLayer(3, 2))
    L.append(_skeleton_lcnn(ConvGeom(m=256, n=384, kh=3, kw=3, h=13, w=13, pad=1), 30, name="conv3"))
    L.append(ReluLayer())
    L.append(_skeleton_lcnn(ConvGeom(m=384, n=384, kh=3, kw=3, h=13, w=13, pad=1), 30, name="conv4"))
    L.append(ReluLayer())
    L.append(_skeleton_lcnn(ConvGeom(m=384, n=256, kh=3, kw=3, h=13, w=13, pad=1), 30, name="conv5"))
    L.append(ReluLayer())
    L.append(MaxPoolLayer(3, 2))
    L.append(_skeleton_lcnn(fc_as_conv(256 * 6 * 6, 4096), 512, is_fc=True, name="fc6"))
    L.append(ReluLayer())
    L.append(_skeleton_lcnn(fc_as_conv(4096, 4096), 512, is_fc=True, name="fc7"))
    L.append(ReluLayer())
    L.append(_skeleton_dense(fc_as_conv(4096, classes), is_fc=True, name="fc8"))
    return LcnnModel(L, (3, 227, 227), classes, arch="alexnet-template")


def build_resnet18_template(classes: int = 1000) -> LcnnModel:
    """18 weight layers at 3x225x225 (225 keeps every stride division exact);
    block dictionaries double per stage: 16, 32, 64, 128."""
    L = [_skeleton_lcnn(ConvGeom(m=3, n=64, kh=7, kw=7, h=225, w=225, stride=2, pad=3), 3),
         ReluLayer(), MaxPoolLayer(3, 2, pad=1)]
    spec = [(64, 64, 16, 1, 57), (64, 128, 32, 2, 57), (128, 256, 64, 2, 29), (256, 512, 128, 2, 15)]
    for m_in, width, k, first_stride, size in spec:
        geoms = [ConvGeom(m=m_in, n=width, kh=3, kw=3, h=size, w=size,
                          stride=first_stride, pad=1)]
        out_size = geoms[0].h_out
        for _ in range(3):
            geoms.append(ConvGeom(m=width, n=width, kh=3, kw=3, h=out_size, w=out_size, pad=1))
        for g in geoms:
            L.append(_skeleton_lcnn(g, k))
            L.append(ReluLayer())
    L.append(GlobalAvgPoolLayer())
    L.append(_skeleton_lcnn(fc_as_conv(512, classes), 512, is_fc=True))
    return LcnnModel(L, (3, 225, 225), classes, arch="resnet18-template")


def build_model(arch: str, input_shape=None, classes: int | None = None,
                cfg: TrainConfig | None = None, rng: np.random.Generator | None = None,
                channels=(16, 32)) -> LcnnModel:
    if arch in ("toy-cnn", "toy-cnn-dense", "blocknet-1", "blocknet-2"):
        if cfg is None or rng is None or input_shape is None or classes is None:
            raise ConfigError(f"arch {arch!r} needs input shape, classes, train config and seed")
        if arch.startswith("toy-cnn"):
            return build_toy_cnn(input_shape, classes, cfg, rng, channels=channels,
                                 dense=arch.endswith("dense"))
        return build_blocknet(int(arch[-1]), input_shape, classes, cfg, rng)
    if arch == "alexnet-template":
        return build_alexnet_template(classes or 1000)
    if arch == "resnet18-template":
        return build_resnet18_template(classes or 1000)
    raise ConfigError(f"unknown architecture {arch!r}; known: {', '.join(TEMPLATES)}")
