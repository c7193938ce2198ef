"""Lookup-based convolutional network engine.

Weight filters are sparse linear combinations over a small per-layer
dictionary.  The package provides the training path (sparse combiner tensors
with an l1/threshold schedule), the fast inference path (dictionary
precompute + lookup-and-scale), dictionary transfer and few-shot protocols,
and exact multiply-add accounting for speedup reports.
"""

from .tensor_ops import (
    ConvGeom,
    conv1x1_all,
    conv2d_as_shifted_sum,
    conv2d_dense,
    one_hot_kernel,
    shift2d,
    tap_shift_offsets,
)
from .layer import (
    Dictionary,
    LcnnConvLayer,
    LookupTables,
    SparseCombiner,
    fc_as_conv,
    forward_lookup,
    forward_sparse,
    ic_to_p,
    p_to_ic,
    reconstruct_weights,
)
from .model import (
    DenseConvLayer,
    GlobalAvgPoolLayer,
    LcnnModel,
    MaxPoolLayer,
    ReluLayer,
)
from .training import (
    LayerGrads,
    TrainConfig,
    apply_threshold,
    backward,
    finite_diff_check,
    init_layer,
    l1_of_p,
    project_top_s,
    train_step,
)
from .transfer import (
    FewShotEpisode,
    TransferPlan,
    few_shot_finetune,
    freeze_dictionaries,
    replace_head,
    transfer_dictionaries,
)
from .perf import OpCount, OpCounter, flops_dense, flops_lcnn, speedup_report
from .modelfile import load_model, save_model

__version__ = "0.1.0"
