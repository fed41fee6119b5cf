"""Dense tensor arithmetic with reverse-mode differentiation."""

from .checkpoint import CheckpointError, load_params, save_params
from .gradcheck import grad_check
from .nn import MLP, LayerNorm, Linear, Module, parameter
from .optim import SGD, AdamW, MultiStepLR
from .ops import (
    DimensionError,
    add,
    concat_lastdim,
    cross_entropy,
    elementwise,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    repeat_cols,
    reshape,
    segment_attention,
    segmented_reduce,
    sigmoid,
    softmax_rows,
    sub,
    total,
    weighted_gather,
)
from .segments import PairList, SegmentMap
from .tensor import (
    NumericError,
    Tensor,
    as_tensor,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
    zero_grads,
)
