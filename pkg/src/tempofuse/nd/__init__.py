"""Small reverse-mode autodiff over numpy arrays."""

from tempofuse.nd.rng import stream
from tempofuse.nd.tensor import (
    Gradients,
    Tape,
    Tensor,
    add,
    assert_all_finite,
    concat,
    cross_entropy_logits,
    embedding_lookup,
    gather,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    mean,
    mul,
    pad2d,
    record_op,
    repeat,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    sub,
    sum_,
    tensor,
    transpose,
    wrap,
)

__all__ = [
    "Gradients",
    "Tape",
    "Tensor",
    "add",
    "assert_all_finite",
    "concat",
    "cross_entropy_logits",
    "embedding_lookup",
    "gather",
    "gelu",
    "layer_norm",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "pad2d",
    "record_op",
    "repeat",
    "reshape",
    "scale",
    "slice_",
    "sigmoid",
    "softmax",
    "stream",
    "sub",
    "sum_",
    "tensor",
    "transpose",
    "wrap",
]
