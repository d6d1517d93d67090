"""Dense arithmetic, seeded sampling and reverse-mode autodiff."""

from dgz.tensor_core.autodiff import (
    Tape,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat_cols,
    current_tape,
    div,
    exp,
    grad,
    leaky_relu,
    log,
    mean,
    mul,
    neg,
    no_record,
    normalize_rows,
    pad_cols,
    power,
    relu,
    reshape,
    row_norm,
    slice_cols,
    sqrt,
    sub,
    transpose,
    tsum,
)
from dgz.tensor_core.linalg import as_matrix, cholesky_psd, matmul, sample_gaussian
from dgz.tensor_core.rng import Rng, mix64

__all__ = [
    "Rng",
    "Tape",
    "Tensor",
    "add",
    "as_matrix",
    "as_tensor",
    "broadcast_to",
    "cholesky_psd",
    "concat_cols",
    "current_tape",
    "div",
    "exp",
    "grad",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "mix64",
    "mul",
    "neg",
    "no_record",
    "normalize_rows",
    "pad_cols",
    "power",
    "relu",
    "reshape",
    "row_norm",
    "sample_gaussian",
    "slice_cols",
    "sqrt",
    "sub",
    "transpose",
    "tsum",
]
