"""Complex MPS/MPO arithmetic."""

from . import io

from .operator import (
    TensorTrainOperator,
    adjoint,
    apply_operator,
    compose_operators,
    compress_operator,
    diag_operator,
    identity_operator,
    kron_operators,
    operator_from_dense,
    operator_inner,
    operator_norm_fro,
    operator_to_dense,
    pointwise_multiply,
    scale_add_operators,
    sum_operators,
    transpose,
    zero_operator,
)
from .state import (
    TensorTrainState,
    add,
    basis_label,
    canonicalize,
    compression_rate,
    constant_state,
    decode_grid,
    decode_state,
    encode_state,
    grid_one_hot,
    inner,
    isometry_residuals,
    linear_combination,
    norm,
    nvps,
    one_hot,
    product_state,
    truncate,
    zero_state,
)
from .solvers import SolveResult, SolverStagnation, als_solve, residual_norm
from .truncation import DEFAULT_POLICY, LOSSLESS, TruncationPolicy

__all__ = [
    "io",
    "DEFAULT_POLICY", "LOSSLESS", "SolveResult", "SolverStagnation", "TensorTrainOperator", "TensorTrainState", "TruncationPolicy",
    "add", "adjoint", "als_solve", "apply_operator", "basis_label", "canonicalize", "compose_operators",
    "compress_operator", "compression_rate", "constant_state", "decode_grid", "decode_state",
    "diag_operator", "encode_state", "grid_one_hot", "identity_operator", "inner",
    "isometry_residuals", "kron_operators", "linear_combination", "norm", "nvps", "one_hot",
    "operator_from_dense", "operator_inner", "operator_norm_fro", "operator_to_dense",
    "pointwise_multiply", "product_state", "residual_norm", "scale_add_operators", "sum_operators", "transpose",
    "truncate", "zero_operator", "zero_state",
]
