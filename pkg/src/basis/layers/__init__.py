from basis.layers.attention import CausalSelfAttention
from basis.layers.dense import (
    BasisCache,
    Dense,
    DenseParams,
    ExactCache,
    basis_dense_backward,
    basis_dense_forward,
    dense_backward_exact,
    dense_forward_exact,
)
from basis.layers.ops import (
    embedding_backward,
    embedding_forward,
    gelu_backward,
    gelu_forward,
    layernorm_backward,
    layernorm_forward,
    mse_loss,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)

__all__ = [
    "BasisCache", "CausalSelfAttention", "Dense", "DenseParams", "ExactCache",
    "basis_dense_backward", "basis_dense_forward", "dense_backward_exact",
    "dense_forward_exact", "embedding_backward", "embedding_forward",
    "gelu_backward", "gelu_forward", "layernorm_backward", "layernorm_forward",
    "mse_loss", "relu_backward", "relu_forward", "softmax_cross_entropy",
]
