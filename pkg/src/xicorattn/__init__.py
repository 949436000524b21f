"""Differentiable Chatterjee-xi attention and a desk-scale forecasting harness."""

from .attention import (
    AttentionConfig,
    AttentionOutput,
    AttentionWeights,
    attention_forward,
    grad_check_attention,
    score_matrix,
    xi_soft,
)
from .autograd import Tensor, backward, custom_grad, matmul, no_grad, row_softmax
from .rankstats import correlation_matrix, pearson, xi_exact
from .softrank import isotonic_regression, soft_rank, soft_rank_backward
from .softsort import Permutation, apply_ascending, permutation_matrix, soft_sort

__version__ = "0.1.0"
