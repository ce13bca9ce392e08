"""Minimal float64 tensor library with reverse-mode autodiff."""

from .checkpoint import CheckpointError, load_container, save_container
from .functional import (
    GRUParams,
    GaussianParams,
    clamp_logvar,
    gaussian_kl,
    gru_cell,
    gru_step,
    linear,
    log_softmax,
    reparameterize,
    softmax_cross_entropy,
)
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, AdamState, NonFiniteGradient, adam_step
from .rng import keyed_rng, make_rng
from .tensor import (
    Graph,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    clamp,
    concat,
    exp,
    getitem,
    log,
    matmul,
    maximum,
    no_grad,
    relu,
    reshape,
    sigmoid,
    stack,
    take_rows,
    tanh,
)

__all__ = [name for name in dir() if not name.startswith("_")]
