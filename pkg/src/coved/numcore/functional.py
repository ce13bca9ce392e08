"""Neural-network primitives built on :mod:`coved.numcore.tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, _result, as_tensor, clamp, exp, matmul, sigmoid, tanh

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Plain-array log-softmax over the last axis (no graph)."""
    shift = logits - logits.max(axis=-1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """``-log softmax(logits)[target]`` with a max-shift for stability.

    ``logits`` of shape ``[V]`` with an integer target gives a scalar; shape
    ``[N, V]`` with ``N`` targets gives the ``N`` per-row losses.
    """
    logits = as_tensor(logits)
    tgt = np.asarray(target, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.ndim == 1:
        if tgt.ndim != 0:
            raise ShapeError(f"expected a single target for logits of shape {logits.shape}")
    elif logits.ndim != 2 or tgt.shape != (logits.shape[0],):
        raise ShapeError(f"targets of shape {tgt.shape} do not match logits {logits.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
        raise IndexError(f"target id out of range for vocabulary of size {vocab}")

    x = logits.data
    shift = x - x.max(axis=-1, keepdims=True)
    expd = np.exp(shift)
    total = expd.sum(axis=-1, keepdims=True)
    if x.ndim == 1:
        loss = np.log(total[0]) - shift[tgt]
    else:
        rows = np.arange(x.shape[0])
        loss = np.log(total[:, 0]) - shift[rows, tgt]

    def backward(g):
        probs = expd / total
        if x.ndim == 1:
            probs[tgt] -= 1.0
            return (probs * g,)
        probs[rows, tgt] -= 1.0
        return (probs * g[:, None],)

    return _result(np.asarray(loss, dtype=DTYPE), (logits,), backward, "softmax_xent")


@dataclass
class GRUParams:
    """Weights of one GRU cell; ``w_*`` act on the input, ``u_*`` on the state."""

    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    @property
    def input_dim(self) -> int:
        return self.w_update.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.u_update.shape[0]

    def check(self) -> None:
        d_in, d_h = self.input_dim, self.hidden_dim
        for name, t, shape in (
            ("w_update", self.w_update, (d_in, d_h)),
            ("w_reset", self.w_reset, (d_in, d_h)),
            ("w_cand", self.w_cand, (d_in, d_h)),
            ("u_update", self.u_update, (d_h, d_h)),
            ("u_reset", self.u_reset, (d_h, d_h)),
            ("u_cand", self.u_cand, (d_h, d_h)),
            ("b_update", self.b_update, (d_h,)),
            ("b_reset", self.b_reset, (d_h,)),
            ("b_cand", self.b_cand, (d_h,)),
        ):
            if t.shape != shape:
                raise ShapeError(f"GRU parameter {name} has shape {t.shape}, expected {shape}")


def gru_step(xu: Tensor, xr: Tensor, xn: Tensor, h: Tensor, p: GRUParams) -> Tensor:
    """One recurrence given the already-projected input terms ``x @ w_* + b_*``."""
    update = sigmoid(xu + matmul(h, p.u_update))
    reset = sigmoid(xr + matmul(h, p.u_reset))
    cand = tanh(xn + matmul(reset * h, p.u_cand))
    return h + update * (cand - h)


def gru_cell(x: Tensor, h: Tensor, params: GRUParams) -> Tensor:
    """Standard GRU: ``h' = (1 - u) * h + u * tanh(W x + U (r * h) + b)``.

    Works on a single vector ``[d_in]`` / ``[d_h]`` or on batches ``[N, d_in]``
    / ``[N, d_h]``.
    """
    x, h = as_tensor(x), as_tensor(h)
    params.check()
    if x.shape[-1] != params.input_dim or h.shape[-1] != params.hidden_dim:
        raise ShapeError(
            f"gru_cell: input {x.shape} / state {h.shape} do not match cell "
            f"({params.input_dim} -> {params.hidden_dim})"
        )
    xu = linear(x, params.w_update, params.b_update)
    xr = linear(x, params.w_reset, params.b_reset)
    xn = linear(x, params.w_cand, params.b_cand)
    return gru_step(xu, xr, xn, h, params)


@dataclass
class GaussianParams:
    """Diagonal Gaussian given by its mean and log-variance."""

    mean: Tensor
    logvar: Tensor

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ShapeError(f"mean {self.mean.shape} and logvar {self.logvar.shape} differ")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @classmethod
    def standard(cls, shape) -> "GaussianParams":
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))

    def detach(self) -> "GaussianParams":
        return GaussianParams(self.mean.detach(), self.logvar.detach())


def clamp_logvar(logvar: Tensor) -> Tensor:
    return clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


def reparameterize(g: GaussianParams, noise) -> Tensor:
    """``mean + exp(logvar / 2) * noise``, differentiable in mean and logvar."""
    noise = as_tensor(noise)
    if noise.shape != g.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != gaussian shape {g.mean.shape}")
    std = exp(clamp_logvar(g.logvar) * 0.5)
    return g.mean + std * noise


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> Tensor:
    """Per-dimension KL(q || p) between diagonal Gaussians, in nats."""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"gaussian_kl: dimension mismatch {q.mean.shape} vs {p.mean.shape}")
    lq, lp = clamp_logvar(q.logvar), clamp_logvar(p.logvar)
    diff = q.mean - p.mean
    kl = 0.5 * ((lp - lq) + (exp(lq) + diff * diff) / exp(lp) - 1.0)
    # rounding can leave -1e-17 where q ~= p
    return clamp(kl, 0.0, None)
