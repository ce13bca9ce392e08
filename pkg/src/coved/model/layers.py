"""Parameter containers and the recurrent/feed-forward layers of the model."""

from __future__ import annotations

import numpy as np

from ..numcore import GRUParams, Parameter, Tensor, linear, take_rows, tanh
from ..numcore.functional import gru_step

INIT_SCALE = 0.08


class Module:
    """Walks attributes to name parameters hierarchically (``a.b.weight``)."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = flag


def _uniform(rng: np.random.Generator, *shape, scale: float = INIT_SCALE) -> Parameter:
    return Parameter(rng.uniform(-scale, scale, size=shape))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, d_in, d_out)
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class MLP(Module):
    """Two-layer feed-forward net with a tanh hidden layer."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(tanh(self.hidden(x)))


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, init: np.ndarray | None = None):
        self.weight = Parameter(init if init is not None else rng.uniform(-INIT_SCALE, INIT_SCALE, (vocab_size, dim)))

    def __call__(self, ids) -> Tensor:
        return take_rows(self.weight, ids)


class GRU(Module):
    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_in, self.d_hidden = d_in, d_hidden
        for gate in ("update", "reset", "cand"):
            setattr(self, f"w_{gate}", _uniform(rng, d_in, d_hidden))
            setattr(self, f"u_{gate}", _uniform(rng, d_hidden, d_hidden))
            setattr(self, f"b_{gate}", Parameter(np.zeros(d_hidden)))

    @property
    def params(self) -> GRUParams:
        return GRUParams(self.w_update, self.u_update, self.b_update, self.w_reset, self.u_reset,
                         self.b_reset, self.w_cand, self.u_cand, self.b_cand)

    def project(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Input terms of the three gates for a whole ``[..., d_in]`` block at once."""
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.d_in)
        return tuple(
            linear(flat, getattr(self, f"w_{g}"), getattr(self, f"b_{g}")).reshape(*lead, self.d_hidden)
            for g in ("update", "reset", "cand")
        )

    def run(self, x: Tensor, h0: Tensor, mask: np.ndarray | None = None) -> list[Tensor]:
        """Unroll over axis 1 of ``x`` ``[N, T, d_in]``; returns the ``T`` states.

        Where ``mask[:, t] == 0`` the state is carried over unchanged, so
        trailing padding never alters the final state.
        """
        xu, xr, xn = self.project(x)
        params = self.params
        h = h0
        states = []
        for t in range(x.shape[1]):
            new = gru_step(xu[:, t], xr[:, t], xn[:, t], h, params)
            if mask is not None and not mask[:, t].all():
                m = mask[:, t:t + 1]
                new = h + (new - h) * m
            h = new
            states.append(h)
        return states
