"""Training objectives and schedules.

All batch losses are normalised per response (utterance): summed token NLL
and summed KL are divided by the number of utterances in the batch.  The
KL used by free bits and by the hinge is the batch mean of the per-utterance
KL, matching what the trainer reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, maximum, softmax_cross_entropy, take_rows

NATS_PER_BIT = math.log(2.0)


@dataclass
class ObjectiveConfig:
    alpha: float = 5.0                 # KL hinge level for the AE phase (nats)
    free_bits: float = 0.0             # per-dimension floor (0 disables)
    free_bits_all: float = 0.0         # floor on the summed KL (0 disables)
    free_bits_unit: str = "nats"       # unit of free_bits_all: "nats" or "bits"
    kl_weight_mode: str = "fixed"      # "annealed" or "fixed"
    kl_weight: float = 1.0             # used in fixed mode
    anneal_horizon: int = 12000
    dropout: float = 0.0
    dropout_mode: str = "unk"
    bow: bool = False
    ss_mode: str = "coin"              # "coin" or "mix"
    ss_k: float = 2500.0
    scheduled_sampling: bool = False

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.free_bits < 0 or self.free_bits_all < 0:
            raise ValueError("free-bits budgets must be >= 0")
        if self.free_bits and self.free_bits_all:
            raise ValueError("choose per-dimension or total free bits, not both")
        if self.free_bits_unit not in ("nats", "bits"):
            raise ValueError("free_bits_unit must be 'nats' or 'bits'")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout rate must lie in [0, 1]")
        if self.kl_weight_mode not in ("annealed", "fixed"):
            raise ValueError("kl_weight_mode must be 'annealed' or 'fixed'")
        if self.kl_weight_mode == "annealed" and self.anneal_horizon <= 0:
            raise ValueError("anneal_horizon must be positive")
        if self.ss_mode not in ("coin", "mix"):
            raise ValueError("ss_mode must be 'coin' or 'mix'")
        if self.scheduled_sampling and self.ss_k <= 0:
            raise ValueError("scheduled-sampling k must be positive")

    @property
    def total_budget_nats(self) -> float:
        scale = NATS_PER_BIT if self.free_bits_unit == "bits" else 1.0
        return self.free_bits_all * scale


def keep_prob(i: float, k: float) -> float:
    """Linear decay ``max(1 - i/k, 0)`` of the chance to feed the true encoding."""
    if k <= 0:
        raise ValueError("k must be positive")
    if i < 0:
        raise ValueError("step must be non-negative")
    return max(1.0 - i / k, 0.0)


def kl_anneal_weight(step: float, horizon: float) -> float:
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return min(step / horizon, 1.0)


def free_bits(kl_per_dim: Tensor, budget: float, mode: str = "dim") -> Tensor:
    """Clamp KL from below.

    ``mode="dim"``: ``sum_d max(budget, kl_d)``; ``mode="total"``:
    ``max(budget, sum_d kl_d)``.  Clamped entries pass no gradient.
    ``kl_per_dim`` is ``[D]`` or ``[N, D]`` (averaged over the rows first).
    """
    if budget < 0:
        raise ValueError("free-bits budget must be >= 0")
    kl = kl_per_dim.mean(axis=0) if kl_per_dim.ndim == 2 else kl_per_dim
    if budget == 0:
        return kl.sum()
    if mode == "dim":
        return maximum(kl, budget).sum()
    if mode == "total":
        return maximum(kl.sum(), budget)
    raise ValueError(f"unknown free-bits mode {mode!r}")


def bow_loss(logits: Tensor, bags) -> Tensor:
    """Sum over responses of ``-log softmax(logits_i)[w]`` for every ``w`` in bag ``i``.

    ``logits`` is ``[N, V]``, one shared prediction per response; ``bags``
    holds N id sequences.  Empty bags contribute 0.
    """
    rows = np.concatenate([np.full(len(b), i, dtype=np.int64) for i, b in enumerate(bags)] or [np.zeros(0, np.int64)])
    if rows.size == 0:
        return Tensor(0.0)
    words = np.concatenate([np.asarray(b, dtype=np.int64) for b in bags])
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    return softmax_cross_entropy(take_rows(logits, rows), words).sum()


def kl_term(kl_dims: Tensor, cfg: ObjectiveConfig) -> Tensor:
    """Per-utterance KL as it enters the training loss (free bits applied)."""
    if cfg.free_bits > 0:
        return free_bits(kl_dims, cfg.free_bits, "dim")
    if cfg.free_bits_all > 0:
        return free_bits(kl_dims, cfg.total_budget_nats, "total")
    return kl_dims.sum() * (1.0 / kl_dims.shape[0])


def reconstruction_loss(comp) -> Tensor:
    loss = comp.nll * (1.0 / comp.n_utts)
    if comp.bow is not None:
        loss = loss + comp.bow * (1.0 / comp.n_utts)
    return loss


def hred_loss(comp) -> Tensor:
    return comp.nll * (1.0 / comp.n_utts)


def vhred_loss(comp, weight: float, cfg: ObjectiveConfig) -> Tensor:
    """``NLL + w * KL (+ BOW)`` per utterance; free bits applied to the KL when set."""
    return reconstruction_loss(comp) + kl_term(comp.kl_dims, cfg) * weight


def negative_elbo(comp) -> float:
    """Reported bound: raw KL, weight 1, no auxiliary losses, per utterance."""
    return (float(comp.nll.data) + comp.kl_sum) / comp.n_utts


def cvae_phase_loss(comp) -> Tensor:
    """``KL(q(eps|z~,c) || p(eps|c)) + 0.5 * ||g(eps) - z~||^2`` per utterance."""
    return (comp.kl_dims.sum() + comp.recon) * (1.0 / comp.n_utts)


def ae_phase_loss(comp, alpha: float) -> Tensor:
    """``max(alpha, KL) + NLL`` per utterance; the hinge passes gradient only above alpha."""
    kl = comp.kl_dims.sum() * (1.0 / comp.n_utts)
    return maximum(kl, alpha) + reconstruction_loss(comp)
