"""Finite-difference checks of every training objective on a tiny model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .corpus import EOU_ID, Slice, make_batch
from .model import DialogueModel, ModelConfig
from .numcore import GradCheckReport, grad_check, make_rng
from .numcore.rng import INIT
from .objectives import (
    ObjectiveConfig,
    ae_phase_loss,
    cvae_phase_loss,
    hred_loss,
    kl_anneal_weight,
    vhred_loss,
)

TINY = dict(embed_dim=4, token_hidden=5, context_hidden=6, decoder_hidden=5, latent_dim=3, mlp_hidden=4)
TINY_VOCAB = 9
# At the training init scale most gradients of the tiny model are ~1e-10,
# below what h=1e-5 central differences resolve on a loss of order 10;
# a wider init keeps the gates in their active range.
CHECK_INIT_SCALE = 0.5
# Round-off in a float64 loss of order 10-30 makes h=1e-5 central
# differences uncertain by ~1e-10 absolute; with this floor, gradients under
# 1e-5 must match to 1e-9 absolute, still well above that noise.
CHECK_FLOOR = 1e-5


@dataclass(frozen=True)
class Combo:
    name: str
    arch: str
    phase: str = "single"       # single | cvae | ae
    kla: bool = False
    do: bool = False
    fb: bool = False
    fb_all: bool = False
    bow: bool = False
    ss_mode: str | None = None  # None = no scheduled sampling
    alpha: float = 5.0


COMBOS = (
    Combo("hred", "hred"),
    Combo("hred+do", "hred", do=True),
    Combo("vhred", "vhred"),
    Combo("vhred+kla", "vhred", kla=True),
    Combo("vhred+kla+do", "vhred", kla=True, do=True),
    Combo("vhred+kla+bow", "vhred", kla=True, bow=True),
    Combo("vhred+fb", "vhred", fb=True),
    Combo("vhred+fb-all", "vhred", fb_all=True),
    Combo("co/cvae", "co", phase="cvae"),
    Combo("co/ae", "co", phase="ae"),
    Combo("co/ae+hinge-active", "co", phase="ae", alpha=0.0),
    Combo("co+ss-coin/ae", "co", phase="ae", ss_mode="coin", alpha=0.0),
    Combo("co+ss-mix/ae", "co", phase="ae", ss_mode="mix", alpha=0.0),
    Combo("co+ss+do/ae", "co", phase="ae", ss_mode="coin", do=True, alpha=0.0),
    Combo("co+bow/ae", "co", phase="ae", bow=True, alpha=0.0),
    Combo("co+ss(joint)/cvae", "co", phase="cvae", ss_mode="coin"),
    Combo("co+ss(joint)/ae", "co", phase="ae", ss_mode="coin", alpha=0.0),
)


def tiny_batch():
    rows = [
        [5, 6, EOU_ID, 7, 8, 5, EOU_ID, 6, EOU_ID],
        [7, EOU_ID, 8, 8, 6, EOU_ID, 5, 7],
    ]
    slices = [Slice(str(i), 0, []) for i in range(len(rows))]
    return make_batch([np.array(r) for r in rows], slices, slice_len=10)


def _loss_fn(model: DialogueModel, combo: Combo, batch):
    obj = ObjectiveConfig(
        alpha=combo.alpha, free_bits=0.01 if combo.fb else 0.0, free_bits_all=5.0 if combo.fb_all else 0.0,
        dropout=0.25 if combo.do else 0.0, bow=combo.bow,
    )
    weight = kl_anneal_weight(300, 1000) if combo.kla else 1.0

    def loss():
        rng = make_rng(7)       # same dropout, noise and coin flips on every call
        if combo.arch == "hred":
            return hred_loss(model.forward_hred(batch, obj.dropout, rng))
        if combo.arch == "vhred":
            return vhred_loss(model.forward_vhred(batch, rng, obj.dropout), weight, obj)
        if combo.phase == "cvae":
            return cvae_phase_loss(model.forward_co(batch, "cvae", rng))
        p = 0.5 if combo.ss_mode else 0.0
        comp = model.forward_co(batch, "ae", rng, keep_prob=p, ss_mode=combo.ss_mode or "coin", dropout=obj.dropout)
        return ae_phase_loss(comp, combo.alpha)

    return loss


def check_combo(combo: Combo, corrupt: bool = False, seed: int = 0, max_entries: int | None = None) -> GradCheckReport:
    cfg = ModelConfig(vocab_size=TINY_VOCAB, arch=combo.arch, bow=combo.bow, **TINY)
    model = DialogueModel(cfg, make_rng(seed, INIT))
    init = make_rng(seed + 1, INIT)
    for p in model.parameters().values():
        p.data[...] = init.uniform(-CHECK_INIT_SCALE, CHECK_INIT_SCALE, p.shape)
    if combo.arch != "co":
        params = model.parameters()
    else:
        trained = model.phi() if combo.phase == "cvae" else model.theta()
        frozen = model.theta() if combo.phase == "cvae" else model.phi()
        for p in frozen.values():
            p.requires_grad = False
        params = trained
    return grad_check(_loss_fn(model, combo, tiny_batch()), params, max_entries=max_entries,
                      rng=make_rng(seed, INIT), corrupt=corrupt, floor=CHECK_FLOOR)


def run_suite(corrupt: bool = False, max_entries: int | None = None, out=print) -> bool:
    """Check every combination; prints one line each and returns True iff all pass."""
    ok = True
    worst = 0.0
    start = time.perf_counter()
    for combo in COMBOS:
        report = check_combo(combo, corrupt=corrupt, max_entries=max_entries)
        ok &= report.passed
        worst = max(worst, report.max_rel_error)
        out(f"{combo.name:22s} {report.summary()} worst={report.worst}")
    out(f"{'ALL PASS' if ok else 'FAILED'} max_rel_error={worst:.3e} seconds={time.perf_counter() - start:.1f}")
    return ok
