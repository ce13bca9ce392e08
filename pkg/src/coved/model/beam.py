"""Beam search over the decoder, scored by summed log-probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import EOU_ID, PAD_ID, START_ID, UNK_ID
from ..numcore import log_softmax


@dataclass
class Hypothesis:
    tokens: list[int]      # generated ids, ending with EOU unless cut at max_len
    score: float           # summed log-probability


def blocked_ids(block_unk: bool = True) -> list[int]:
    """Ids the decoder may never emit: padding, the start symbol and (optionally) unk."""
    return [PAD_ID, START_ID] + ([UNK_ID] if block_unk else [])


def step_log_probs(logits: np.ndarray, block_unk: bool = True) -> np.ndarray:
    logits = logits.copy()
    logits[..., blocked_ids(block_unk)] = -np.inf
    return log_softmax(logits)


def beam_search(model, cond: np.ndarray, beam: int = 5, max_len: int = 30,
                block_unk: bool = True, n_best: int = 1) -> list[Hypothesis]:
    """Most probable completed responses for one conditioning vector.

    Candidates from all live hypotheses compete for ``beam - len(finished)``
    slots; a chosen candidate ending in EOU (or reaching ``max_len``) is
    finished and shrinks the live beam.  No length normalisation.  With
    ``beam=1`` this is exactly greedy decoding.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    cond = np.asarray(cond, dtype=float).reshape(-1)
    live_tokens: list[list[int]] = [[]]
    live_scores = np.zeros(1)
    live_h = model.decoder_start(cond[None])
    last = np.array([START_ID])
    finished: list[Hypothesis] = []

    for t in range(max_len):
        slots = beam - len(finished)
        if slots <= 0 or not live_tokens:
            break
        h_new, logits = model.decoder_step(live_h, last, cond)
        logp = step_log_probs(logits, block_unk)
        total = (live_scores[:, None] + logp).reshape(-1)
        vocab = logp.shape[1]
        order = np.argsort(-total, kind="stable")
        order = order[np.isfinite(total[order])][:slots]
        next_tokens, next_scores, keep_rows, next_last = [], [], [], []
        for flat in order:
            row, tok = divmod(int(flat), vocab)
            seq = live_tokens[row] + [tok]
            if tok == EOU_ID or t == max_len - 1:
                finished.append(Hypothesis(seq, float(total[flat])))
            else:
                next_tokens.append(seq)
                next_scores.append(total[flat])
                keep_rows.append(row)
                next_last.append(tok)
        live_tokens = next_tokens
        live_scores = np.array(next_scores)
        live_h = h_new[keep_rows] if keep_rows else h_new[:0]
        last = np.array(next_last, dtype=np.int64)

    finished.sort(key=lambda h: -h.score)
    return finished[:n_best]


def greedy_decode(model, cond: np.ndarray, max_len: int = 30, block_unk: bool = True) -> Hypothesis:
    """Arg-max token at every step until EOU or ``max_len``."""
    cond = np.asarray(cond, dtype=float).reshape(-1)
    h = model.decoder_start(cond[None])
    tok = START_ID
    seq, score = [], 0.0
    for _ in range(max_len):
        h, logits = model.decoder_step(h, np.array([tok]), cond)
        logp = step_log_probs(logits[0], block_unk)
        tok = int(np.argmax(logp))
        seq.append(tok)
        score += float(logp[tok])
        if tok == EOU_ID:
            break
    return Hypothesis(seq, score)
