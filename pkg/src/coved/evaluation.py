"""Likelihood metrics, embedding similarity metrics and latent sample dumps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import DEFAULT_SLICE_LEN, EOU_ID, EmbeddingTable, Slice, Vocab, iter_batches
from .model import DialogueModel, beam_search
from .numcore import make_rng, no_grad
from .numcore.rng import GENERATE


@dataclass
class DatasetMetrics:
    nll_per_slice: float      # negative ELBO for latent models, averaged over slices
    ppl: float
    kl: float                 # mean summed KL per response, nats
    neg_elbo: float           # per response
    n_slices: int
    n_utts: int
    n_tokens: int
    is_bound: bool


def evaluate_dataset(model: DialogueModel, slices: Sequence[Slice], vocab: Vocab, batch_size: int = 128,
                     eval_seed: int = 0, slice_len: int = DEFAULT_SLICE_LEN) -> DatasetMetrics:
    """One pass with drop-out off and KL weight 1.

    Totals are accumulated globally (token-weighted), so the result does not
    depend on how the slices are grouped into batches.  Latent noise is keyed
    by slice id, so repeated calls give identical numbers.
    """
    if not slices:
        raise ValueError("cannot evaluate an empty dataset")
    nll = kl = 0.0
    n_slices = n_utts = n_tokens = 0
    with no_grad():
        for batch in iter_batches(slices, vocab, batch_size, None, slice_len):
            comp = model.forward(batch, eval_seed=eval_seed)
            nll += float(comp.nll.data)
            kl += comp.kl_sum
            n_slices += comp.n_slices
            n_utts += comp.n_utts
            n_tokens += comp.n_tokens
    bound = nll + kl
    return DatasetMetrics(
        nll_per_slice=bound / n_slices,
        ppl=math.exp(bound / n_tokens),
        kl=kl / n_utts,
        neg_elbo=bound / n_utts,
        n_slices=n_slices,
        n_utts=n_utts,
        n_tokens=n_tokens,
        is_bound=model.cfg.arch != "hred",
    )


def nll_ppl(model, slices, vocab, **kw) -> tuple[float, float]:
    m = evaluate_dataset(model, slices, vocab, **kw)
    return m.nll_per_slice, m.ppl


def kl_report(model, slices, vocab, **kw) -> float:
    if model.cfg.arch == "hred":
        return 0.0
    return evaluate_dataset(model, slices, vocab, **kw).kl


# ---------------------------------------------------------------------------
# embedding-based similarity


def _vectors(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray | None:
    vecs = [v for v in (table.get(t) for t in tokens) if v is not None]
    return np.stack(vecs) if vecs else None


def _cosine(a: np.ndarray, b: np.ndarray) -> float | None:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return None
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def embedding_average(cand: Sequence[str], ref: Sequence[str], table: EmbeddingTable) -> float | None:
    """Cosine between the mean word vectors; ``None`` if either side has no known word."""
    a, b = _vectors(cand, table), _vectors(ref, table)
    if a is None or b is None:
        return None
    return _cosine(a.mean(axis=0), b.mean(axis=0))


def _greedy_one_way(a: np.ndarray, b: np.ndarray) -> float:
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return float(np.clip(an @ bn.T, -1.0, 1.0).max(axis=1).mean())


def embedding_greedy(cand: Sequence[str], ref: Sequence[str], table: EmbeddingTable) -> float | None:
    """Greedy word matching by cosine, averaged over both directions."""
    a, b = _vectors(cand, table), _vectors(ref, table)
    if a is None or b is None:
        return None
    a = a[np.linalg.norm(a, axis=1) > 0]
    b = b[np.linalg.norm(b, axis=1) > 0]
    if not len(a) or not len(b):
        return None
    return 0.5 * (_greedy_one_way(a, b) + _greedy_one_way(b, a))


def extrema_vector(vecs: np.ndarray) -> np.ndarray:
    """Per dimension, the value of largest magnitude (sign kept; ties go positive)."""
    hi, lo = vecs.max(axis=0), vecs.min(axis=0)
    return np.where(hi >= -lo, hi, lo)


def embedding_extrema(cand: Sequence[str], ref: Sequence[str], table: EmbeddingTable) -> float | None:
    a, b = _vectors(cand, table), _vectors(ref, table)
    if a is None or b is None:
        return None
    return _cosine(extrema_vector(a), extrema_vector(b))


@dataclass
class EmbeddingScores:
    average: float
    greedy: float
    extrema: float
    pairs: int
    excluded: int


def embedding_scores(cands: Sequence[Sequence[str]], refs: Sequence[Sequence[str]],
                     table: EmbeddingTable) -> EmbeddingScores:
    """Corpus means over candidate/reference pairs; undefined pairs are excluded and counted."""
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidates vs {len(refs)} references")
    avg, greedy, ext = [], [], []
    excluded = 0
    for c, r in zip(cands, refs):
        scores = (embedding_average(c, r, table), embedding_greedy(c, r, table), embedding_extrema(c, r, table))
        if any(s is None for s in scores):
            excluded += 1
            continue
        avg.append(scores[0])
        greedy.append(scores[1])
        ext.append(scores[2])
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    return EmbeddingScores(mean(avg), mean(greedy), mean(ext), len(avg), excluded)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    values: dict[str, object] = field(default_factory=dict)

    def add_dataset(self, name: str, m: DatasetMetrics) -> None:
        self.values.update({
            f"{name}.ppl": m.ppl,
            f"{name}.kl": m.kl,
            f"{name}.nll": m.nll_per_slice,
            f"{name}.nll_is_bound": m.is_bound,
            f"{name}.neg_elbo_per_response": m.neg_elbo,
            f"{name}.slices": m.n_slices,
            f"{name}.tokens": m.n_tokens,
        })

    def add_embedding(self, s: EmbeddingScores) -> None:
        self.values.update({
            "embedding.average": s.average,
            "embedding.greedy": s.greedy,
            "embedding.extrema": s.extrema,
            "embedding.pairs": s.pairs,
            "embedding.excluded": s.excluded,
        })

    def lines(self) -> list[str]:
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [f"{k}={fmt(v)}" for k, v in self.values.items()]

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# generation and latent samples


def generate(model: DialogueModel, contexts: Sequence[Sequence[Sequence[str]]], vocab: Vocab, beam: int = 5,
             max_len: int = 30, seed: int = 0, n_best: int = 1, block_unk: bool = True) -> list[list[list[str]]]:
    """Beam-search responses per context; one prior latent draw per returned response.

    Returns, per context, ``n_best`` token lists (end marker stripped).
    """
    rng = make_rng(seed, GENERATE)
    out = []
    for turns in contexts:
        c = model.context_vector([vocab.encode(t) for t in turns])
        responses = []
        for _ in range(n_best):
            z = model.prior_latent(c, rng.standard_normal(model.cfg.latent_dim))
            cond = model.condition(z, c).data
            hyp = beam_search(model, cond, beam=beam, max_len=max_len, block_unk=block_unk)[0]
            ids = [t for t in hyp.tokens if t != EOU_ID]
            responses.append(vocab.decode(ids))
        out.append(responses)
    return out


@dataclass
class LatentDump:
    rows: list[tuple[str, str, np.ndarray]] = field(default_factory=list)

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for source, rid, vec in self.rows:
                fh.write("\t".join([source, rid] + [repr(float(x)) for x in vec]) + "\n")

    @classmethod
    def read_tsv(cls, path) -> "LatentDump":
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.split("\t")
            rows.append((parts[0], parts[1], np.array([float(x) for x in parts[2:]])))
        return cls(rows)


def sample_latents(model: DialogueModel, context: Sequence[Sequence[str]], vocab: Vocab, n_prior: int = 100,
                   n_posterior: int = 10, responses: Sequence[tuple[str, Sequence[str]]] = (),
                   seed: int = 0) -> LatentDump:
    """Latent draws for one context: ``n_posterior`` per response, then ``n_prior``.

    Posterior rows come grouped by response, in the order given.  Prior rows
    use ``-`` as the response id.
    """
    if model.cfg.arch == "hred":
        raise ValueError("hred has no latent variable to sample")
    rng = make_rng(seed, GENERATE)
    c = model.context_vector([vocab.encode(t) for t in context])
    d = model.cfg.latent_dim
    dump = LatentDump()
    for rid, tokens in responses:
        ids = vocab.encode(tokens)
        for _ in range(n_posterior):
            z = model.posterior_latent(c, ids, rng.standard_normal(d))
            dump.rows.append(("posterior", rid, z.data.copy()))
    for _ in range(n_prior):
        z = model.prior_latent(c, rng.standard_normal(d))
        dump.rows.append(("prior", "-", z.data.copy()))
    return dump
