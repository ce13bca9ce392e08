"""Hierarchical encoder-decoder with optional latent path.

Three architectures share one code path:

``hred``
    decoder conditioned on the dialogue context ``c`` only.
``vhred``
    a Gaussian latent ``z`` per response; posterior ``q(z | z~, c)`` from the
    response encoding ``z~`` and the context, learned prior ``p(z | c)``.
``co``
    collaborative model: the token encoder output ``z~`` is the target of a
    small conditional VAE over noise ``eps``.  The generator ``g(eps, c)``
    maps noise to the encoder space and the decoder sees either ``z~`` or
    ``g(eps, c)`` depending on the scheduled-sampling keep probability.

Parameters split into two groups: ``theta`` (embedding, both encoder GRUs,
decoder, bag-of-words head) and ``phi`` (prior, recognition and generator
networks).  For ``vhred`` both groups are trained together.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..corpus import EOU_ID, PAD_ID, RESERVED, START_ID, SliceBatch, word_dropout
from ..numcore import (
    GaussianParams,
    Parameter,
    Tensor,
    clamp_logvar,
    concat,
    gaussian_kl,
    keyed_rng,
    no_grad,
    reparameterize,
    softmax_cross_entropy,
    stack,
    take_rows,
    tanh,
)
from ..numcore.functional import gru_step
from .layers import GRU, MLP, Embedding, Linear, Module

ARCHS = ("hred", "vhred", "co")


class ConfigError(ValueError):
    """Inconsistent model / strategy configuration."""


@dataclass
class ModelConfig:
    vocab_size: int
    arch: str = "co"
    embed_dim: int = 300
    token_hidden: int = 512
    context_hidden: int = 1024
    decoder_hidden: int = 512
    latent_dim: int = 512
    mlp_hidden: int = 512
    bow: bool = False
    prior: str = "learned"            # or "standard"
    generator_context: bool = True

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if self.bow and self.arch == "hred":
            raise ConfigError("bag-of-words loss needs a latent variable; not available for hred")
        if self.prior not in ("learned", "standard"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        for name in ("vocab_size", "embed_dim", "token_hidden", "context_hidden",
                     "decoder_hidden", "latent_dim", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.vocab_size <= len(RESERVED):
            raise ConfigError("vocabulary has no real tokens")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @property
    def latent_out_dim(self) -> int:
        """Dimension of the latent vector the decoder is conditioned on."""
        if self.arch == "hred":
            return 0
        return self.latent_dim if self.arch == "vhred" else self.token_hidden


@dataclass
class Utterances:
    """All utterances of a batch, flattened, with their encodings."""

    spans: list[tuple[int, int, int]]
    targets: np.ndarray        # [N, L] int, PAD past each utterance end
    mask: np.ndarray           # [N, L]
    z_tilde: Tensor            # [N, token_hidden]
    context: Tensor            # [N, context_hidden]
    n_slices: int
    slice_uids: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.spans)

    @property
    def n_tokens(self) -> int:
        return int(self.mask.sum())


@dataclass
class Components:
    """Loss ingredients for one batch; sums over utterances / tokens."""

    nll: Tensor                        # scalar, summed over unmasked tokens
    n_tokens: int
    n_utts: int
    n_slices: int
    kl_dims: Tensor | None = None      # [N, D] per-utterance per-dimension KL
    bow: Tensor | None = None          # scalar, summed over bag tokens
    recon: Tensor | None = None        # scalar, CVAE-phase 0.5*||g(eps) - z~||^2 summed
    keep_prob: float | None = None
    fed_true: int = 0                  # utterances decoded from z~ (coin mode)
    token_nll: Tensor | None = None    # [N, L]

    @property
    def kl_sum(self) -> float:
        return 0.0 if self.kl_dims is None else float(self.kl_dims.data.sum())


class HierarchicalEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng, embedding_init=None):
        self.embedding = Embedding(cfg.vocab_size, cfg.embed_dim, rng, embedding_init)
        self.token_gru = GRU(cfg.embed_dim, cfg.token_hidden, rng)
        self.dialogue_gru = GRU(cfg.token_hidden, cfg.context_hidden, rng)


class LatentNetworks(Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.latent_dim
        if cfg.prior == "learned":
            self.prior = MLP(cfg.context_hidden, cfg.mlp_hidden, 2 * d, rng)
        self.recognition = MLP(cfg.token_hidden + cfg.context_hidden, cfg.mlp_hidden, 2 * d, rng)
        if cfg.arch == "co":
            g_in = d + (cfg.context_hidden if cfg.generator_context else 0)
            self.generator = MLP(g_in, cfg.mlp_hidden, cfg.token_hidden, rng)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, cond_dim: int, rng):
        self.init = Linear(cond_dim, cfg.decoder_hidden, rng)
        self.gru = GRU(cfg.embed_dim + cond_dim, cfg.decoder_hidden, rng)
        self.out = Linear(cfg.decoder_hidden, cfg.vocab_size, rng)


def _split_gaussian(out: Tensor, d: int) -> GaussianParams:
    return GaussianParams(out[..., :d], clamp_logvar(out[..., d:]))


def _broadcast_time(x: Tensor, steps: int) -> Tensor:
    n, k = x.shape
    return x.reshape(n, 1, k) + np.zeros((1, steps, 1))


class DialogueModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, embedding_init: np.ndarray | None = None):
        cfg.validate()
        self.cfg = cfg
        self.encoder = HierarchicalEncoder(cfg, rng, embedding_init)
        if cfg.arch != "hred":
            self.latent = LatentNetworks(cfg, rng)
        self.cond_dim = cfg.context_hidden + cfg.latent_out_dim
        self.decoder = Decoder(cfg, self.cond_dim, rng)
        if cfg.bow:
            self.bow = MLP(self.cond_dim, cfg.mlp_hidden, cfg.vocab_size, rng)

    # -- parameter groups -------------------------------------------------
    def named_parameters(self, prefix: str = ""):
        for key in ("encoder", "decoder", "bow", "latent"):
            mod = getattr(self, key, None)
            if mod is not None:
                yield from mod.named_parameters(f"{prefix}{key}.")

    def theta(self) -> dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if not n.startswith("latent.")}

    def phi(self) -> dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if n.startswith("latent.")}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ConfigError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            if arrays[name].shape != p.shape:
                raise ConfigError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
        for name, p in own.items():
            p.data[...] = arrays[name]

    # -- encoders ---------------------------------------------------------
    def encode_utterance(self, ids, mask=None) -> Tensor:
        """Final token-GRU state over each row of ``ids`` (``[L]`` or ``[N, L]``)."""
        ids = np.asarray(ids, dtype=np.int64)
        single = ids.ndim == 1
        ids2 = ids[None] if single else ids
        m = np.ones(ids2.shape) if mask is None else np.asarray(mask, dtype=float).reshape(ids2.shape)
        if ids2.shape[1] == 0 or np.any(m.sum(axis=1) == 0):
            raise ValueError("cannot encode an utterance with no unmasked tokens")
        emb = self.encoder.embedding(ids2)
        h0 = Tensor(np.zeros((ids2.shape[0], self.cfg.token_hidden)))
        z = self.encoder.token_gru.run(emb, h0, m)[-1]
        return z[0] if single else z

    def encode_context(self, vectors: Tensor) -> Tensor:
        """Dialogue-GRU state after consuming ``vectors`` ``[n, token_hidden]`` in order."""
        h = Tensor(np.zeros((1, self.cfg.context_hidden)))
        if vectors.shape[0] == 0:
            return h[0]
        states = self.encoder.dialogue_gru.run(vectors.reshape(1, vectors.shape[0], -1), h)
        return states[-1][0]

    def encode_batch(self, batch: SliceBatch) -> Utterances:
        spans = batch.utterance_spans()
        n = len(spans)
        width = max(e - s for _, s, e in spans)
        targets = np.full((n, width), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, width))
        for i, (row, s, e) in enumerate(spans):
            targets[i, : e - s] = batch.tokens[row, s:e]
            mask[i, : e - s] = 1.0
        z_tilde = self.encode_utterance(targets, mask)

        # place utterances on a [rows, turns] grid for the dialogue-level GRU
        rows = batch.size
        per_row = np.zeros(rows, dtype=np.int64)
        slot = np.zeros(n, dtype=np.int64)
        for i, (row, _, _) in enumerate(spans):
            slot[i] = per_row[row]
            per_row[row] += 1
        turns = int(per_row.max())
        grid = np.zeros((rows, turns), dtype=np.int64)
        grid_mask = np.zeros((rows, turns))
        for i, (row, _, _) in enumerate(spans):
            grid[row, slot[i]] = i
            grid_mask[row, slot[i]] = 1.0
        inputs = take_rows(z_tilde, grid)
        h0 = Tensor(np.zeros((rows, self.cfg.context_hidden)))
        states = self.encoder.dialogue_gru.run(inputs, h0, grid_mask)
        # the context of turn j is the state after turns 0..j-1
        before = stack([h0] + states[:-1], axis=1).reshape(rows * turns, self.cfg.context_hidden)
        context = take_rows(before, np.array([row * turns + slot[i] for i, (row, _, _) in enumerate(spans)]))
        return Utterances(spans, targets, mask, z_tilde, context, rows, list(batch.slice_uids))

    # -- latent networks --------------------------------------------------
    def prior_params(self, c: Tensor) -> GaussianParams:
        if self.cfg.prior == "standard":
            return GaussianParams.standard(c.shape[:-1] + (self.cfg.latent_dim,))
        return _split_gaussian(self.latent.prior(c), self.cfg.latent_dim)

    def recognition_params(self, z_tilde: Tensor, c: Tensor) -> GaussianParams:
        return _split_gaussian(self.latent.recognition(concat([z_tilde, c], axis=-1)), self.cfg.latent_dim)

    def generate_latent(self, eps: Tensor, c: Tensor) -> Tensor:
        if self.cfg.arch != "co":
            raise ConfigError("only the collaborative model has a latent generator")
        x = concat([eps, c], axis=-1) if self.cfg.generator_context else eps
        return self.latent.generator(x)

    # -- decoder ----------------------------------------------------------
    def decoder_inputs(self, targets: np.ndarray, mask: np.ndarray, dropout: float = 0.0,
                       rng: np.random.Generator | None = None, dropout_mode: str = "unk") -> np.ndarray:
        inputs = np.empty_like(targets)
        inputs[:, 0] = START_ID
        inputs[:, 1:] = targets[:, :-1]
        inputs = np.where(mask > 0, inputs, PAD_ID)
        if dropout > 0.0:
            if rng is None:
                raise ValueError("word dropout needs an rng")
            inputs = word_dropout(inputs, dropout, rng, dropout_mode, self.cfg.vocab_size)
        return inputs

    def decode_teacher_forced(self, cond: Tensor, targets: np.ndarray, mask: np.ndarray,
                              dropout: float = 0.0, rng: np.random.Generator | None = None,
                              dropout_mode: str = "unk") -> Tensor:
        """Per-token NLL ``[N, L]`` (zero at masked positions)."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size and targets.max() >= self.cfg.vocab_size:
            raise IndexError(f"token id {int(targets.max())} >= vocabulary size {self.cfg.vocab_size}")
        n, steps = targets.shape
        inputs = self.decoder_inputs(targets, mask, dropout, rng, dropout_mode)
        dec = self.decoder
        h0 = tanh(dec.init(cond))
        x = concat([self.encoder.embedding(inputs), _broadcast_time(cond, steps)], axis=-1)
        states = dec.gru.run(x, h0)
        hidden = stack(states, axis=1).reshape(n * steps, self.cfg.decoder_hidden)
        nll = softmax_cross_entropy(dec.out(hidden), targets.reshape(-1)) * mask.reshape(-1)
        return nll.reshape(n, steps)

    def decoder_start(self, cond: np.ndarray) -> np.ndarray:
        with no_grad():
            return tanh(self.decoder.init(Tensor(cond))).data

    def decoder_step(self, h: np.ndarray, tokens: np.ndarray, cond: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance ``[K, H]`` states by one input token each; returns (states, logits)."""
        dec = self.decoder
        with no_grad():
            x = concat([self.encoder.embedding(tokens), Tensor(np.broadcast_to(cond, (len(tokens), cond.shape[-1])))], axis=-1)
            xu, xr, xn = dec.gru.project(x)
            h_new = gru_step(xu, xr, xn, Tensor(h), dec.gru.params)
            logits = dec.out(h_new)
        return h_new.data, logits.data

    # -- conditioning vectors ---------------------------------------------
    def condition(self, z: Tensor | None, c: Tensor) -> Tensor:
        return c if z is None else concat([z, c], axis=-1)

    def sample_noise(self, utts: Utterances, rng: np.random.Generator | None, eval_seed: int | None) -> np.ndarray:
        """Training draws from ``rng``; evaluation keys the noise by slice so the
        result does not depend on how slices are batched."""
        d = self.cfg.latent_dim
        if rng is not None:
            return rng.standard_normal((utts.n, d))
        out = np.empty((utts.n, d))
        by_row: dict[int, list[int]] = {}
        for i, (row, _, _) in enumerate(utts.spans):
            by_row.setdefault(row, []).append(i)
        for row, idx in by_row.items():
            out[idx] = keyed_rng(eval_seed or 0, utts.slice_uids[row]).standard_normal((len(idx), d))
        return out

    # -- full forward passes ----------------------------------------------
    def forward_hred(self, batch: SliceBatch, dropout: float = 0.0, rng=None, dropout_mode: str = "unk") -> Components:
        utts = self.encode_batch(batch)
        tok = self.decode_teacher_forced(utts.context, utts.targets, utts.mask, dropout, rng, dropout_mode)
        return Components(tok.sum(), utts.n_tokens, utts.n, utts.n_slices, token_nll=tok)

    def forward_vhred(self, batch: SliceBatch, rng=None, dropout: float = 0.0, eval_seed: int | None = None,
                      dropout_mode: str = "unk") -> Components:
        if self.cfg.arch != "vhred":
            raise ConfigError("forward_vhred on a non-vhred model")
        utts = self.encode_batch(batch)
        post = self.recognition_params(utts.z_tilde, utts.context)
        prior = self.prior_params(utts.context)
        kl = gaussian_kl(post, prior)
        z = reparameterize(post, self.sample_noise(utts, rng, eval_seed))
        cond = self.condition(z, utts.context)
        tok = self.decode_teacher_forced(cond, utts.targets, utts.mask, dropout, rng, dropout_mode)
        bow = self.bow_term(cond, utts) if self.cfg.bow else None
        return Components(tok.sum(), utts.n_tokens, utts.n, utts.n_slices, kl_dims=kl, bow=bow, token_nll=tok)

    def forward_co(self, batch: SliceBatch, phase: str, rng=None, keep_prob: float = 0.0, ss_mode: str = "coin",
                   dropout: float = 0.0, eval_seed: int | None = None, dropout_mode: str = "unk") -> Components:
        """``phase="cvae"``: KL + reconstruction of the (detached) encoder target.
        ``phase="ae"``: reconstruction NLL through the fed latent, plus live KL."""
        if self.cfg.arch != "co":
            raise ConfigError("forward_co on a non-co model")
        if phase == "cvae":
            with no_grad():
                utts = self.encode_batch(batch)
            z_t, c = utts.z_tilde.detach(), utts.context.detach()
        elif phase == "ae":
            utts = self.encode_batch(batch)
            z_t, c = utts.z_tilde, utts.context
        else:
            raise ValueError(f"unknown phase {phase!r}")
        post = self.recognition_params(z_t, c)
        prior = self.prior_params(c)
        kl = gaussian_kl(post, prior)
        eps = reparameterize(post, self.sample_noise(utts, rng, eval_seed))
        z_gen = self.generate_latent(eps, c)
        if phase == "cvae":
            diff = z_gen - z_t
            recon = (diff * diff).sum() * 0.5
            zero = Tensor(0.0)
            return Components(zero, utts.n_tokens, utts.n, utts.n_slices, kl_dims=kl, recon=recon)

        fed_true = 0
        if keep_prob >= 1.0:
            z_fed = z_t
            fed_true = utts.n
        elif keep_prob <= 0.0:
            z_fed = z_gen
        elif ss_mode == "coin":
            if rng is None:
                raise ValueError("coin-flip scheduled sampling needs an rng")
            pick = (rng.random(utts.n) < keep_prob).astype(float)[:, None]
            fed_true = int(pick.sum())
            z_fed = z_t * pick + z_gen * (1.0 - pick)
        elif ss_mode == "mix":
            z_fed = z_gen * (1.0 - keep_prob) + z_t * keep_prob
        else:
            raise ValueError(f"unknown scheduled-sampling mode {ss_mode!r}")
        cond = self.condition(z_fed, c)
        tok = self.decode_teacher_forced(cond, utts.targets, utts.mask, dropout, rng, dropout_mode)
        bow = self.bow_term(cond, utts) if self.cfg.bow else None
        return Components(tok.sum(), utts.n_tokens, utts.n, utts.n_slices, kl_dims=kl, bow=bow,
                          keep_prob=keep_prob, fed_true=fed_true, token_nll=tok)

    def bow_term(self, cond: Tensor, utts: Utterances) -> Tensor:
        from ..objectives import bow_loss

        bags = [utts.targets[i, : int(utts.mask[i].sum())] for i in range(utts.n)]
        return bow_loss(self.bow(cond), bags)

    def forward(self, batch: SliceBatch, **kw) -> Components:
        """Evaluation-style pass: no dropout, keyed noise, generated latent for ``co``."""
        arch = self.cfg.arch
        seed = kw.get("eval_seed", 0)
        if arch == "hred":
            return self.forward_hred(batch)
        if arch == "vhred":
            return self.forward_vhred(batch, eval_seed=seed)
        return self.forward_co(batch, "ae", keep_prob=0.0, eval_seed=seed)

    # -- generation helpers -----------------------------------------------
    def context_vector(self, turns: list[list[int]]) -> Tensor:
        """Context state for a history given as id lists (without end markers)."""
        with no_grad():
            if not turns:
                return Tensor(np.zeros(self.cfg.context_hidden))
            vecs = stack([self.encode_utterance(np.array(list(t) + [EOU_ID])) for t in turns], axis=0)
            return self.encode_context(vecs)

    def prior_latent(self, c: Tensor, noise: np.ndarray) -> Tensor | None:
        with no_grad():
            if self.cfg.arch == "hred":
                return None
            eps = reparameterize(self.prior_params(c), noise)
            return eps if self.cfg.arch == "vhred" else self.generate_latent(eps, c)

    def posterior_latent(self, c: Tensor, response: list[int], noise: np.ndarray) -> Tensor:
        with no_grad():
            z_t = self.encode_utterance(np.array(list(response) + [EOU_ID]))
            eps = reparameterize(self.recognition_params(z_t, c), noise)
            return eps if self.cfg.arch == "vhred" else self.generate_latent(eps, c)

