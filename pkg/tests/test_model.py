import itertools

import numpy as np
import pytest

from coved.corpus import EOU_ID, PAD_ID, START_ID, UNK_ID, Slice, make_batch
from coved.model import ConfigError, DialogueModel, ModelConfig, beam_search, greedy_decode
from coved.numcore import Tensor, make_rng, no_grad

TINY = dict(embed_dim=4, token_hidden=5, context_hidden=6, decoder_hidden=5, latent_dim=3, mlp_hidden=4)


def tiny_model(arch="hred", vocab=9, seed=0, scale=None, **kw):
    m = DialogueModel(ModelConfig(vocab_size=vocab, arch=arch, **TINY, **kw), make_rng(seed))
    if scale is not None:
        r = make_rng(seed + 100)
        for p in m.parameters().values():
            p.data[...] = r.uniform(-scale, scale, p.shape)
    return m


def batch_of(rows, slice_len=10):
    slices = [Slice(str(i), 0, ()) for i in range(len(rows))]
    return make_batch([np.array(r) for r in rows], slices, slice_len)


ROWS = [[5, 6, EOU_ID, 7, 8, 5, EOU_ID, 6, EOU_ID], [7, EOU_ID, 8, 8, 6, EOU_ID, 5, 7]]


# -- configuration and parameters -------------------------------------------

def test_bow_with_hred_rejected():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=9, arch="hred", bow=True).validate()


def test_parameter_groups_partition():
    m = tiny_model("co")
    theta, phi = m.theta(), m.phi()
    assert set(theta).isdisjoint(phi)
    assert set(theta) | set(phi) == set(m.parameters())
    assert all(n.startswith("latent.") for n in phi)
    assert {"latent.generator.out.weight", "latent.recognition.out.weight", "latent.prior.out.weight"} <= set(phi)


def test_hred_has_no_latent_parameters():
    assert tiny_model("hred").phi() == {}


def test_load_state_rejects_missing_latent():
    hred, co = tiny_model("hred"), tiny_model("co")
    with pytest.raises(ConfigError, match="missing"):
        co.load_state_arrays(hred.state_arrays())


def test_state_round_trip():
    a, b = tiny_model("vhred", seed=1), tiny_model("vhred", seed=2)
    b.load_state_arrays({k: v.copy() for k, v in a.state_arrays().items()})
    assert all(np.array_equal(a.state_arrays()[k], v) for k, v in b.state_arrays().items())


# -- forward passes ---------------------------------------------------------

def test_component_counts():
    comp = tiny_model("vhred").forward(batch_of(ROWS))
    assert comp.n_utts == 6 and comp.n_tokens == 17 and comp.n_slices == 2
    assert comp.kl_dims.shape == (6, 3)
    assert np.all(comp.kl_dims.data >= 0)


def test_uniform_model_has_perplexity_vocab_size():
    m = tiny_model("hred", vocab=9)
    m.decoder.out.weight.data[...] = 0.0
    m.decoder.out.bias.data[...] = 0.0
    comp = m.forward(batch_of(ROWS))
    assert np.exp(comp.nll.item() / comp.n_tokens) == pytest.approx(9.0, abs=1e-9)


def test_context_is_state_before_each_turn():
    m = tiny_model("hred")
    utts = m.encode_batch(batch_of(ROWS))
    # first utterance of every slice sees an empty history
    assert np.array_equal(utts.context.data[0], np.zeros(6))
    assert np.array_equal(utts.context.data[3], np.zeros(6))
    with no_grad():
        c = m.encode_context(utts.z_tilde[0:2])
    assert np.allclose(utts.context.data[2], c.data)


def test_cvae_phase_gives_theta_no_gradient():
    m = tiny_model("co", scale=0.5)
    for p in m.theta().values():
        p.requires_grad = False
    comp = m.forward_co(batch_of(ROWS), "cvae", make_rng(3))
    (comp.kl_dims.sum() + comp.recon).backward()
    assert all(p.grad is None for p in m.theta().values())
    assert any(p.grad is not None and np.any(p.grad != 0) for p in m.phi().values())


def test_ae_phase_gives_phi_no_gradient():
    m = tiny_model("co", scale=0.5)
    for p in m.phi().values():
        p.requires_grad = False
    comp = m.forward_co(batch_of(ROWS), "ae", make_rng(3), keep_prob=0.5)
    (comp.nll + comp.kl_dims.sum()).backward()
    assert all(p.grad is None for p in m.phi().values())
    assert np.any(m.encoder.token_gru.w_update.grad != 0)


def test_keep_prob_one_decodes_true_encoding():
    m = tiny_model("co", scale=0.5)
    b = batch_of(ROWS)
    full = m.forward_co(b, "ae", make_rng(0), keep_prob=1.0)
    mixed = m.forward_co(b, "ae", make_rng(0), keep_prob=1.0, ss_mode="mix")
    assert full.fed_true == full.n_utts
    assert full.nll.item() == mixed.nll.item()


def test_evaluation_noise_independent_of_batching():
    m = tiny_model("vhred", scale=0.5)
    together = m.forward(batch_of(ROWS))
    apart = [m.forward(make_batch([np.array(r)], [Slice(str(i), 0, ())], 10)) for i, r in enumerate(ROWS)]
    assert together.nll.item() == pytest.approx(sum(c.nll.item() for c in apart), abs=1e-12)
    assert together.kl_sum == pytest.approx(sum(c.kl_sum for c in apart), abs=1e-12)


def test_teacher_forcing_matches_stepwise_decoder():
    m = tiny_model("hred", scale=0.5)
    cond = make_rng(1).normal(size=6)
    target = np.array([[5, 7, 6, EOU_ID]])
    with no_grad():
        tf = m.decode_teacher_forced(m.condition(None, Tensor(cond[None])), target, np.ones((1, 4))).data[0]
    h = m.decoder_start(cond[None])
    prev, steps = START_ID, []
    for tok in target[0]:
        h, logits = m.decoder_step(h, np.array([prev]), cond)
        lse = np.log(np.exp(logits[0] - logits[0].max()).sum()) + logits[0].max()
        steps.append(lse - logits[0, tok])
        prev = tok
    assert np.allclose(tf, steps, atol=1e-12)


# -- beam search ------------------------------------------------------------

def exhaustive_best(m, cond, max_len, allowed):
    """Score every legal sequence independently and return the best."""
    best, best_score = None, -np.inf
    for length in range(1, max_len + 1):
        for seq in itertools.product(allowed, repeat=length):
            if EOU_ID in seq[:-1] or (length < max_len and seq[-1] != EOU_ID):
                continue
            h, prev, score = m.decoder_start(cond[None]), START_ID, 0.0
            for tok in seq:
                h, logits = m.decoder_step(h, np.array([prev]), cond)
                z = logits[0, allowed]
                score += logits[0, tok] - (np.log(np.exp(z - z.max()).sum()) + z.max())
                prev = tok
            if score > best_score:
                best, best_score = list(seq), score
    return best, best_score


@pytest.mark.parametrize("vocab,beam,max_len", [(5, 25, 4), (7, 81, 4)])
def test_beam_equals_exhaustive_search(vocab, beam, max_len):
    allowed = [EOU_ID] + list(range(4, vocab))
    for seed in range(100 if vocab == 5 else 20):
        m = tiny_model("hred", vocab=vocab, seed=seed, scale=1.5)
        cond = make_rng(seed).normal(size=6)
        hyp = beam_search(m, cond, beam=beam, max_len=max_len)[0]
        seq, score = exhaustive_best(m, cond, max_len, allowed)
        assert hyp.tokens == seq
        assert hyp.score == pytest.approx(score, abs=1e-9)


def test_beam_one_is_greedy():
    for seed in range(50):
        m = tiny_model("hred", vocab=12, seed=seed, scale=1.0)
        cond = make_rng(seed).normal(size=6)
        b = beam_search(m, cond, beam=1, max_len=12)[0]
        g = greedy_decode(m, cond, max_len=12)
        assert b.tokens == g.tokens and b.score == g.score


def test_no_blocked_tokens_even_when_favoured():
    m = tiny_model("hred", vocab=10, scale=0.5)
    m.decoder.out.bias.data[[UNK_ID, PAD_ID, START_ID]] = 8.0
    r = make_rng(9)
    for _ in range(1000):
        hyp = beam_search(m, r.normal(size=6), beam=2, max_len=5)[0]
        assert not {UNK_ID, PAD_ID, START_ID} & set(hyp.tokens)


def test_beam_returns_sorted_n_best():
    m = tiny_model("hred", vocab=9, scale=1.0)
    hyps = beam_search(m, np.ones(6), beam=5, max_len=6, n_best=5)
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    assert all(h.tokens[-1] == EOU_ID or len(h.tokens) == 6 for h in hyps)
