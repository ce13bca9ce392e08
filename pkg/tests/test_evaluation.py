import math

import numpy as np
import pytest

from coved.corpus import Dialogue, EmbeddingTable, build_vocab, make_slices, parse_dialogue
from coved.evaluation import (
    LatentDump,
    MetricReport,
    embedding_average,
    embedding_extrema,
    embedding_greedy,
    embedding_scores,
    evaluate_dataset,
    extrema_vector,
    kl_report,
    sample_latents,
)
from coved.model import DialogueModel, ModelConfig
from coved.numcore import make_rng
from coved.synthetic import make_corpus

TINY = dict(embed_dim=4, token_hidden=5, context_hidden=6, decoder_hidden=5, latent_dim=3, mlp_hidden=4)


def table(**vecs):
    arrs = {k: np.asarray(v, dtype=float) for k, v in vecs.items()}
    return EmbeddingTable(arrs, len(next(iter(arrs.values()))))


def cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


# -- embedding metrics ------------------------------------------------------

def test_average_hand_case():
    t = table(a=[1, 0], b=[0, 1])
    assert embedding_average(["a", "b"], ["a"], t) == pytest.approx(1 / math.sqrt(2), abs=1e-9)


def test_average_orthogonal_single_tokens():
    t = table(a=[1, 0], b=[0, 1])
    assert embedding_average(["a"], ["b"], t) == 0.0


def test_extrema_hand_case():
    vecs = np.array([[2.0, -1.0], [-3.0, 0.0]])
    # brute force: per dimension, the entry of largest absolute value
    brute = [max(vecs[:, d], key=abs) for d in range(2)]
    assert extrema_vector(vecs).tolist() == brute == [-3.0, -1.0]
    t = table(a=[2, -1], b=[-3, 0], c=[1, 1])
    assert embedding_extrema(["a", "b"], ["c"], t) == pytest.approx(cos([-3, -1], [1, 1]), abs=1e-9)


def test_extrema_single_words_is_plain_cosine():
    t = table(a=[1, 2, 3], b=[-1, 0.5, 2])
    assert embedding_extrema(["a"], ["b"], t) == pytest.approx(cos([1, 2, 3], [-1, 0.5, 2]), abs=1e-12)


def brute_greedy(cand, ref, t):
    def one_way(xs, ys):
        total = 0.0
        for x in xs:
            total += max(cos(t.get(x), t.get(y)) for y in ys)
        return total / len(xs)

    return 0.5 * (one_way(cand, ref) + one_way(ref, cand))


def test_greedy_hand_case_matches_double_loop():
    t = table(a=[1, 0, 0], b=[1, 1, 0], c=[0, 1, 1], d=[1, 0, 1])
    cand, ref = ["a", "b", "c"], ["d", "a"]
    assert embedding_greedy(cand, ref, t) == pytest.approx(brute_greedy(cand, ref, t), abs=1e-9)


def test_greedy_disjoint_orthogonal():
    t = table(a=[1, 0, 0, 0], b=[0, 1, 0, 0], c=[0, 0, 1, 0], d=[0, 0, 0, 1])
    assert embedding_greedy(["a", "b"], ["c", "d"], t) == 0.0


def test_identical_sentences_score_one(rng):
    words = {f"w{i}": rng.normal(size=5) for i in range(6)}
    t = EmbeddingTable(words, 5)
    s = ["w0", "w3", "w5", "w3"]
    for metric in (embedding_average, embedding_greedy, embedding_extrema):
        assert metric(s, s, t) == pytest.approx(1.0, abs=1e-12)


def test_greedy_symmetric_on_random_pairs(rng):
    words = {f"w{i}": rng.normal(size=4) for i in range(20)}
    t = EmbeddingTable(words, 4)
    names = list(words)
    for _ in range(1000):
        a = list(rng.choice(names, size=int(rng.integers(1, 6))))
        b = list(rng.choice(names, size=int(rng.integers(1, 6))))
        assert embedding_greedy(a, b, t) == pytest.approx(embedding_greedy(b, a, t), abs=1e-12)


def test_missing_tokens_skipped_and_pairs_excluded():
    t = table(a=[1, 0], b=[0, 1])
    assert embedding_average(["a", "zzz"], ["a"], t) == pytest.approx(1.0)
    assert embedding_average(["zzz"], ["a"], t) is None
    scores = embedding_scores([["a"], ["zzz"]], [["b"], ["a"]], t)
    assert scores.pairs == 1 and scores.excluded == 1
    assert -1.0 <= scores.average <= 1.0


# -- likelihood metrics -----------------------------------------------------

@pytest.fixture(scope="module")
def data():
    ds = [parse_dialogue(line, str(i)) for i, line in enumerate(make_corpus(20, seed=1))]
    vocab = build_vocab(ds)
    return vocab, make_slices(ds, 16)


def tiny(arch, vocab, seed=0):
    return DialogueModel(ModelConfig(vocab_size=len(vocab), arch=arch, **TINY), make_rng(seed))


def test_uniform_model_ppl_is_vocab_size():
    # four real words, so every target is one of eight ids
    ds = [Dialogue((("a", "b"), ("c", "d")), str(i)) for i in range(3)]
    vocab = build_vocab(ds)
    m = tiny("hred", vocab)
    m.decoder.out.weight.data[...] = 0.0
    m.decoder.out.bias.data[...] = 0.0
    metrics = evaluate_dataset(m, make_slices(ds, 8), vocab, slice_len=8)
    assert metrics.ppl == pytest.approx(len(vocab), abs=1e-6)
    assert not metrics.is_bound


@pytest.mark.parametrize("arch", ["hred", "vhred", "co"])
def test_ppl_invariant_to_batching(data, arch):
    vocab, slices = data
    m = tiny(arch, vocab)
    a = evaluate_dataset(m, slices, vocab, batch_size=len(slices), slice_len=16)
    b = evaluate_dataset(m, slices, vocab, batch_size=3, slice_len=16)
    assert abs(a.ppl - b.ppl) < 1e-9
    assert a.kl == pytest.approx(b.kl, abs=1e-12)
    assert a.is_bound == (arch != "hred")


def test_evaluation_repeatable_and_kl_nonnegative(data):
    vocab, slices = data
    m = tiny("vhred", vocab)
    a = evaluate_dataset(m, slices, vocab, slice_len=16)
    b = evaluate_dataset(m, slices, vocab, slice_len=16)
    assert a == b
    assert a.kl >= 0


def test_hred_kl_report_is_zero(data):
    vocab, slices = data
    assert kl_report(tiny("hred", vocab), slices, vocab, slice_len=16) == 0.0


def test_zero_kl_latent_path_leaves_nll_unchanged(data):
    vocab, slices = data
    m = tiny("vhred", vocab)
    # posterior tied to the standard prior and decoder blind to z
    for net in (m.latent.recognition, m.latent.prior):
        net.out.weight.data[...] = 0.0
        net.out.bias.data[...] = 0.0
    d = m.cfg.latent_dim
    m.decoder.init.weight.data[:d] = 0.0
    m.decoder.gru.w_update.data[m.cfg.embed_dim:m.cfg.embed_dim + d] = 0.0
    m.decoder.gru.w_reset.data[m.cfg.embed_dim:m.cfg.embed_dim + d] = 0.0
    m.decoder.gru.w_cand.data[m.cfg.embed_dim:m.cfg.embed_dim + d] = 0.0
    a = evaluate_dataset(m, slices, vocab, slice_len=16, eval_seed=1)
    b = evaluate_dataset(m, slices, vocab, slice_len=16, eval_seed=2)
    assert a.kl == 0.0
    assert a.nll_per_slice == pytest.approx(b.nll_per_slice, abs=1e-12)


def test_report_lines_flag_bound(data):
    vocab, slices = data
    r = MetricReport()
    r.add_dataset("test", evaluate_dataset(tiny("co", vocab), slices, vocab, slice_len=16))
    lines = r.lines()
    assert "test.nll_is_bound=true" in lines
    assert all("=" in line for line in lines)


# -- latent samples ---------------------------------------------------------

def test_sample_latents_protocol(data, tmp_path):
    vocab, _ = data
    m = tiny("co", vocab)
    context = [["hi", "tom"], ["yes"]]
    responses = [(str(i), ["ok", "see", "you"][: 1 + i % 3]) for i in range(10)]
    dump = sample_latents(m, context, vocab, n_prior=100, n_posterior=10, responses=responses, seed=4)
    sources = [r[0] for r in dump.rows]
    assert sources.count("posterior") == 100 and sources.count("prior") == 100
    post_ids = [r[1] for r in dump.rows if r[0] == "posterior"]
    assert post_ids == [str(i) for i in range(10) for _ in range(10)]
    dump.write_tsv(tmp_path / "z.tsv")
    lines = (tmp_path / "z.tsv").read_text().splitlines()
    assert len(lines) == 200
    assert all(len(line.split("\t")) == 2 + m.cfg.token_hidden for line in lines)
    again = sample_latents(m, context, vocab, n_prior=100, n_posterior=10, responses=responses, seed=4)
    assert all(np.array_equal(a[2], b[2]) for a, b in zip(dump.rows, again.rows))
    back = LatentDump.read_tsv(tmp_path / "z.tsv")
    assert all(np.array_equal(a[2], b[2]) for a, b in zip(dump.rows, back.rows))


def test_sample_latents_rejects_hred(data):
    vocab, _ = data
    with pytest.raises(ValueError):
        sample_latents(tiny("hred", vocab), [["hi"]], vocab)
