"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.  The three desk-scale training runs
are shared by the collapse, hinge and ordering criteria and take several
minutes on one CPU core.
"""

import math
import time

import numpy as np
import pytest

from coved.corpus import EOU_ID, UNK_ID, EmbeddingTable, build_vocab, make_slices, parse_dialogue, split_corpus
from coved.evaluation import LatentDump, embedding_average, embedding_extrema, embedding_greedy, sample_latents
from coved.gradsuite import run_suite
from coved.model import DialogueModel, ModelConfig, beam_search, greedy_decode
from coved.numcore import GaussianParams, Tensor, gaussian_kl, make_rng
from coved.numcore.rng import INIT
from coved.objectives import keep_prob, kl_anneal_weight
from coved.synthetic import make_corpus
from coved.trainer import RunPlan, train
from test_model import exhaustive_best, tiny_model

# desk-scale setup shared by the three training criteria
DESK_DIMS = dict(embed_dim=16, token_hidden=128, context_hidden=32, decoder_hidden=32, latent_dim=32, mlp_hidden=64)
DESK_PLAN = dict(epochs=120, batch_size=32, lr=3e-3, patience=0, seed=0)
ALPHA = 2.0


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return report


# -- 1. gradient integrity ----------------------------------------------------

def test_gradient_integrity(verdict):
    lines = []
    start = time.perf_counter()
    ok = run_suite(out=lines.append)
    seconds = time.perf_counter() - start
    worst = max(float(line.split("max_rel_error=")[1].split()[0]) for line in lines[:-1])
    ok = verdict("gradient integrity", ok and worst < 1e-4 and seconds < 300,
                 f"{len(lines) - 1} combinations, max rel error {worst:.2e} (< 1e-4), {seconds:.0f}s (< 300s)")
    assert ok, "\n".join(lines)


# -- 2. KL closed form ----------------------------------------------------------

def test_kl_closed_form(verdict):
    rng = make_rng(11)
    worst = 0.0
    for _ in range(50):
        mu_q, mu_p = rng.normal(size=3), rng.normal(size=3)
        lv_q, lv_p = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        exact = gaussian_kl(GaussianParams(Tensor(mu_q), Tensor(lv_q)), GaussianParams(Tensor(mu_p), Tensor(lv_p)))
        x = mu_q + np.exp(0.5 * lv_q) * rng.normal(size=(100_000, 3))
        log_q = -0.5 * (lv_q + (x - mu_q) ** 2 / np.exp(lv_q))
        log_p = -0.5 * (lv_p + (x - mu_p) ** 2 / np.exp(lv_p))
        worst = max(worst, abs(exact.data.sum() - (log_q - log_p).sum(1).mean()))
    shifted = gaussian_kl(GaussianParams(Tensor([3.0]), Tensor([0.0])),
                          GaussianParams(Tensor([0.0]), Tensor([0.0]))).data.sum()
    ok = verdict("KL closed form", worst < 0.05 and shifted == 4.5,
                 f"max |closed - MC| {worst:.4f} over 50 pairs (< 0.05); KL(N(3,1)||N(0,1)) = {shifted}")
    assert ok


# -- 3. schedules -----------------------------------------------------------------

def test_schedule_exactness(verdict):
    k = 2500
    probs = [keep_prob(i, k) for i in (0, k // 2, k, 2 * k)]
    weights = [kl_anneal_weight(h, h) for h in (12000, 25000)]
    ok = verdict("schedule exactness", probs == [1.0, 0.5, 0.0, 0.0] and weights == [1.0, 1.0]
                 and kl_anneal_weight(11999, 12000) < 1.0,
                 f"keep_prob at 0,k/2,k,2k = {probs}; anneal weight at horizon = {weights}")
    assert ok


# -- 4-6. desk-scale training runs ------------------------------------------------

@pytest.fixture(scope="module")
def desk_runs():
    ds = [parse_dialogue(line, str(i)) for i, line in enumerate(make_corpus(500, seed=0))]
    train_d, valid_d, _ = split_corpus(ds, 0)
    vocab = build_vocab(train_d)
    tr, va = make_slices(train_d), make_slices(valid_d)
    plans = {
        "vhred": RunPlan(arch="vhred", **DESK_PLAN),
        "kla": RunPlan(arch="vhred", kla=True, anneal_horizon=500, **DESK_PLAN),
        "co+ss": RunPlan(arch="co", ss=True, ss_k=300, alpha=ALPHA, **DESK_PLAN),
    }
    runs = {}
    for name, plan in plans.items():
        model = DialogueModel(ModelConfig(vocab_size=len(vocab), arch=plan.arch, **DESK_DIMS), make_rng(0, INIT))
        start = time.perf_counter()
        result = train(plan, model, tr, va, vocab)
        runs[name] = (result, time.perf_counter() - start)
    return len(vocab), runs


def final_kl(result):
    return result.log.validations()[-1]["kl"]


def test_kl_vanishing_reproduction(verdict, desk_runs):
    n_vocab, runs = desk_runs
    vhred, co = final_kl(runs["vhred"][0]), final_kl(runs["co+ss"][0])
    seconds = sum(t for _, t in runs.values())
    ok = verdict("KL vanishing reproduction", vhred < 0.3 and 1.0 <= co <= 3.0 and n_vocab <= 200 and seconds < 900,
                 f"vocab {n_vocab}; VHRED final KL {vhred:.3f} (< 0.3); CO+SS final KL {co:.3f} (in [1, 3]); "
                 f"three runs {seconds:.0f}s (< 900s)")
    assert ok


def test_hinge_behavior(verdict, desk_runs):
    kl = final_kl(desk_runs[1]["co+ss"][0])
    ok = verdict("hinge behavior", abs(kl - ALPHA) <= 0.5 * ALPHA,
                 f"CO+SS final KL {kl:.3f} within +-50% of alpha={ALPHA}")
    assert ok


def test_directional_ordering(verdict, desk_runs):
    runs = desk_runs[1]
    co, kla = runs["co+ss"][0].state.best_valid, runs["kla"][0].state.best_valid
    ok = verdict("directional ordering", co <= kla,
                 f"best validation negative ELBO per response: CO+SS {co:.3f} vs KLA {kla:.3f} "
                 f"({DESK_PLAN['epochs']} epochs each, same dims, lr, batches)")
    assert ok


# -- 7. beam search ---------------------------------------------------------------

def test_beam_search_oracle(verdict):
    allowed = [EOU_ID, 4]
    mismatches = 0
    for seed in range(100):
        m = tiny_model("hred", vocab=5, seed=seed, scale=1.5)
        cond = make_rng(seed).normal(size=6)
        hyp = beam_search(m, cond, beam=25, max_len=4)[0]
        seq, score = exhaustive_best(m, cond, 4, allowed)
        mismatches += hyp.tokens != seq or abs(hyp.score - score) > 1e-9
    greedy_diff = 0
    for seed in range(50):
        m = tiny_model("hred", vocab=12, seed=seed, scale=1.0)
        cond = make_rng(seed).normal(size=6)
        b, g = beam_search(m, cond, beam=1, max_len=12)[0], greedy_decode(m, cond, max_len=12)
        greedy_diff += b.tokens != g.tokens
    m = tiny_model("hred", vocab=10, scale=0.5)
    m.decoder.out.bias.data[UNK_ID] = 8.0
    r = make_rng(9)
    unk = sum(UNK_ID in beam_search(m, r.normal(size=6), beam=5, max_len=5)[0].tokens for _ in range(1000))
    ok = verdict("beam-search oracle", mismatches == 0 and greedy_diff == 0 and unk == 0,
                 f"{mismatches}/100 exhaustive mismatches; {greedy_diff}/50 beam-1 vs greedy; "
                 f"{unk}/1000 generations with <unk>")
    assert ok


# -- 8. embedding metrics --------------------------------------------------------

def test_embedding_metrics(verdict):
    def cos(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    t = EmbeddingTable({w: np.asarray(v, float) for w, v in
                        dict(a=[1, 0, 0], b=[1, 1, 0], c=[0, 1, 1], d=[1, 0, 1]).items()}, 3)
    errs = [
        abs(embedding_average(["a", "b"], ["c"], t) - cos([2, 1, 0], [0, 1, 1])),
        abs(embedding_extrema(["a", "c"], ["d"], t) - cos([1, 1, 1], [1, 0, 1])),
        abs(embedding_greedy(["a", "b"], ["c"], t) - 0.5 * ((0 + 0.5) / 2 + 0.5)),
    ]
    rng = make_rng(5)
    words = {f"w{i}": rng.normal(size=4) for i in range(20)}
    rt = EmbeddingTable(words, 4)
    names = list(words)
    identity = all(abs(f(names[:5], names[:5], rt) - 1.0) < 1e-12
                   for f in (embedding_average, embedding_greedy, embedding_extrema))
    asym = 0.0
    for _ in range(1000):
        x = list(rng.choice(names, size=int(rng.integers(1, 6))))
        y = list(rng.choice(names, size=int(rng.integers(1, 6))))
        asym = max(asym, abs(embedding_greedy(x, y, rt) - embedding_greedy(y, x, rt)))
    ok = verdict("embedding metrics", identity and max(errs) < 1e-9 and asym < 1e-12,
                 f"identity=1.0: {identity}; hand cases max error {max(errs):.1e}; greedy asymmetry {asym:.1e}")
    assert ok


# -- 9-10. toy-corpus runs ----------------------------------------------------------

TOY_DIMS = dict(embed_dim=6, token_hidden=8, context_hidden=8, decoder_hidden=8, latent_dim=4, mlp_hidden=8)


@pytest.fixture(scope="module")
def toy():
    ds = [parse_dialogue(line, str(i)) for i, line in enumerate(make_corpus(36, seed=2))]
    train_d, valid_d, _ = split_corpus(ds, 0)
    vocab = build_vocab(train_d)
    return vocab, make_slices(train_d, 40), make_slices(valid_d, 40)


def toy_run(toy, out, **kw):
    vocab, tr, va = toy
    plan = RunPlan(arch="co", ss=True, do=True, epochs=4, batch_size=8, slice_len=40, lr=1e-2, patience=0, **kw)
    model = DialogueModel(ModelConfig(vocab_size=len(vocab), arch="co", **TOY_DIMS), make_rng(0, INIT))
    return train(plan, model, tr, va, vocab, out_dir=out, log_path=out / "log.jsonl")


def test_determinism(verdict, toy, tmp_path):
    toy_run(toy, tmp_path / "a")
    toy_run(toy, tmp_path / "b")
    files = ["log.jsonl", "best.ckpt", "last.ckpt"]
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    ok = verdict("determinism", same == files, f"bitwise identical: {same} of {files}")
    assert ok


def test_phase_isolation(verdict, toy, tmp_path):
    steps = toy_run(toy, tmp_path, hash_params=True).log.steps()
    bad = 0
    for r in steps:
        frozen, trained = ("phi", "theta") if r["phase"] == "ae" else ("theta", "phi")
        bad += r[f"{frozen}_hash"] != r[f"{frozen}_before"] or r[f"{trained}_hash"] == r[f"{trained}_before"]
    phases = sorted({r["phase"] for r in steps})
    ok = verdict("phase isolation", bad == 0 and phases == ["ae", "cvae"],
                 f"{len(steps)} steps over phases {phases}, {bad} violating frozen/updated hashes")
    assert ok


# -- 11. latent-sample protocol ---------------------------------------------------

def test_latent_sample_protocol(verdict, toy, tmp_path):
    vocab, _, _ = toy
    model = DialogueModel(ModelConfig(vocab_size=len(vocab), arch="co", **TOY_DIMS), make_rng(0, INIT))
    responses = [(str(i), ["ok", "tom"][: 1 + i % 2]) for i in range(10)]
    dump = sample_latents(model, [["hello", "tom"]], vocab, n_prior=100, n_posterior=10, responses=responses)
    dump.write_tsv(tmp_path / "z.tsv")
    rows = [line.split("\t") for line in (tmp_path / "z.tsv").read_text().splitlines()]
    n_post = sum(r[0] == "posterior" for r in rows)
    n_prior = sum(r[0] == "prior" and r[1] == "-" for r in rows)
    widths = {len(r) - 2 for r in rows}
    per_resp = {rid: sum(r[1] == rid for r in rows if r[0] == "posterior") for rid, _ in responses}
    back = LatentDump.read_tsv(tmp_path / "z.tsv")
    ok = verdict("latent-sample protocol",
                 n_post == 100 and n_prior == 100 and set(per_resp.values()) == {10} and len(back.rows) == 200
                 and widths == {model.cfg.token_hidden} and all(not math.isnan(float(x)) for r in rows for x in r[2:]),
                 f"{n_post} posterior rows (10 per response x {len(per_resp)}), {n_prior} prior rows, "
                 f"vector width {widths}")
    assert ok
