"""Command-line entry point: prepare, train, evaluate, generate, sample-latents, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .config import RunConfig
from .corpus import (
    CorpusError,
    LoadStats,
    Vocab,
    build_vocab,
    load_corpus,
    load_embeddings,
    make_slices,
    split_corpus,
)
from .evaluation import MetricReport, embedding_scores, evaluate_dataset, generate, sample_latents
from .model import ConfigError, DialogueModel
from .numcore import CheckpointError, NonFiniteGradient, make_rng
from .numcore.rng import INIT
from .trainer import TrainingDiverged, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "valid", "test")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = type(f.default)
        if kind is bool:
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                           help=f.metadata.get("help") or None)
        else:
            p.add_argument(flag, dest=f.name, type=kind, default=None, help=f.metadata.get("help") or None)


def build_parser() -> Parser:
    parser = Parser(prog="coved", description="Collaborative variational dialogue models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("prepare", help="build vocabulary and train/valid/test manifests")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a model on the prepared corpus")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("evaluate", help="PPL, KL and NLL on a split; optional embedding metrics")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--generations", help="generated responses, one per line")
    p.add_argument("--references", help="gold responses, one per line")
    p.add_argument("--report", help="where to write the report (default: <workdir>/report_<split>.txt)")

    p = sub.add_parser("generate", help="beam-search one response per context line")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--contexts", required=True, help="one context per line, turns ending in __eou__")
    p.add_argument("--out", help="responses file (default: stdout)")
    p.add_argument("--n-best", type=int, default=1, help="latent draws (responses) per context")

    p = sub.add_parser("sample-latents", help="prior and posterior latent samples for one context")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True, help="context text, turns ending in __eou__")
    p.add_argument("--responses", required=True, help="candidate responses, one per line")
    p.add_argument("--n-prior", type=int, default=100)
    p.add_argument("--n-posterior", type=int, default=10)
    p.add_argument("--out", required=True, help="TSV output")

    p = sub.add_parser("gradcheck", help="finite-difference check of every objective at tiny dims")
    p.add_argument("--corrupt", action="store_true", help="perturb analytic gradients (negative control)")
    p.add_argument("--max-entries", type=int, default=None, help="entries checked per parameter")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides({f.name: getattr(args, f.name, None) for f in fields(RunConfig)})
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# shared helpers


def _split_turns(line: str) -> list[list[str]]:
    return [t.split() for t in line.lower().split("__eou__") if t.strip()]


def _workdir(cfg: RunConfig) -> Path:
    return Path(cfg.workdir)


def load_prepared(cfg: RunConfig):
    """Vocabulary and per-split dialogues from a prepared work directory."""
    work = _workdir(cfg)
    vocab_path = work / "vocab.txt"
    if not vocab_path.exists():
        raise DataError(f"{vocab_path} not found; run 'coved prepare' first")
    vocab = Vocab.load(vocab_path)
    dialogues = {d.source_id: d for d in _load(cfg)}
    splits = {}
    for name in SPLITS:
        ids = (work / f"{name}.ids").read_text(encoding="utf-8").split()
        missing = [i for i in ids if i not in dialogues]
        if missing:
            raise DataError(f"{name} manifest lists unknown dialogue ids, e.g. {missing[0]}")
        splits[name] = [dialogues[i] for i in ids]
    return vocab, splits


def _load(cfg: RunConfig):
    if not cfg.corpus:
        raise DataError("no corpus given (set corpus = ... or --corpus)")
    try:
        return load_corpus(cfg.corpus)
    except (OSError, CorpusError) as exc:
        raise DataError(str(exc)) from None


def _load_model(cfg: RunConfig, path, vocab: Vocab) -> DialogueModel:
    try:
        model, _, _ = load_checkpoint(path, expect_arch=cfg.arch)
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if model.cfg.vocab_size != len(vocab):
        raise ConfigError(f"checkpoint vocabulary ({model.cfg.vocab_size}) differs from {len(vocab)}")
    return model


def _banner(cfg: RunConfig, command: str) -> None:
    print(f"# coved {command}", file=sys.stderr)
    for line in cfg.banner():
        print(f"#   {line}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(cfg: RunConfig) -> int:
    stats = LoadStats()
    try:
        dialogues = load_corpus(cfg.corpus, stats) if cfg.corpus else None
    except OSError as exc:
        raise DataError(str(exc)) from None
    if dialogues is None:
        raise DataError("no corpus given (set corpus = ... or --corpus)")
    try:
        train_d, valid_d, test_d = split_corpus(dialogues, cfg.seed)
    except CorpusError as exc:
        raise DataError(str(exc)) from None
    work = _workdir(cfg)
    work.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(train_d, cfg.vocab_size)
    vocab.save(work / "vocab.txt")
    for name, part in zip(SPLITS, (train_d, valid_d, test_d)):
        (work / f"{name}.ids").write_text("".join(d.source_id + "\n" for d in part), encoding="utf-8")
    print(f"dialogues={len(dialogues)} skipped={stats.skipped} vocab={len(vocab)} "
          f"train={len(train_d)} valid={len(valid_d)} test={len(test_d)}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, resume=None) -> int:
    vocab, splits = load_prepared(cfg)
    init = None
    if cfg.embeddings:
        table = load_embeddings(cfg.embeddings, vocab)
        if table.dim != cfg.embed_dim:
            raise ConfigError(f"embedding file has dimension {table.dim}, config says {cfg.embed_dim}")
        init = table.init_matrix(vocab, make_rng(cfg.seed, INIT))
        print(f"embedding coverage {table.coverage():.3f}", file=sys.stderr)
    model = DialogueModel(cfg.model_config(len(vocab)), make_rng(cfg.seed, INIT), init)
    work = _workdir(cfg)
    result = train(cfg.run_plan(), model, make_slices(splits["train"], cfg.slice_len),
                   make_slices(splits["valid"], cfg.slice_len), vocab, out_dir=work / "checkpoints",
                   resume=resume, log_path=work / "train_log.jsonl")
    st = result.state
    print(f"epochs={st.epoch} steps={st.step} best_valid_neg_elbo={st.best_valid!r} "
          f"best_checkpoint={result.best_checkpoint} stopped_early={str(result.stopped_early).lower()}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, checkpoint, split: str, generations=None, references=None, report_path=None) -> int:
    vocab, splits = load_prepared(cfg)
    model = _load_model(cfg, checkpoint, vocab)
    report = MetricReport()
    report.add_dataset(split, evaluate_dataset(model, make_slices(splits[split], cfg.slice_len), vocab,
                                               batch_size=cfg.batch_size, eval_seed=cfg.seed,
                                               slice_len=cfg.slice_len))
    if generations or references:
        if not (generations and references and cfg.embeddings):
            raise UsageError("embedding metrics need --generations, --references and --embeddings")
        cands = [l.lower().split() for l in Path(generations).read_text(encoding="utf-8").splitlines()]
        refs = [l.lower().split() for l in Path(references).read_text(encoding="utf-8").splitlines()]
        if len(cands) != len(refs):
            raise DataError(f"{len(cands)} generations but {len(refs)} references")
        report.add_embedding(embedding_scores(cands, refs, load_embeddings(cfg.embeddings)))
    for line in report.lines():
        print(line)
    report.write(report_path or _workdir(cfg) / f"report_{split}.txt")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, checkpoint, contexts_path, out=None, n_best: int = 1) -> int:
    vocab = Vocab.load(_workdir(cfg) / "vocab.txt")
    model = _load_model(cfg, checkpoint, vocab)
    contexts = []
    for n, line in enumerate(Path(contexts_path).read_text(encoding="utf-8").splitlines(), 1):
        turns = _split_turns(line)
        if not turns:
            print(f"warning: {contexts_path}:{n}: empty context skipped", file=sys.stderr)
            continue
        contexts.append(turns)
    responses = generate(model, contexts, vocab, beam=cfg.beam, max_len=cfg.max_len, seed=cfg.seed, n_best=n_best)
    text = "".join(" ".join(r) + "\n" for per_ctx in responses for r in per_ctx)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sample_latents(cfg: RunConfig, checkpoint, context, responses_path, out, n_prior, n_posterior) -> int:
    vocab = Vocab.load(_workdir(cfg) / "vocab.txt")
    model = _load_model(cfg, checkpoint, vocab)
    lines = Path(responses_path).read_text(encoding="utf-8").splitlines()
    responses = [(str(i), _split_turns(l)[0]) for i, l in enumerate(lines, 1) if _split_turns(l)]
    dump = sample_latents(model, _split_turns(context), vocab, n_prior=n_prior, n_posterior=n_posterior,
                          responses=responses, seed=cfg.seed)
    dump.write_tsv(out)
    print(f"rows={len(dump.rows)} dim={model.cfg.latent_dim if model.cfg.arch == 'vhred' else model.cfg.token_hidden}")
    return EXIT_OK


def cmd_gradcheck(corrupt: bool = False, max_entries=None) -> int:
    from .gradsuite import run_suite

    return EXIT_OK if run_suite(corrupt=corrupt, max_entries=max_entries) else EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.corrupt, args.max_entries)
        cfg = resolve_config(args)
        _banner(cfg, args.command)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.split, args.generations, args.references, args.report)
        if args.command == "generate":
            return cmd_generate(cfg, args.checkpoint, args.contexts, args.out, args.n_best)
        return cmd_sample_latents(cfg, args.checkpoint, args.context, args.responses, args.out,
                                  args.n_prior, args.n_posterior)
    except (UsageError, ConfigError) as exc:
        print(f"coved: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, CheckpointError, OSError) as exc:
        print(f"coved: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as exc:
        print(f"coved: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
