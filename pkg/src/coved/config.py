"""Run configuration: flat ``key = value`` files with command-line overrides.

Every field carries a source tag printed in the run banner: ``published``
for values taken from the original experimental setup, ``artifact`` for
choices made here (paths, schedules the setup leaves open).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ConfigError, ModelConfig
from .trainer import RunPlan

PUBLISHED = "published"
ARTIFACT = "artifact"


def _f(default, source: str = PUBLISHED, help: str = ""):
    return field(default=default, metadata={"source": source, "help": help})


@dataclass
class RunConfig:
    corpus: str = _f("", ARTIFACT, "raw corpus, one dialogue per line, turns split by __eou__")
    workdir: str = _f("run", ARTIFACT, "directory for vocab, manifests, checkpoints and logs")
    embeddings: str = _f("", ARTIFACT, "optional word2vec-style text file for embedding init")
    vocab_size: int = _f(20000, PUBLISHED, "vocabulary size including reserved tokens")
    slice_len: int = _f(80, PUBLISHED, "tokens per training slice")
    embed_dim: int = _f(300, PUBLISHED)
    token_hidden: int = _f(512, PUBLISHED, "utterance encoder GRU size")
    context_hidden: int = _f(1024, PUBLISHED, "dialogue encoder GRU size")
    decoder_hidden: int = _f(512, PUBLISHED)
    latent_dim: int = _f(512, PUBLISHED)
    mlp_hidden: int = _f(512, ARTIFACT, "hidden width of the two-layer latent networks")
    prior: str = _f("learned", ARTIFACT, "learned | standard")
    batch_size: int = _f(128, PUBLISHED)
    lr: float = _f(2e-4, PUBLISHED)
    epochs: int = _f(10, ARTIFACT)
    patience: int = _f(3, ARTIFACT, "early stopping on validation negative ELBO; 0 disables")
    alternation: int = _f(0, ARTIFACT, "batches per phase for co; 0 = one epoch per phase")
    arch: str = _f("co", PUBLISHED, "hred | vhred | co")
    kla: bool = _f(False, PUBLISHED, "KL annealing")
    do: bool = _f(False, PUBLISHED, "word drop-out")
    bow: bool = _f(False, PUBLISHED, "bag-of-words loss")
    fb: bool = _f(False, PUBLISHED, "per-dimension free bits")
    fb_all: bool = _f(False, PUBLISHED, "free bits on the total KL")
    ss: bool = _f(False, PUBLISHED, "scheduled sampling")
    joint: bool = _f(False, PUBLISHED, "train both co phases every step")
    alpha: float = _f(5.0, PUBLISHED, "KL hinge level (nats)")
    k: float = _f(2500.0, PUBLISHED, "scheduled-sampling decay steps")
    ss_mode: str = _f("coin", ARTIFACT, "coin | mix")
    anneal_horizon: int = _f(12000, PUBLISHED, "KL annealing steps")
    dropout_rate: float = _f(0.25, PUBLISHED)
    dropout_mode: str = _f("unk", ARTIFACT, "unk | random")
    fb_lambda: float = _f(0.01, PUBLISHED, "per-dimension free-bits budget")
    fb_all_budget: float = _f(5.0, PUBLISHED, "total free-bits budget")
    fb_unit: str = _f("nats", ARTIFACT, "unit of fb_all_budget: nats | bits")
    beam: int = _f(5, PUBLISHED)
    max_len: int = _f(30, ARTIFACT, "longest generated response")
    seed: int = _f(0, ARTIFACT)

    # -- parsing ----------------------------------------------------------
    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}

    @classmethod
    def parse_value(cls, key: str, text: str):
        kinds = cls.field_types()
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        kind = kinds[key]
        text = text.strip()
        try:
            if kind is bool:
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            return kind(text)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r} (expected {kind.__name__})") from None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values = {}
        for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = cls.parse_value(key, value)
        return cls(**values)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def banner(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {v}  [{f.metadata['source']}]")
        return out

    # -- derived objects ----------------------------------------------------
    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size, arch=self.arch, embed_dim=self.embed_dim, token_hidden=self.token_hidden,
            context_hidden=self.context_hidden, decoder_hidden=self.decoder_hidden, latent_dim=self.latent_dim,
            mlp_hidden=self.mlp_hidden, bow=self.bow, prior=self.prior,
        )

    def run_plan(self) -> RunPlan:
        return RunPlan(
            arch=self.arch, kla=self.kla, do=self.do, bow=self.bow, fb=self.fb, fb_all=self.fb_all, ss=self.ss,
            joint=self.joint, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=self.seed,
            alternation=self.alternation or None, patience=self.patience, slice_len=self.slice_len,
            alpha=self.alpha, ss_k=self.k, ss_mode=self.ss_mode, anneal_horizon=self.anneal_horizon,
            dropout_rate=self.dropout_rate, dropout_mode=self.dropout_mode, fb_lambda=self.fb_lambda,
            fb_all_budget=self.fb_all_budget, fb_unit=self.fb_unit,
        )

    def validate(self) -> None:
        """Check every field before any work starts."""
        if self.vocab_size <= 4:
            raise ConfigError("vocab_size must exceed the 4 reserved tokens")
        if self.slice_len < 2:
            raise ConfigError("slice_len must be at least 2")
        if self.beam < 1 or self.max_len < 1:
            raise ConfigError("beam and max_len must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.alternation < 0:
            raise ConfigError("alternation must be >= 0")
        self.model_config(self.vocab_size).validate()
        self.run_plan().validate()
