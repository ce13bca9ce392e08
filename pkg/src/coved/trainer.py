"""Training loop: single-phase baselines and the alternating collaborative model."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import DEFAULT_SLICE_LEN, Slice, Vocab, iter_batches
from .evaluation import DatasetMetrics, evaluate_dataset
from .model import ConfigError, DialogueModel, ModelConfig
from .numcore import Adam, load_container, make_rng, save_container
from .numcore.rng import TRAIN, rng_from_json, rng_state_json
from .objectives import (
    ObjectiveConfig,
    ae_phase_loss,
    cvae_phase_loss,
    hred_loss,
    keep_prob,
    kl_anneal_weight,
    vhred_loss,
)

PHASES = ("cvae", "ae")


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the last checkpoint known to be good."""

    def __init__(self, step: int, last_good: str | None):
        self.step = step
        self.last_good = last_good
        where = last_good if last_good else "none saved yet"
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {where}")


@dataclass
class RunPlan:
    arch: str = "co"
    # strategy flags
    kla: bool = False
    do: bool = False
    bow: bool = False
    fb: bool = False
    fb_all: bool = False
    ss: bool = False
    joint: bool = False
    # schedule
    epochs: int = 10
    batch_size: int = 128
    lr: float = 2e-4
    seed: int = 0
    alternation: int | None = None     # batches per phase; None = one epoch per phase
    first_phase: str = "cvae"
    patience: int = 3                   # epochs without improvement; 0 disables
    checkpoint_every: int = 1           # epochs
    max_steps: int | None = None
    slice_len: int = DEFAULT_SLICE_LEN
    # objective hyperparameters
    alpha: float = 5.0
    ss_k: float = 2500.0
    ss_mode: str = "coin"
    anneal_horizon: int = 12000
    kl_weight: float = 1.0              # fixed weight when kla is off
    dropout_rate: float = 0.25
    dropout_mode: str = "unk"
    fb_lambda: float = 0.01
    fb_all_budget: float = 5.0
    fb_unit: str = "nats"
    hash_params: bool = False           # log parameter-group hashes after every step

    def validate(self) -> None:
        if self.arch not in ("hred", "vhred", "co"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.joint and self.arch != "co":
            raise ConfigError("joint training is only defined for the collaborative model")
        if self.ss and self.arch != "co":
            raise ConfigError("scheduled sampling is only defined for the collaborative model")
        if self.arch == "hred" and (self.kla or self.fb or self.fb_all or self.bow):
            raise ConfigError("hred has no latent variable; kla/fb/fb-all/bow do not apply")
        if self.arch == "co" and (self.kla or self.fb or self.fb_all):
            raise ConfigError("the collaborative model uses the alpha hinge, not kla/fb/fb-all")
        if self.alternation is not None and self.alternation < 1:
            raise ConfigError("alternation granularity must be at least one batch")
        if self.first_phase not in PHASES:
            raise ConfigError(f"first_phase must be one of {PHASES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.patience < 0 or self.checkpoint_every < 1:
            raise ConfigError("patience must be >= 0 and checkpoint_every >= 1")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout rate must lie in [0, 1]")
        if self.ss_k <= 0 or self.anneal_horizon <= 0:
            raise ConfigError("k and the annealing horizon must be positive")
        if self.fb_lambda < 0 or self.fb_all_budget < 0 or self.alpha < 0:
            raise ConfigError("alpha and free-bits budgets must be >= 0")
        if self.ss_mode not in ("coin", "mix") or self.fb_unit not in ("nats", "bits"):
            raise ConfigError("ss_mode must be coin or mix; fb_unit must be nats or bits")
        if self.dropout_mode not in ("unk", "random"):
            raise ConfigError("dropout_mode must be unk or random")
        try:
            self.objective().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            alpha=self.alpha,
            free_bits=self.fb_lambda if self.fb else 0.0,
            free_bits_all=self.fb_all_budget if self.fb_all else 0.0,
            free_bits_unit=self.fb_unit,
            kl_weight_mode="annealed" if self.kla else "fixed",
            kl_weight=self.kl_weight,
            anneal_horizon=self.anneal_horizon,
            dropout=self.dropout_rate if self.do else 0.0,
            dropout_mode=self.dropout_mode,
            bow=self.bow,
            ss_mode=self.ss_mode,
            ss_k=self.ss_k,
            scheduled_sampling=self.ss,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunPlan":
        return cls(**d)


class TrainLog:
    """Ordered training records, written as one sorted-key JSON object per line."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._last_step = -1
        self._fh = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")

    @classmethod
    def resume(cls, path, step: int, epoch: int) -> "TrainLog":
        """Reopen a log keeping only records written before the checkpoint."""
        kept = []
        if path and Path(path).exists():
            kept = [r for r in cls.read(path)
                    if (r.get("step", 0) < step if r.get("kind") == "step" else r.get("epoch", 0) < epoch)]
        log = cls(path)
        for r in kept:
            log.append(r)
        return log

    def append(self, record: dict) -> None:
        if "phase" not in record:
            raise ValueError("every log record needs a phase tag")
        if record.get("kind") == "step":
            if record["step"] <= self._last_step:
                raise ValueError(f"step {record['step']} does not increase on {self._last_step}")
            self._last_step = record["step"]
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def steps(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "step"]

    def validations(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "valid"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @staticmethod
    def read(path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


@dataclass
class TrainState:
    epoch: int = 0              # completed epochs
    step: int = 0               # optimizer steps taken (global)
    ae_steps: int = 0           # AE-phase steps, drives scheduled sampling
    batches: int = 0            # batches seen, drives per-N-batch alternation
    best_valid: float = math.inf
    best_epoch: int = -1
    bad_epochs: int = 0


@dataclass
class TrainResult:
    log: TrainLog
    state: TrainState
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None
    stopped_early: bool = False
    final_valid: DatasetMetrics | None = None
    checkpoints: list[str] = field(default_factory=list)


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: DialogueModel, plan: RunPlan | None = None,
                    optimizers: dict[str, Adam] | None = None, state: TrainState | None = None,
                    rng: np.random.Generator | None = None) -> None:
    tensors = {f"param.{n}": a for n, a in model.state_arrays().items()}
    meta = {"model": model.cfg.to_dict()}
    for key, opt in (optimizers or {}).items():
        tensors.update(opt.state_arrays(f"adam.{key}"))
        meta[f"adam.{key}.step"] = opt.state.step
    if plan is not None:
        meta["plan"] = plan.to_dict()
    if state is not None:
        meta["state"] = asdict(state)
        if math.isinf(state.best_valid):
            meta["state"]["best_valid"] = None
    if rng is not None:
        meta["rng"] = rng_state_json(rng)
    save_container(path, tensors, meta)


def load_checkpoint(path, model: DialogueModel | None = None, expect_arch: str | None = None):
    """Load a checkpoint; builds the model from stored config unless one is given.

    Returns ``(model, meta, tensors)``.  Raises ``ConfigError`` when the stored
    architecture or parameter set does not match.
    """
    tensors, meta = load_container(path)
    cfg = ModelConfig.from_dict(meta["model"])
    if expect_arch is not None and cfg.arch != expect_arch:
        raise ConfigError(f"checkpoint holds a {cfg.arch!r} model, expected {expect_arch!r}")
    if model is None:
        model = DialogueModel(cfg, make_rng(0, TRAIN))
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    model.load_state_arrays(params)
    return model, meta, tensors


def _restore_training(meta, tensors, optimizers: dict[str, Adam]) -> tuple[TrainState, np.random.Generator]:
    for key, opt in optimizers.items():
        if f"adam.{key}.step" not in meta:
            raise ConfigError(f"checkpoint has no optimizer state for {key!r}")
        opt.load_state_arrays(f"adam.{key}", tensors, meta[f"adam.{key}.step"])
    st = dict(meta["state"])
    if st["best_valid"] is None:
        st["best_valid"] = math.inf
    return TrainState(**st), rng_from_json(meta["rng"])


# ---------------------------------------------------------------------------
# training


def _optimizers(model: DialogueModel, plan: RunPlan) -> dict[str, Adam]:
    if plan.arch == "co":
        return {"theta": Adam(model.theta(), lr=plan.lr), "phi": Adam(model.phi(), lr=plan.lr)}
    return {"all": Adam(model.parameters(), lr=plan.lr)}


def _set_phase_trainable(model: DialogueModel, phase: str) -> None:
    train_theta = phase in ("ae", "joint")
    train_phi = phase in ("cvae", "joint")
    for p in model.theta().values():
        p.requires_grad = train_theta
    for p in model.phi().values():
        p.requires_grad = train_phi


def _phase_for(plan: RunPlan, state: TrainState) -> str:
    if plan.arch != "co":
        return "single"
    if plan.joint:
        return "joint"
    start = PHASES.index(plan.first_phase)
    block = state.epoch if plan.alternation is None else state.batches // plan.alternation
    return PHASES[(start + block) % 2]


def _step_record(state, epoch, phase, loss, comp, extra) -> dict:
    rec = {
        "kind": "step",
        "step": state.step,
        "epoch": epoch,
        "phase": phase,
        "loss": float(loss),
        "nll": float(comp.nll.data) / comp.n_utts,
        "kl": comp.kl_sum / comp.n_utts,
        "tokens": comp.n_tokens,
        "utterances": comp.n_utts,
    }
    rec.update(extra)
    return rec


def _check_finite(value: float, state: TrainState, last_good: str | None) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(state.step, last_good)


def _train_step(model, plan, obj, optimizers, batch, rng, state, phase, last_good) -> dict:
    drop = obj.dropout
    if plan.arch == "hred":
        opt = optimizers["all"]
        opt.zero_grad()
        comp = model.forward_hred(batch, drop, rng, obj.dropout_mode)
        loss = hred_loss(comp)
        _check_finite(float(loss.data), state, last_good)
        loss.backward()
        opt.step()
        return _step_record(state, state.epoch, phase, loss.data, comp, {})

    if plan.arch == "vhred":
        opt = optimizers["all"]
        opt.zero_grad()
        weight = kl_anneal_weight(state.step, obj.anneal_horizon) if obj.kl_weight_mode == "annealed" else obj.kl_weight
        comp = model.forward_vhred(batch, rng, drop, dropout_mode=obj.dropout_mode)
        loss = vhred_loss(comp, weight, obj)
        _check_finite(float(loss.data), state, last_good)
        loss.backward()
        opt.step()
        return _step_record(state, state.epoch, phase, loss.data, comp, {"kl_weight": weight})

    # collaborative model
    p = keep_prob(state.ae_steps, obj.ss_k) if obj.scheduled_sampling else 0.0
    extra: dict = {}
    if phase in ("cvae", "joint"):
        _set_phase_trainable(model, "cvae")
        optimizers["phi"].zero_grad()
        comp_c = model.forward_co(batch, "cvae", rng)
        loss_c = cvae_phase_loss(comp_c)
        _check_finite(float(loss_c.data), state, last_good)
        loss_c.backward()
        extra["cvae_loss"] = float(loss_c.data)
        extra["recon"] = float(comp_c.recon.data) / comp_c.n_utts
        comp, loss = comp_c, loss_c
    if phase in ("ae", "joint"):
        _set_phase_trainable(model, "ae")
        optimizers["theta"].zero_grad()
        comp_a = model.forward_co(batch, "ae", rng, keep_prob=p, ss_mode=obj.ss_mode, dropout=drop,
                                  dropout_mode=obj.dropout_mode)
        loss_a = ae_phase_loss(comp_a, obj.alpha)
        _check_finite(float(loss_a.data), state, last_good)
        loss_a.backward()
        extra.update({"ae_loss": float(loss_a.data), "keep_prob": p, "fed_true": comp_a.fed_true})
        comp, loss = comp_a, loss_a
    if phase == "joint":
        loss_value = extra["cvae_loss"] + extra["ae_loss"]
    else:
        loss_value = float(loss.data)
    if phase in ("cvae", "joint"):
        optimizers["phi"].step()
    if phase in ("ae", "joint"):
        optimizers["theta"].step()
        state.ae_steps += 1
    return _step_record(state, state.epoch, phase, loss_value, comp, extra)


def validate(model: DialogueModel, slices: Sequence[Slice], vocab: Vocab, plan: RunPlan) -> DatasetMetrics:
    """Held-out metrics with drop-out off and KL weight 1; parameters are not touched."""
    return evaluate_dataset(model, slices, vocab, batch_size=plan.batch_size, eval_seed=plan.seed,
                            slice_len=plan.slice_len)


def train(plan: RunPlan, model: DialogueModel, train_slices: Sequence[Slice], valid_slices: Sequence[Slice],
          vocab: Vocab, out_dir=None, resume=None, log_path=None) -> TrainResult:
    """Run the plan; returns the log and checkpoint locations.

    ``out_dir`` receives ``last.ckpt`` (every ``checkpoint_every`` epochs) and
    ``best.ckpt`` (lowest validation negative ELBO).  ``resume`` continues
    from a checkpoint written by this function.
    """
    plan.validate()
    if plan.arch != model.cfg.arch:
        raise ConfigError(f"plan is for {plan.arch!r} but the model is {model.cfg.arch!r}")
    if plan.bow != model.cfg.bow:
        raise ConfigError("bow flag differs between plan and model")
    if not train_slices:
        raise ValueError("no training slices")
    obj = plan.objective()
    optimizers = _optimizers(model, plan)
    rng = make_rng(plan.seed, TRAIN)
    state = TrainState()
    if resume is not None:
        _, meta, tensors = load_checkpoint(resume, model, expect_arch=plan.arch)
        state, rng = _restore_training(meta, tensors, optimizers)
        # records after the checkpoint are replayed, so the old tail must go
        result = TrainResult(TrainLog.resume(log_path, state.step, state.epoch), state)
        result.last_checkpoint = str(resume)
    else:
        result = TrainResult(TrainLog(log_path), state)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is not None and (out / "best.ckpt").exists():
            result.best_checkpoint = str(out / "best.ckpt")
    log = result.log
    theta, phi = model.theta(), model.phi()

    try:
        while state.epoch < plan.epochs:
            epoch_phase = _phase_for(plan, state)
            for batch in iter_batches(train_slices, vocab, plan.batch_size, rng, plan.slice_len):
                if plan.max_steps is not None and state.step >= plan.max_steps:
                    break
                phase = _phase_for(plan, state)
                before = (params_hash(theta), params_hash(phi)) if plan.hash_params else None
                rec = _train_step(model, plan, obj, optimizers, batch, rng, state, phase, result.last_checkpoint)
                if before is not None:
                    rec["theta_hash"], rec["phi_hash"] = params_hash(theta), params_hash(phi)
                    rec["theta_before"], rec["phi_before"] = before
                log.append(rec)
                state.step += 1
                state.batches += 1
            state.epoch += 1

            metrics = validate(model, valid_slices, vocab, plan)
            result.final_valid = metrics
            _check_finite(metrics.neg_elbo, state, result.last_checkpoint)
            log.append({
                "kind": "valid", "epoch": state.epoch - 1, "phase": epoch_phase, "step": state.step,
                "neg_elbo": metrics.neg_elbo, "kl": metrics.kl, "ppl": metrics.ppl,
                "nll_per_slice": metrics.nll_per_slice,
            })
            improved = metrics.neg_elbo < state.best_valid
            if improved:
                state.best_valid, state.best_epoch, state.bad_epochs = metrics.neg_elbo, state.epoch - 1, 0
            else:
                state.bad_epochs += 1
            if out is not None:
                if improved:
                    path = out / "best.ckpt"
                    save_checkpoint(path, model, plan, optimizers, state, rng)
                    result.best_checkpoint = str(path)
                if state.epoch % plan.checkpoint_every == 0 or state.epoch == plan.epochs:
                    path = out / "last.ckpt"
                    save_checkpoint(path, model, plan, optimizers, state, rng)
                    result.last_checkpoint = str(path)
            if plan.patience and state.bad_epochs >= plan.patience:
                result.stopped_early = True
                break
            if plan.max_steps is not None and state.step >= plan.max_steps:
                break
    finally:
        for p in model.parameters().values():
            p.requires_grad = True
        log.close()
    return result
