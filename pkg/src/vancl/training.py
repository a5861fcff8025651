"""Dual-flow training: supervised CE on both flows plus a consistency term.

Modes
-----
VANCL   standard flow on original crops, vision-enhanced flow on painted crops
NONE    same two flows, consistency weight forced to zero
RDROP   two dropout draws of the standard flow on original crops
MUTUAL  two independent networks on original crops, each pulled towards the
        other's detached prediction
``baseline=True`` skips the second flow entirely.

Dropout seeds are ``dropout_seed(cfg.seed, step, flow)`` with flow 0 for the
standard flow and 1 for the second forward, so any loop that follows the same
contract replays the same masks.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import (SL, VE, EncodedDocument, ModelConfig, TokenBatch, Vocabulary, collate,
                       encode_document, forward, init_params, segment_crops)
from .core import LabelSet, ValidationError
from .decode import DeployedTagger
from .losses import DIVERGENCES, consistency_loss, cross_entropy, detached
from .metrics import evaluate
from .paint import load_scheme, paint_document

log = logging.getLogger(__name__)

MODES = ("VANCL", "NONE", "RDROP", "MUTUAL")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-3
    adam_betas: tuple = (0.9, 0.99)
    dropout_p: float = 0.1
    batch_size: int = 8
    epochs: int = 20
    lam: float = 1.0
    divergence: str = "KL"
    mode: str = "VANCL"
    share_weights: bool = True
    scheme: object = 1
    painted: bool = True
    baseline: bool = False
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self):
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be > 0, got {self.lr}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.divergence not in DIVERGENCES:
            raise ValidationError(f"unknown divergence {self.divergence!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.baseline and self.mode != "NONE":
            raise ValidationError("baseline runs use mode NONE")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.mode == "NONE" else self.lam

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown TrainConfig fields {sorted(unknown)}")
        return cls(**obj)


@dataclass
class StepReport:
    step: int
    L_sup: float
    L_cons: float
    L_final: float
    grad_norm: float


def dropout_seed(seed: int, step: int, flow: int) -> int:
    return (int(seed) * 1_000_003 + int(step) * 4 + int(flow)) % (2 ** 62)


@dataclass
class PreparedData:
    labels: LabelSet
    vocab: Vocabulary
    sl: list            # EncodedDocument per train doc, original crops
    ve_crops: list      # painted (or original) crops per train doc

    def batch(self, idx: Sequence[int], dtype=torch.float32) -> tuple[TokenBatch, TokenBatch]:
        sl = collate([self.sl[i] for i in idx], dtype)
        ve_docs = [EncodedDocument(d.doc_id, d.token_ids, d.boxes, d.segment_of, self.ve_crops[i], d.tags)
                   for i, d in ((i, self.sl[i]) for i in idx)]
        return sl, collate(ve_docs, dtype)


def prepare_data(docs, labels: LabelSet, cfg: TrainConfig, patch, vocab: Vocabulary | None = None,
                 need_ve: bool = True) -> PreparedData:
    docs = [d for d in docs if len(d)]
    if not docs:
        raise ValidationError("training split has no non-empty documents")
    vocab = vocab or Vocabulary.from_documents(docs)
    sl = [encode_document(d, vocab, labels, patch) for d in docs]
    if need_ve and cfg.painted and not cfg.baseline and cfg.mode in ("VANCL", "NONE"):
        scheme = load_scheme(cfg.scheme)
        ve = [segment_crops(paint_document(d, scheme).image, d, patch) for d in docs]
    else:
        ve = [e.crops for e in sl]
    return PreparedData(labels, vocab, sl, ve)


class DualFlowTrainer:
    """Holds every trainable network and the single Adam optimiser over them."""

    def __init__(self, model_cfg: ModelConfig, cfg: TrainConfig):
        self.cfg = cfg
        self.model, self.outer = init_params(model_cfg, cfg.seed)
        self.ve_model = self.model
        self.peer = None
        params = list(self.model.parameters())
        if cfg.mode in ("VANCL", "NONE") and not cfg.baseline:
            if not cfg.share_weights:
                self.ve_model = copy.deepcopy(self.model)
                params += list(self.ve_model.parameters())
            params += list(self.outer.parameters())
        elif cfg.mode == "MUTUAL":
            self.peer, _ = init_params(model_cfg, cfg.seed + 7919)
            params += list(self.peer.parameters())
        self.params = params
        self.optimizer = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.adam_betas)
        self.step_index = 0

    def named_trainables(self):
        yield from ((f"backbone.{n}", p) for n, p in self.model.named_parameters())
        if self.ve_model is not self.model:
            yield from ((f"ve_backbone.{n}", p) for n, p in self.ve_model.named_parameters())
        if self.cfg.mode in ("VANCL", "NONE") and not self.cfg.baseline:
            yield from ((f"outer.{n}", p) for n, p in self.outer.named_parameters())
        if self.peer is not None:
            yield from ((f"peer.{n}", p) for n, p in self.peer.named_parameters())

    def losses(self, sl: TokenBatch, ve: TokenBatch, step: int):
        cfg = self.cfg
        s0, s1 = dropout_seed(cfg.seed, step, 0), dropout_seed(cfg.seed, step, 1)
        p_sl = forward(self.model, None, sl, SL, train=True, seed=s0)
        ce_sl = cross_entropy(p_sl, sl.tags, sl.mask)
        if cfg.baseline:
            zero = torch.zeros((), dtype=ce_sl.dtype)
            return ce_sl, zero, ce_sl
        if cfg.mode in ("VANCL", "NONE"):
            p_two = forward(self.ve_model, self.outer, ve, VE, train=True, seed=s1)
            l_cons = consistency_loss(p_sl, p_two, cfg.divergence, sl.mask)
        elif cfg.mode == "RDROP":
            p_two = forward(self.model, None, sl, SL, train=True, seed=s1)
            l_cons = consistency_loss(p_sl, p_two, cfg.divergence, sl.mask)
        else:
            p_two = forward(self.peer, None, sl, SL, train=True, seed=s1)
            l_cons = (consistency_loss(p_sl, detached(p_two), cfg.divergence, sl.mask)
                      + consistency_loss(detached(p_sl), p_two, cfg.divergence, sl.mask))
        l_sup = ce_sl + cross_entropy(p_two, sl.tags, sl.mask)
        lam = cfg.effective_lambda
        l_final = l_sup + lam * l_cons if lam else l_sup
        return l_sup, l_cons, l_final

    def train_step(self, sl: TokenBatch, ve: TokenBatch) -> StepReport:
        step = self.step_index
        self.optimizer.zero_grad(set_to_none=True)
        l_sup, l_cons, l_final = self.losses(sl, ve, step)
        if not torch.isfinite(l_final):
            raise TrainingError(f"non-finite loss at step {step}: L_sup={l_sup.item()} "
                                f"L_cons={l_cons.item()} L_final={l_final.item()}")
        l_final.backward()
        sq = 0.0
        for name, p in self.named_trainables():
            if p.grad is None:
                continue
            if not torch.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient for {name} at step {step}")
            sq += float((p.grad.double() ** 2).sum())
        self.optimizer.step()
        self.step_index += 1
        return StepReport(step, l_sup.item(), l_cons.item(), l_final.item(), math.sqrt(sq))


def train_step(trainer: DualFlowTrainer, batch_pair) -> StepReport:
    return trainer.train_step(*batch_pair)


@dataclass
class TrainResult:
    tagger: DeployedTagger
    trainer: DualFlowTrainer
    history: list = field(default_factory=list)

    @property
    def outer(self):
        return self.trainer.outer


def build_model_config(model_cfg: ModelConfig, cfg: TrainConfig, vocab: Vocabulary,
                       labels: LabelSet) -> ModelConfig:
    c = ModelConfig.from_json(model_cfg.to_json())
    c.vocab_size = len(vocab)
    c.n_tags = len(labels.tags)
    c.dropout_p = cfg.dropout_p
    c.validate()
    return c


def train(train_docs, labels: LabelSet, cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          dev_docs=None, log_path=None, on_epoch=None) -> TrainResult:
    """Epoch loop with seeded shuffling; returns the deployable standard flow only."""
    model_cfg = model_cfg or ModelConfig()
    data = prepare_data(train_docs, labels, cfg, model_cfg.roi_patch)
    mcfg = build_model_config(model_cfg, cfg, data.vocab, labels)
    trainer = DualFlowTrainer(mcfg, cfg)
    tagger = DeployedTagger(trainer.model, data.vocab, labels)
    dtype = mcfg.torch_dtype
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        n = len(data.sl)
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            trainer.model.train()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            reports = []
            for k in range(0, n, cfg.batch_size):
                idx = order[k:k + cfg.batch_size]
                reports.append(trainer.train_step(*data.batch(idx, dtype)))
            record = {
                "epoch": epoch + 1,
                "L_sup": float(np.mean([r.L_sup for r in reports])),
                "L_cons": float(np.mean([r.L_cons for r in reports])),
                "L_final": float(np.mean([r.L_final for r in reports])),
                "dev_precision": None, "dev_recall": None, "dev_f1": None,
            }
            if dev_docs:
                scores = evaluate(tagger, dev_docs).scores
                record.update(dev_precision=scores.precision, dev_recall=scores.recall,
                              dev_f1=scores.f1)
            record["wall_s"] = round(time.perf_counter() - t0, 3)
            history.append(record)
            log.info("epoch %d L_final=%.4f dev_f1=%s", epoch + 1, record["L_final"], record["dev_f1"])
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
    finally:
        if log_fh:
            log_fh.close()
    trainer.model.eval()
    return TrainResult(tagger, trainer, history)
