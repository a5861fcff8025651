"""Exact-match entity precision, recall and F1."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Entity, ValidationError


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def support(self) -> int:
        return self.tp + self.fn

    def prf(self) -> tuple[float, float, float]:
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f1


@dataclass
class EntityScores:
    micro: Counts = field(default_factory=Counts)
    per_type: dict = field(default_factory=dict)

    def add(self, other: "EntityScores") -> None:
        self.micro += other.micro
        for t, c in other.per_type.items():
            self.per_type.setdefault(t, Counts())
            self.per_type[t] += c

    @property
    def precision(self):
        return self.micro.prf()[0]

    @property
    def recall(self):
        return self.micro.prf()[1]

    @property
    def f1(self):
        return self.micro.prf()[2]


def entity_prf(pred: Iterable[Entity], gold: Iterable[Entity]) -> EntityScores:
    pred_c, gold_c = Counter(pred), Counter(gold)
    scores = EntityScores()
    for ent in set(pred_c) | set(gold_c):
        hit = min(pred_c[ent], gold_c[ent])
        c = Counts(hit, pred_c[ent] - hit, gold_c[ent] - hit)
        scores.micro += c
        scores.per_type.setdefault(ent.type, Counts())
        scores.per_type[ent.type] += c
    return scores


@dataclass
class MetricsReport:
    scores: EntityScores
    n_docs: int
    labels: tuple = ()

    def to_json(self) -> dict:
        p, r, f1 = self.scores.micro.prf()
        per_type = {}
        for lab in sorted(set(self.labels) | set(self.scores.per_type)):
            c = self.scores.per_type.get(lab, Counts())
            tp, tr, tf = c.prf()
            per_type[lab] = {"p": tp, "r": tr, "f1": tf, "support": c.support}
        return {"micro": {"p": p, "r": r, "f1": f1}, "per_type": per_type, "n_docs": self.n_docs}

    @property
    def f1(self) -> float:
        return self.scores.f1


def score_corpus(predictions: Sequence[Sequence[Entity]], golds: Sequence[Sequence[Entity]],
                 labels: Sequence[str] = ()) -> MetricsReport:
    """Micro-aggregate by summing counts over documents."""
    if not golds:
        raise ValidationError("cannot evaluate an empty test set")
    if len(predictions) != len(golds):
        raise ValidationError(f"{len(predictions)} predictions for {len(golds)} documents")
    total = EntityScores()
    for pred, gold in zip(predictions, golds):
        total.add(entity_prf(pred, gold))
    return MetricsReport(total, len(golds), tuple(labels))


def evaluate(tagger, test_docs) -> MetricsReport:
    """Run the deployed standard flow over ``test_docs`` and score its entities."""
    test_docs = list(test_docs)
    if not test_docs:
        raise ValidationError("cannot evaluate an empty test set")
    preds = tagger.predict_entities(test_docs)
    return score_corpus(preds, [d.entities() for d in test_docs], tagger.labels.names)
