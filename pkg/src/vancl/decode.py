"""BIO-constrained Viterbi decoding and end-to-end entity prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .backbone import SL, TaggerModel, Vocabulary, collate, encode_document, forward
from .core import Document, Entity, LabelSet, ValidationError, entities_from_tags


@dataclass(frozen=True)
class TransitionMask:
    tags: tuple
    allowed: np.ndarray    # (T, T): allowed[prev, cur]
    start: np.ndarray      # (T,)

    @classmethod
    def for_tags(cls, tags: Sequence[str]) -> "TransitionMask":
        n = len(tags)
        allowed = np.ones((n, n), dtype=bool)
        start = np.ones(n, dtype=bool)
        for j, cur in enumerate(tags):
            if not cur.startswith("I-"):
                continue
            start[j] = False
            for i, prev in enumerate(tags):
                allowed[i, j] = prev[2:] == cur[2:] and prev != "O"
        return cls(tuple(tags), allowed, start)

    @classmethod
    def for_labels(cls, labels: LabelSet) -> "TransitionMask":
        return cls.for_tags(labels.tags)


def viterbi(scores, mask: TransitionMask, length: int | None = None) -> list[str]:
    """Best legal tag path under hard BIO constraints; ties go to the lowest tag index."""
    scores = np.asarray(scores, dtype=np.float64)
    length = scores.shape[0] if length is None else length
    if length < 1:
        raise ValidationError("viterbi needs at least one token")
    scores = scores[:length]
    trans = np.where(mask.allowed, 0.0, -np.inf)
    best = np.where(mask.start, scores[0], -np.inf)
    back = np.zeros((length, scores.shape[1]), dtype=np.int64)
    for t in range(1, length):
        cand = best[:, None] + trans          # (prev, cur)
        back[t] = np.argmax(cand, axis=0)
        best = cand[back[t], np.arange(cand.shape[1])] + scores[t]
    if not np.isfinite(best).any():
        raise ValidationError("no legal tag path: every final score is -inf")
    path = [int(np.argmax(best))]
    for t in range(length - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [mask.tags[i] for i in path]


@dataclass
class DeployedTagger:
    """What ships: the standard-flow backbone, its vocabulary and label set."""

    model: TaggerModel
    vocab: Vocabulary
    labels: LabelSet
    batch_size: int = 16

    def score_documents(self, docs: Sequence[Document]) -> list[np.ndarray]:
        """Per-document (n_tokens, n_tags) log-probabilities from the standard flow."""
        patch = self.model.config.roi_patch
        dtype = self.model.config.torch_dtype
        out: list[np.ndarray] = [np.zeros((0, len(self.labels.tags)))] * len(docs)
        nonempty = [i for i, d in enumerate(docs) if len(d)]
        was_training = self.model.training
        self.model.eval()
        with torch.no_grad():
            for k in range(0, len(nonempty), self.batch_size):
                idx = nonempty[k:k + self.batch_size]
                enc = [encode_document(docs[i], self.vocab, self.labels, patch) for i in idx]
                batch = collate(enc, dtype)
                dist = forward(self.model, None, batch, SL, train=False)
                logp = dist.log_probs.double().numpy()
                for row, i in enumerate(idx):
                    out[i] = logp[row, :len(enc[row])]
        self.model.train(was_training)
        return out

    def predict_tags(self, docs: Sequence[Document]) -> list[list[str]]:
        mask = TransitionMask.for_labels(self.labels)
        return [viterbi(s, mask) if len(s) else [] for s in self.score_documents(docs)]

    def predict_entities(self, docs: Sequence[Document]) -> list[list[Entity]]:
        return [entities_from_tags(tags) for tags in self.predict_tags(docs)]


def predict_entities(tagger: DeployedTagger, doc: Document) -> list[Entity]:
    return tagger.predict_entities([doc])[0]
