"""Token-level hidden-state export for external projection tools."""

from __future__ import annotations

from typing import Sequence

import torch

from .backbone import SL, VE, OuterEncoder, TaggerModel, Vocabulary, collate, encode_document, forward
from .core import Document, LabelSet, ValidationError
from .paint import ColorScheme, paint_document

META_COLUMNS = ("doc_id", "token_index", "tag")


def token_embeddings(model: TaggerModel, outer: OuterEncoder | None, docs: Sequence[Document],
                     vocab: Vocabulary, labels: LabelSet, flow: str = SL,
                     scheme: ColorScheme | None = None):
    """Yield (doc_id, token_index, gold_tag, vector) for every real token.

    The VE flow reads painted crops when ``scheme`` is given, otherwise the
    original image.  Dropout is off.
    """
    if flow not in (SL, VE):
        raise ValidationError(f"flow must be SL or VE, got {flow!r}")
    patch = model.config.roi_patch
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for doc in docs:
                if not len(doc):
                    continue
                image = paint_document(doc, scheme).image if (flow == VE and scheme) else None
                enc = encode_document(doc, vocab, labels, patch, image=image)
                dist = forward(model, outer if flow == VE else None, collate([enc], model.config.torch_dtype),
                               flow, train=False)
                hidden = dist.hidden[0].double().numpy()
                for i, tag in enumerate(doc.gold_tags()):
                    yield doc.doc_id, i, tag, hidden[i]
    finally:
        model.train(was_training)


def write_tsv(rows, path, d_model: int) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join([*META_COLUMNS, *(f"h{k}" for k in range(d_model))]) + "\n")
        for doc_id, idx, tag, vec in rows:
            fh.write("\t".join([doc_id, str(idx), tag, *(repr(float(v)) for v in vec)]) + "\n")
            n += 1
    return n
