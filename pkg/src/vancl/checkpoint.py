"""Flat binary tensor container.

Layout: ``VNCLCKPT`` magic, little-endian u64 header length, UTF-8 JSON
header (sorted keys), then the raw little-endian tensor bytes back to back
in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .backbone import ModelConfig, OuterEncoder, TaggerModel, Vocabulary, init_params
from .core import LabelSet, ValidationError
from .decode import DeployedTagger

MAGIC = b"VNCLCKPT"
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


def write_tensors(path, tensors: dict, meta: dict) -> Path:
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise ValidationError(f"unsupported dtype {t.dtype} for tensor {name}")
        raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": _DTYPES[t.dtype],
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<Q", len(header)) + header)
        for raw in blobs:
            fh.write(raw)
    return path


def read_tensors(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValidationError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        raw = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr)
    return tensors, header["meta"]


def save_deployment(path, tagger: DeployedTagger, extra: dict | None = None) -> Path:
    """Write only the standard-flow backbone; no outer encoder tensor is included."""
    meta = {
        "kind": "deployment",
        "model_config": tagger.model.config.to_json(),
        "vocab": tagger.vocab.itos,
        "labels": list(tagger.labels.names),
    }
    if extra:
        meta["extra"] = extra
    return write_tensors(path, dict(tagger.model.state_dict()), meta)


def load_deployment(path) -> DeployedTagger:
    tensors, meta = read_tensors(path)
    config = ModelConfig.from_json(meta["model_config"])
    model, _ = init_params(config, 0)
    model.load_state_dict(tensors)
    vocab = Vocabulary(meta["vocab"][2:])
    return DeployedTagger(model, vocab, LabelSet(tuple(meta["labels"])))


def save_training_state(path, tagger: DeployedTagger, outer: OuterEncoder | None,
                        ve_model: TaggerModel | None = None) -> Path:
    """Full training state, outer encoder included (never used for deployment)."""
    tensors = {f"backbone.{k}": v for k, v in tagger.model.state_dict().items()}
    if outer is not None:
        tensors.update({f"outer.{k}": v for k, v in outer.state_dict().items()})
    if ve_model is not None and ve_model is not tagger.model:
        tensors.update({f"ve_backbone.{k}": v for k, v in ve_model.state_dict().items()})
    meta = {
        "kind": "training",
        "model_config": tagger.model.config.to_json(),
        "vocab": tagger.vocab.itos,
        "labels": list(tagger.labels.names),
    }
    return write_tensors(path, tensors, meta)


def load_training_state(path):
    tensors, meta = read_tensors(path)
    config = ModelConfig.from_json(meta["model_config"])
    model, outer = init_params(config, 0)

    def part(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    model.load_state_dict(part("backbone."))
    outer_state = part("outer.")
    if outer_state:
        outer.load_state_dict(outer_state)
    ve_state = part("ve_backbone.")
    ve_model = model
    if ve_state:
        ve_model, _ = init_params(config, 0)
        ve_model.load_state_dict(ve_state)
    tagger = DeployedTagger(model, Vocabulary(meta["vocab"][2:]), LabelSet(tuple(meta["labels"])))
    return tagger, outer, ve_model
