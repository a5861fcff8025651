"""Toy multimodal tagger.

Per-token embedding is the sum of a word embedding, a 1D position embedding,
six bucketized layout embeddings and a visual embedding computed by a small
CNN from the token's ROI crop.  A pre-norm transformer stack and a linear
head turn it into a distribution over BIO tags.

The standard flow reads crops of the original page through the inner encoder
(part of the shared backbone).  The vision-enhanced flow reads crops of the
painted page through the outer encoder, whose weights live in a separate
module so the deployed model never carries them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import (GRID, BoundingBox, Document, LabelSet, RasterImage, ValidationError,
                   roi_pixel_rect)

PAD, UNK = "<pad>", "<unk>"
SL, VE = "SL", "VE"


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 2
    n_tags: int = 7
    max_seq_len: int = 512
    layout_buckets: int = 32
    # "sinusoidal" (fixed table) or "learned"
    position_embedding: str = "sinusoidal"
    roi_patch: tuple = (8, 8)
    dropout_p: float = 0.1
    inner_encoder: str = "cnn2"
    outer_encoder: str = "cnn4"
    cnn_channels: int = 16
    fusion: str = "early"
    # how the vision-enhanced flow combines encoders: "replace" or "augment"
    ve_visual: str = "replace"
    dtype: str = "float32"

    def __post_init__(self):
        self.roi_patch = tuple(self.roi_patch)
        self.validate()

    def validate(self):
        if self.d_model % self.n_heads:
            raise ValidationError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if min(self.roi_patch) < 1:
            raise ValidationError(f"roi_patch must be >= 1, got {self.roi_patch}")
        if self.position_embedding not in ("sinusoidal", "learned"):
            raise ValidationError(f"unknown position_embedding {self.position_embedding!r}")
        if self.fusion not in ("early", "late"):
            raise ValidationError(f"unknown fusion {self.fusion!r}")
        if self.ve_visual not in ("replace", "augment"):
            raise ValidationError(f"unknown ve_visual {self.ve_visual!r}")
        for enc in (self.inner_encoder, self.outer_encoder):
            _cnn_depth(enc)
        if self.inner_encoder == "none":
            raise ValidationError("the inner encoder cannot be 'none'")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _cnn_depth(kind: str) -> int:
    if kind == "none":
        return 0
    if kind.startswith("cnn") and kind[3:].isdigit() and int(kind[3:]) >= 1:
        return int(kind[3:])
    raise ValidationError(f"unknown visual encoder {kind!r}; expected cnnN or none")


# ------------------------------------------------------------ vocabulary

class Vocabulary:
    """Closed word vocabulary with padding and unknown entries."""

    def __init__(self, words: Sequence[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    @classmethod
    def from_documents(cls, docs) -> "Vocabulary":
        vocab = cls()
        for doc in docs:
            for tok in doc.tokens:
                vocab.add(tok)
        return vocab

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.stoi.get(t, 1) for t in tokens], dtype=np.int64)

    def __len__(self):
        return len(self.itos)


# ------------------------------------------------------------ ROI sampling

def roi_crop(image: RasterImage, box: BoundingBox, patch=(8, 8)) -> np.ndarray:
    """Bilinear resample of the box's pixel rectangle to a (h, w, 3) float patch in [0, 1].

    Sample centres follow the half-pixel convention, so a rectangle that is
    already patch-sized is copied exactly.
    """
    ph, pw = patch
    pixels = image.pixels
    height, width = pixels.shape[:2]
    left, top, right, bottom = roi_pixel_rect(box, width, height)
    if right <= left or bottom <= top:
        x = min(max(left, 0), width - 1)
        y = min(max(top, 0), height - 1)
        out = np.empty((ph, pw, 3), dtype=np.float64)
        out[...] = pixels[y, x] / 255.0
        return out

    def axis(lo, hi, n):
        pos = lo + (np.arange(n) + 0.5) * ((hi - lo) / n) - 0.5
        pos = np.clip(pos, lo, hi - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, hi - 1)
        return i0, i1, pos - i0

    y0, y1, wy = axis(top, bottom, ph)
    x0, x1, wx = axis(left, right, pw)
    img = pixels.astype(np.float64) / 255.0
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top_row = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot_row = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top_row * (1 - wy) + bot_row * wy


# ------------------------------------------------------------ batching

@dataclass
class EncodedDocument:
    doc_id: str
    token_ids: np.ndarray      # (n,)
    boxes: np.ndarray          # (n, 4) on the 0-1000 grid
    segment_of: np.ndarray     # (n,) index into crops
    crops: np.ndarray          # (n_segments, 3, h, w) float32
    tags: np.ndarray           # (n,)

    def __len__(self):
        return len(self.token_ids)


def segment_crops(image: RasterImage, doc: Document, patch) -> np.ndarray:
    if not doc.segments:
        return np.zeros((0, 3, *patch), dtype=np.float32)
    crops = [roi_crop(image, seg.box, patch) for seg in doc.segments]
    return np.stack(crops).transpose(0, 3, 1, 2).astype(np.float32)


def encode_document(doc: Document, vocab: Vocabulary, labels: LabelSet,
                    patch=(8, 8), image: RasterImage | None = None) -> EncodedDocument:
    """Tensorize one document; ``image`` overrides ``doc.image`` for the crops."""
    tag_index = {t: i for i, t in enumerate(labels.tags)}
    n = len(doc)
    boxes = np.array([b.as_tuple() for b in doc.token_boxes], dtype=np.int64).reshape(n, 4)
    return EncodedDocument(
        doc_id=doc.doc_id,
        token_ids=vocab.encode(doc.tokens),
        boxes=boxes,
        segment_of=np.array(doc.token_segment_index, dtype=np.int64),
        crops=segment_crops(image if image is not None else doc.image, doc, patch),
        tags=np.array([tag_index[t] for t in doc.gold_tags()], dtype=np.int64),
    )


@dataclass
class TokenBatch:
    token_ids: torch.Tensor    # (B, L) long
    boxes: torch.Tensor        # (B, L, 4) long
    mask: torch.Tensor         # (B, L) bool, True on real tokens
    crops: torch.Tensor        # (B, L, 3, h, w)
    tags: torch.Tensor         # (B, L) long, 0 on padding
    doc_ids: list = field(default_factory=list)

    @property
    def lengths(self) -> list[int]:
        return self.mask.sum(1).tolist()

    def with_crops(self, crops: torch.Tensor) -> "TokenBatch":
        return TokenBatch(self.token_ids, self.boxes, self.mask, crops, self.tags, self.doc_ids)


def collate(docs: Sequence[EncodedDocument], dtype=torch.float32) -> TokenBatch:
    if not docs:
        raise ValidationError("cannot collate an empty batch")
    bsz, length = len(docs), max(1, max(len(d) for d in docs))
    patch = docs[0].crops.shape[1:]
    ids = np.zeros((bsz, length), dtype=np.int64)
    boxes = np.zeros((bsz, length, 4), dtype=np.int64)
    mask = np.zeros((bsz, length), dtype=bool)
    crops = np.zeros((bsz, length, *patch), dtype=np.float32)
    tags = np.zeros((bsz, length), dtype=np.int64)
    for i, d in enumerate(docs):
        n = len(d)
        ids[i, :n] = d.token_ids
        boxes[i, :n] = d.boxes
        mask[i, :n] = True
        crops[i, :n] = d.crops[d.segment_of]
        tags[i, :n] = d.tags
    return TokenBatch(torch.from_numpy(ids), torch.from_numpy(boxes), torch.from_numpy(mask),
                      torch.from_numpy(crops).to(dtype), torch.from_numpy(tags),
                      [d.doc_id for d in docs])


# ------------------------------------------------------------ modules

def _dropout(x: torch.Tensor, p: float, gen: torch.Generator | None) -> torch.Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class CNNEncoder(nn.Module):
    """``depth`` 3x3 conv+ReLU layers, 2x2 average pool, linear projection."""

    def __init__(self, depth: int, channels: int, d_model: int, patch):
        super().__init__()
        convs, c_in = [], 3
        for _ in range(depth):
            convs.append(nn.Conv2d(c_in, channels, 3, padding=1))
            c_in = channels
        self.convs = nn.ModuleList(convs)
        ph, pw = patch
        self.pooled = (max(ph // 2, 1), max(pw // 2, 1))
        self.proj = nn.Linear(channels * self.pooled[0] * self.pooled[1], d_model)

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        x = F.adaptive_avg_pool2d(x, self.pooled)
        return self.proj(x.flatten(1))


class Block(nn.Module):
    def __init__(self, d_model, n_heads, ffn_dim):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x, key_mask, p, gen):
        bsz, length, d = x.shape
        h = self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q, k, v = (t.view(bsz, length, h, d // h).transpose(1, 2) for t in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // h)
        att = att.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        att = _dropout(torch.softmax(att, dim=-1), p, gen)
        y = (att @ v).transpose(1, 2).reshape(bsz, length, d)
        x = x + _dropout(self.out(y), p, gen)
        y = self.ff2(F.gelu(self.ff1(self.ln2(x))))
        return x + _dropout(y, p, gen)


def sinusoid_table(length: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = 10000.0 ** (-torch.arange(0, d_model, 2, dtype=torch.float64) / d_model)
    table = torch.zeros(length, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, :d_model // 2]
    return table.float()


class TaggerModel(nn.Module):
    """The shared backbone: everything the deployed standard flow needs."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config
        self.config = c
        self.tok_emb = nn.Embedding(c.vocab_size, c.d_model)
        if c.position_embedding == "learned":
            self.pos_emb = nn.Embedding(c.max_seq_len, c.d_model)
        else:
            self.register_buffer("pos_table", sinusoid_table(c.max_seq_len, c.d_model),
                                 persistent=False)
        self.layout_emb = nn.ModuleList(nn.Embedding(c.layout_buckets, c.d_model) for _ in range(6))
        self.inner_encoder = CNNEncoder(_cnn_depth(c.inner_encoder), c.cnn_channels,
                                        c.d_model, c.roi_patch)
        self.blocks = nn.ModuleList(Block(c.d_model, c.n_heads, c.ffn_dim) for _ in range(c.n_layers))
        self.ln_f = nn.LayerNorm(c.d_model)
        self.head = nn.Linear(c.d_model, c.n_tags)

    def position_embedding(self, length):
        if self.config.position_embedding == "learned":
            return self.pos_emb(torch.arange(length))
        return self.pos_table[:length]

    def layout_embedding(self, boxes):
        x1, y1, x2, y2 = boxes.unbind(-1)
        nb = self.config.layout_buckets
        coords = (x1, y1, x2, y2, x2 - x1, y2 - y1)
        out = 0
        for emb, v in zip(self.layout_emb, coords):
            out = out + emb(torch.clamp(v * nb // (GRID + 1), 0, nb - 1))
        return out


class OuterEncoder(nn.Module):
    """Extra visual encoder used only by the vision-enhanced flow."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        depth = _cnn_depth(config.outer_encoder)
        self.encoder = (CNNEncoder(depth, config.cnn_channels, config.d_model, config.roi_patch)
                        if depth else None)

    def forward(self, x):
        return self.encoder(x)


def _reset(module: nn.Module, gen: torch.Generator) -> None:
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif p.dim() == 1:
                p.fill_(1.0)
            else:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) / math.sqrt(fan_in))


def init_params(config: ModelConfig, seed: int) -> tuple[TaggerModel, OuterEncoder]:
    """Deterministically initialised backbone and outer encoder."""
    with torch.random.fork_rng(devices=[]):
        model = TaggerModel(config).to(config.torch_dtype)
        outer = OuterEncoder(config).to(config.torch_dtype)
    _reset(model, torch.Generator().manual_seed(int(seed) * 2))
    _reset(outer, torch.Generator().manual_seed(int(seed) * 2 + 1))
    return model, outer


# ------------------------------------------------------------ forward

@dataclass
class TokenDistributions:
    probs: torch.Tensor        # (B, L, T) softmax
    logits: torch.Tensor       # (B, L, T) pre-softmax scores
    mask: torch.Tensor         # (B, L)
    hidden: torch.Tensor       # (B, L, d) final-layer states
    visual: torch.Tensor       # (B, L, d) visual embeddings

    @property
    def log_probs(self) -> torch.Tensor:
        return torch.log_softmax(self.logits, dim=-1)


def visual_embedding(params: TaggerModel, outer: OuterEncoder | None, crops: torch.Tensor,
                     mode: str) -> torch.Tensor:
    bsz, length = crops.shape[:2]
    flat = crops.reshape(bsz * length, *crops.shape[2:])
    if mode == SL:
        vis = params.inner_encoder(flat)
    elif mode == VE:
        if outer is None:
            raise ValidationError("the vision-enhanced flow needs outer encoder parameters")
        if outer.encoder is None:
            vis = params.inner_encoder(flat)
        elif params.config.ve_visual == "augment":
            vis = params.inner_encoder(flat) + outer(flat)
        else:
            vis = outer(flat)
    else:
        raise ValidationError(f"unknown flow {mode!r}")
    return vis.view(bsz, length, -1)


def forward(params: TaggerModel, outer: OuterEncoder | None, batch: TokenBatch, mode: str = SL,
            train: bool = False, seed: int = 0) -> TokenDistributions:
    c = params.config
    bsz, length = batch.token_ids.shape
    if length > c.max_seq_len:
        raise ValidationError(f"sequence length {length} exceeds max_seq_len {c.max_seq_len}")
    if batch.crops.shape[:2] != (bsz, length) or tuple(batch.crops.shape[-2:]) != tuple(c.roi_patch):
        raise ValidationError(f"crop tensor shape {tuple(batch.crops.shape)} does not match batch "
                              f"{(bsz, length)} and patch {c.roi_patch}")
    gen = torch.Generator().manual_seed(int(seed)) if train and c.dropout_p > 0 else None

    # padded slots may hold anything; zero them before they reach the CNN
    crops = torch.where(batch.mask[:, :, None, None, None], batch.crops.to(c.torch_dtype),
                        torch.zeros((), dtype=c.torch_dtype))
    vis = visual_embedding(params, outer, crops, mode)
    x = (params.tok_emb(batch.token_ids) + params.position_embedding(length)[None].to(c.torch_dtype)
         + params.layout_embedding(batch.boxes))
    if c.fusion == "early":
        x = x + vis
    x = _dropout(x, c.dropout_p, gen)
    for block in params.blocks:
        x = block(x, batch.mask, c.dropout_p, gen)
    if c.fusion == "late":
        x = x + vis
    hidden = params.ln_f(x)
    logits = params.head(hidden)
    return TokenDistributions(torch.softmax(logits, dim=-1), logits, batch.mask, hidden, vis)


def count_parameters(module: nn.Module | None) -> int:
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters())
