"""Synthetic form corpus, FUNSD ingestion and low-resource subsampling.

Generated pages place labelled text segments in grid cells.  Each segment's
cell background follows its label's style, so when a segment's words come
from the shared ambiguous vocabulary its type can only be read off the pixels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (OTHER, Document, LabelSet, RasterImage, TextSegment, ValidationError,
                   load_document, normalize_box, save_document)

DEFAULT_LABELS = ("QUESTION", "ANSWER", "HEADER")

DEFAULT_VOCAB = {
    "QUESTION": ["name", "date", "phone", "fax", "to", "from", "subj", "addr",
                 "city", "state", "zip", "email", "title", "acct", "no."],
    "ANSWER": ["smith", "june", "nyc", "yes", "no", "brown", "dallas", "march",
               "paid", "jones", "42", "1998", "usa", "ok", "lee"],
    "HEADER": ["report", "memo", "budget", "agenda", "notes", "plan", "form",
               "notice", "review", "terms", "index", "part", "annex", "brief", "topic"],
    OTHER: ["page", "of", "the", "and", "see", "copy", "file", "ref",
            "note", "via", "per", "cc", "enc", "misc", "attn"],
}
AMBIGUOUS_VOCAB = ["item", "total", "code", "type", "value", "unit", "group", "area",
                   "level", "entry", "field", "data", "line", "piece", "mark", "set",
                   "rate", "term", "case", "point"]

# Near-white shades: a visual cue for the pixels, but faint enough that
# a small CNN does not pick it up reliably from the original image alone.
DEFAULT_STYLES = {
    "QUESTION": {"background": [246, 246, 255], "border": False},
    "ANSWER": {"background": [255, 255, 255], "border": False},
    "HEADER": {"background": [240, 240, 240], "border": False},
    OTHER: {"background": [255, 250, 240], "border": False},
}

CHAR_W, CHAR_GAP, SPACE_W, GLYPH_H, PAD = 3, 1, 4, 7, 2
INK = (30, 30, 30)
BORDER_INK = (90, 90, 90)


@dataclass
class GenSpec:
    seed: int = 0
    n_train: int = 250
    n_test: int = 50
    labels: tuple = DEFAULT_LABELS
    page_px: tuple = (256, 256)
    grid: tuple = (12, 2)
    segments_per_doc: int = 12
    tokens_per_segment: tuple = (1, 4)
    ambiguity: float = 0.5
    vocab: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_VOCAB.items()})
    ambiguous_vocab: list = field(default_factory=lambda: list(AMBIGUOUS_VOCAB))
    style_map: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_STYLES)))

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.page_px = tuple(self.page_px)
        self.grid = tuple(self.grid)
        self.tokens_per_segment = tuple(self.tokens_per_segment)

    def validate(self) -> None:
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ValidationError(f"ambiguity must lie in [0, 1], got {self.ambiguity}")
        rows, cols = self.grid
        if self.segments_per_doc > rows * cols:
            raise ValidationError(
                f"{self.segments_per_doc} segments do not fit a {rows}x{cols} grid")
        if self.n_train < 0 or self.n_test < 0:
            raise ValidationError("document counts must be non-negative")
        for lab in (*self.labels, OTHER):
            if not self.vocab.get(lab):
                raise ValidationError(f"empty vocabulary for label {lab!r}")
            if lab not in self.style_map:
                raise ValidationError(f"no render style for label {lab!r}")
        if self.ambiguity > 0 and not self.ambiguous_vocab:
            raise ValidationError("ambiguous vocabulary is empty")
        lo, hi = self.tokens_per_segment
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad tokens_per_segment {self.tokens_per_segment}")
        width, height = self.page_px
        cell_w, cell_h = width // cols, height // rows
        longest = max(len(w) for words in [*self.vocab.values(), self.ambiguous_vocab]
                      for w in words)
        need_w = hi * longest * (CHAR_W + CHAR_GAP) + (hi - 1) * SPACE_W + 2 * PAD + 2
        if need_w > cell_w or GLYPH_H + 2 * PAD + 2 > cell_h:
            raise ValidationError(f"grid cells of {cell_w}x{cell_h}px are too small for the text")

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(self.labels)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "GenSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown GenSpec fields {sorted(unknown)}")
        return cls(**obj)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CorpusSplit:
    train: list
    test: list
    labels: LabelSet = field(default_factory=lambda: LabelSet(DEFAULT_LABELS))

    def __post_init__(self):
        overlap = {d.doc_id for d in self.train} & {d.doc_id for d in self.test}
        if overlap:
            raise ValidationError(f"train and test share doc ids {sorted(overlap)[:5]}")


def _render_text(pixels, x, y, tokens):
    for tok in tokens:
        for _ in tok:
            pixels[y:y + GLYPH_H, x:x + CHAR_W] = INK
            x += CHAR_W + CHAR_GAP
        x += SPACE_W
    return x


def generate_document(spec: GenSpec, index: int) -> Document:
    rng = np.random.default_rng([spec.seed, index])
    width, height = spec.page_px
    rows, cols = spec.grid
    cell_w, cell_h = width // cols, height // rows
    classes = [*spec.labels, OTHER]

    cells = np.sort(rng.choice(rows * cols, size=spec.segments_per_doc, replace=False))
    pixels = np.full((height, width, 3), 255, dtype=np.uint8)
    segments = []
    lo, hi = spec.tokens_per_segment
    prev = OTHER
    for seg_id, cell in enumerate(cells):
        # adjacent entities in reading order never share a type
        choices = [c for c in classes if c == OTHER or c != prev]
        label = choices[rng.integers(len(choices))]
        prev = label
        n_tok = int(rng.integers(lo, hi + 1))
        ambiguous = rng.random() < spec.ambiguity
        pool = spec.ambiguous_vocab if ambiguous else spec.vocab[label]
        tokens = [pool[i] for i in rng.integers(len(pool), size=n_tok)]

        text_w = sum(len(t) * (CHAR_W + CHAR_GAP) for t in tokens) + (n_tok - 1) * SPACE_W
        box_w = text_w + 2 * PAD
        box_h = GLYPH_H + 2 * PAD
        row, col = divmod(int(cell), cols)
        left = col * cell_w + int(rng.integers(0, cell_w - box_w + 1))
        top = row * cell_h + int(rng.integers(0, cell_h - box_h + 1))
        right, bottom = left + box_w, top + box_h

        style = spec.style_map[label]
        pixels[top:bottom, left:right] = style["background"]
        if style.get("border"):
            pixels[top, left:right] = BORDER_INK
            pixels[bottom - 1, left:right] = BORDER_INK
            pixels[top:bottom, left] = BORDER_INK
            pixels[top:bottom, right - 1] = BORDER_INK
        _render_text(pixels, left + PAD, top + PAD, tokens)

        box_px = (left, top, right, bottom)
        segments.append(TextSegment(seg_id, tuple(tokens), normalize_box(box_px, width, height, seg_id),
                                    label, box_px))
    return Document(f"doc{index:05d}", tuple(segments), RasterImage(pixels), width, height)


def generate_corpus(spec: GenSpec) -> CorpusSplit:
    spec.validate()
    total = spec.n_train + spec.n_test
    docs = [generate_document(spec, i) for i in range(total)]
    return CorpusSplit(docs[:spec.n_train], docs[spec.n_train:], spec.label_set)


def write_corpus(split: CorpusSplit, out_dir, spec: GenSpec | None = None) -> Path:
    out_dir = Path(out_dir)
    docs_dir = out_dir / "docs"
    for doc in [*split.train, *split.test]:
        save_document(doc, docs_dir)
    manifest = {
        "labels": list(split.labels.names),
        "train": [d.doc_id for d in split.train],
        "test": [d.doc_id for d in split.test],
    }
    if spec is not None:
        manifest["spec"] = spec.to_json()
        manifest["spec_digest"] = spec.digest()
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_corpus(corpus_dir) -> CorpusSplit:
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    docs_dir = corpus_dir / "docs"
    train = [load_document(docs_dir / f"{i}.json") for i in manifest["train"]]
    test = [load_document(docs_dir / f"{i}.json") for i in manifest["test"]]
    return CorpusSplit(train, test, LabelSet(tuple(manifest["labels"])))


# ------------------------------------------------------------------- FUNSD

FUNSD_LABELS = LabelSet(("QUESTION", "ANSWER", "HEADER"))


def _need(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ValidationError(f"FUNSD parse error: missing {path}.{key}")
    return obj[key]


def load_funsd(annotation_json: bytes, image_ppm: bytes, doc_id: str = "funsd") -> Document:
    """Build a Document from a FUNSD annotation and a PPM rendering of its scan.

    Word boxes and entity links are dropped; form entries without words are skipped.
    """
    try:
        root = json.loads(annotation_json)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"FUNSD parse error: {exc}") from None
    image = RasterImage.from_ppm(image_ppm)
    form = _need(root, "form", "$")
    if not isinstance(form, list):
        raise ValidationError("FUNSD parse error: $.form is not an array")
    segments = []
    for i, entry in enumerate(form):
        path = f"$.form[{i}]"
        seg_id = int(_need(entry, "id", path))
        label = str(_need(entry, "label", path)).upper()
        box = _need(entry, "box", path)
        words = _need(entry, "words", path)
        tokens = []
        for j, word in enumerate(words):
            text = str(_need(word, "text", f"{path}.words[{j}]"))
            if text.strip():
                tokens.append(text)
        if not tokens:
            continue
        if label not in FUNSD_LABELS:
            raise ValidationError(f"FUNSD parse error: {path}.label {label!r} not recognised")
        box_px = tuple(int(v) for v in box)
        segments.append(TextSegment(seg_id, tuple(tokens),
                                    normalize_box(box_px, image.width, image.height, seg_id),
                                    label, box_px))
    return Document(doc_id, tuple(segments), image, image.width, image.height)


# -------------------------------------------------------------- subsampling

def subsample(train: list, p: float, seed: int) -> list:
    """Seeded draw of ceil(p * N) documents without replacement, original order kept."""
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"subsample fraction must be in (0, 1], got {p}")
    n = len(train)
    k = min(n, math.ceil(round(p * n, 9)))
    if k == n:
        return list(train)
    rng = np.random.default_rng([seed, int(round(p * 1e6))])
    keep = np.sort(rng.choice(n, size=k, replace=False))
    return [train[i] for i in keep]
