"""Documents, boxes, labels and BIO tag algebra."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

OTHER = "OTHER"
GRID = 1000


class ValidationError(ValueError):
    """Raised when an input document, box or tag sequence breaks a contract."""


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (0 <= self.x1 <= self.x2 <= GRID and 0 <= self.y1 <= self.y2 <= GRID):
            raise ValidationError(f"box {self.as_tuple()} outside the 0-{GRID} grid")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


def normalize_box(box_px: Sequence[int], page_w: int, page_h: int,
                  segment_id: int | None = None) -> BoundingBox:
    """Map a pixel rectangle (left, top, right, bottom) onto the 0-1000 grid."""
    if page_w <= 0 or page_h <= 0:
        raise ValidationError(f"page size must be positive, got {page_w}x{page_h}")
    left, top, right, bottom = (int(v) for v in box_px)
    if not (0 <= left <= right <= page_w and 0 <= top <= bottom <= page_h):
        who = f"segment {segment_id}" if segment_id is not None else "box"
        raise ValidationError(
            f"{who}: pixel box {tuple(box_px)} outside page {page_w}x{page_h}")
    return BoundingBox(left * GRID // page_w, top * GRID // page_h,
                       right * GRID // page_w, bottom * GRID // page_h)


def roi_pixel_rect(box: BoundingBox, page_w_px: int, page_h_px: int) -> tuple[int, int, int, int]:
    """Pixel rectangle (left, top, right, bottom), right/bottom exclusive."""
    left = min(max(box.x1 * page_w_px // GRID, 0), page_w_px)
    top = min(max(box.y1 * page_h_px // GRID, 0), page_h_px)
    right = min(max(box.x2 * page_w_px // GRID, left), page_w_px)
    bottom = min(max(box.y2 * page_h_px // GRID, top), page_h_px)
    return left, top, right, bottom


class RasterImage:
    """RGB image, 8 bits per channel, stored as a read-only (H, W, 3) uint8 array."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3) pixels, got shape {arr.shape}")
        arr.flags.writeable = False
        self._pixels = arr

    @classmethod
    def blank(cls, width: int, height: int, rgb=(255, 255, 255)) -> "RasterImage":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = rgb
        return cls(arr)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    def copy_pixels(self) -> np.ndarray:
        return self._pixels.copy()

    def to_ppm(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self._pixels.tobytes()

    @classmethod
    def from_ppm(cls, data: bytes) -> "RasterImage":
        fields_, pos = [], 0
        while len(fields_) < 4:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            if start == pos:
                raise ValidationError("truncated PPM header")
            fields_.append(data[start:pos])
        pos += 1  # single whitespace before the raster
        if fields_[0] != b"P6":
            raise ValidationError(f"not a binary PPM (magic {fields_[0]!r})")
        width, height, maxval = (int(f) for f in fields_[1:])
        if maxval != 255:
            raise ValidationError(f"only maxval 255 is supported, got {maxval}")
        raster = data[pos:pos + width * height * 3]
        if len(raster) != width * height * 3:
            raise ValidationError("PPM raster shorter than its header claims")
        return cls(np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3))

    def __eq__(self, other):
        return isinstance(other, RasterImage) and np.array_equal(self._pixels, other._pixels)

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height})"


@dataclass(frozen=True)
class LabelSet:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate label names in {self.names}")
        if OTHER in self.names:
            raise ValidationError("OTHER is implicit and must not be listed")

    @property
    def tags(self) -> list[str]:
        """Tag alphabet: O first, then B-/I- pairs in label order."""
        out = ["O"]
        for name in self.names:
            out += [f"B-{name}", f"I-{name}"]
        return out

    def __contains__(self, label):
        return label == OTHER or label in self.names

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class Entity:
    type: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValidationError(f"empty or negative span {self}")


@dataclass(frozen=True)
class TextSegment:
    id: int
    tokens: tuple[str, ...]
    box: BoundingBox
    label: str = OTHER
    # pixel rectangle as given at ingestion; only used to write the JSON back out
    box_px: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValidationError(f"segment {self.id} has no tokens")


@dataclass(frozen=True)
class Document:
    doc_id: str
    segments: tuple[TextSegment, ...]
    image: RasterImage = field(compare=False)
    page_width_px: int = 0
    page_height_px: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.page_width_px:
            object.__setattr__(self, "page_width_px", self.image.width)
        if not self.page_height_px:
            object.__setattr__(self, "page_height_px", self.image.height)

    @property
    def tokens(self) -> list[str]:
        return [tok for seg in self.segments for tok in seg.tokens]

    @property
    def token_boxes(self) -> list[BoundingBox]:
        return [seg.box for seg in self.segments for _ in seg.tokens]

    @property
    def token_segment_index(self) -> list[int]:
        return [i for i, seg in enumerate(self.segments) for _ in seg.tokens]

    def __len__(self):
        return sum(len(seg.tokens) for seg in self.segments)

    def entities(self) -> list[Entity]:
        """Gold entities: one per non-OTHER segment, spanning its tokens."""
        out, pos = [], 0
        for seg in self.segments:
            n = len(seg.tokens)
            if seg.label != OTHER:
                out.append(Entity(seg.label, pos, pos + n))
            pos += n
        return out

    def gold_tags(self) -> list[str]:
        return tags_from_entities(self.entities(), len(self))

    def validate(self, labels: LabelSet | None = None) -> None:
        ids = set()
        for seg in self.segments:
            if seg.id in ids:
                raise ValidationError(f"{self.doc_id}: duplicate segment id {seg.id}")
            ids.add(seg.id)
            if labels is not None and seg.label not in labels:
                raise ValidationError(
                    f"{self.doc_id}: segment {seg.id} has unknown label {seg.label!r}")
        if not is_valid_bio(self.gold_tags()):
            raise ValidationError(f"{self.doc_id}: gold tags are not valid BIO")

    def pixel_box(self, seg: TextSegment) -> tuple[int, int, int, int]:
        if seg.box_px is not None:
            return seg.box_px
        b = seg.box
        w, h = self.page_width_px, self.page_height_px
        return (b.x1 * w // GRID, b.y1 * h // GRID, b.x2 * w // GRID, b.y2 * h // GRID)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "page_width_px": self.page_width_px,
            "page_height_px": self.page_height_px,
            "segments": [
                {"id": seg.id, "label": seg.label, "box": list(self.pixel_box(seg)),
                 "tokens": list(seg.tokens)}
                for seg in self.segments
            ],
        }

    @classmethod
    def from_json(cls, obj: dict, image: RasterImage) -> "Document":
        try:
            w, h = int(obj["page_width_px"]), int(obj["page_height_px"])
            segments = []
            for i, s in enumerate(obj["segments"]):
                box_px = tuple(int(v) for v in s["box"])
                segments.append(TextSegment(
                    id=int(s["id"]), tokens=tuple(s["tokens"]),
                    box=normalize_box(box_px, w, h, segment_id=s["id"]),
                    label=s.get("label", OTHER), box_px=box_px))
            return cls(str(obj["doc_id"]), tuple(segments), image, w, h)
        except KeyError as exc:
            raise ValidationError(f"document JSON missing field {exc}") from None


def save_document(doc: Document, directory: str | Path) -> Path:
    """Write ``<doc_id>.json`` and the sibling ``<doc_id>.ppm``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{doc.doc_id}.json"
    path.write_text(json.dumps(doc.to_json(), indent=1, sort_keys=True) + "\n")
    (directory / f"{doc.doc_id}.ppm").write_bytes(doc.image.to_ppm())
    return path


def load_document(json_path: str | Path) -> Document:
    json_path = Path(json_path)
    obj = json.loads(json_path.read_text())
    ppm = json_path.with_name(f"{obj['doc_id']}.ppm")
    if not ppm.exists():
        ppm = json_path.with_suffix(".ppm")
    return Document.from_json(obj, RasterImage.from_ppm(ppm.read_bytes()))


# ---------------------------------------------------------------- tag algebra

def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, _, name = tag.partition("-")
    if prefix not in ("B", "I") or not name:
        raise ValidationError(f"malformed tag {tag!r}")
    return prefix, name


def tags_from_entities(entities: Iterable[Entity], n_tokens: int) -> list[str]:
    tags = ["O"] * n_tokens
    owner: list[Entity | None] = [None] * n_tokens
    for ent in entities:
        if ent.end > n_tokens:
            raise ValidationError(f"{ent} extends past {n_tokens} tokens")
        for i in range(ent.start, ent.end):
            if owner[i] is not None:
                raise ValidationError(f"overlapping entities {owner[i]} and {ent}")
            owner[i] = ent
        tags[ent.start] = f"B-{ent.type}"
        for i in range(ent.start + 1, ent.end):
            tags[i] = f"I-{ent.type}"
    return tags


def entities_from_tags(tags: Sequence[str]) -> list[Entity]:
    """Decode spans; an I- tag without a matching open entity starts a new one."""
    out: list[Entity] = []
    cur_type, cur_start = None, 0
    for i, tag in enumerate(tags):
        prefix, name = _split_tag(tag)
        if prefix == "I" and name == cur_type:
            continue
        if cur_type is not None:
            out.append(Entity(cur_type, cur_start, i))
        cur_type, cur_start = name, i
    if cur_type is not None:
        out.append(Entity(cur_type, cur_start, len(tags)))
    return out


def is_valid_bio(tags: Sequence[str]) -> bool:
    prev = None
    for tag in tags:
        prefix, name = _split_tag(tag)
        if prefix == "I" and prev != name:
            return False
        prev = name
    return True


def entity_to_dict(ent: Entity) -> dict:
    return {"type": ent.type, "start": ent.start, "end": ent.end}

