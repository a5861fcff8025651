"""Colour-prior painting: copy a page image and paint each OCR box by its entity type."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import OTHER, Document, RasterImage, ValidationError, roi_pixel_rect


class PaintMode(str, Enum):
    FILL = "FILL"
    OUTLINE = "OUTLINE"
    NONE = "NONE"


@dataclass(frozen=True)
class Paint:
    rgb: tuple[int, int, int]
    mode: PaintMode = PaintMode.FILL

    @property
    def hex(self) -> str:
        return "#%02X%02X%02X" % self.rgb


@dataclass(frozen=True)
class ColorScheme:
    name: str
    mapping: dict

    def __getitem__(self, label: str) -> Paint:
        try:
            return self.mapping[label]
        except KeyError:
            raise ValidationError(
                f"colour scheme {self.name!r} has no entry for label {label!r}") from None

    def covers(self, labels) -> bool:
        return all(lab in self.mapping for lab in [*labels, OTHER])

    def to_json(self) -> dict:
        return {lab: {"rgb": list(p.rgb), "mode": p.mode.value}
                for lab, p in self.mapping.items()}

    @classmethod
    def from_json(cls, obj: dict, name: str = "custom") -> "ColorScheme":
        mapping = {}
        for lab, entry in obj.items():
            rgb = tuple(int(v) for v in entry["rgb"])
            if len(rgb) != 3 or not all(0 <= v <= 255 for v in rgb):
                raise ValidationError(f"bad rgb for {lab!r}: {entry['rgb']}")
            mapping[lab] = Paint(rgb, PaintMode(entry.get("mode", "FILL")))
        return cls(name, mapping)


def _hex(code: str) -> tuple[int, int, int]:
    code = code.lstrip("#")
    return tuple(int(code[i:i + 2], 16) for i in (0, 2, 4))


# QUESTION, ANSWER, HEADER, OTHER
_TABLE_ROWS = {
    1: ("standard", ("FF0000", "0000FF", "00FF00", "FFA500"), PaintMode.FILL),
    2: ("swap-qa", ("0000FF", "FF0000", "00FF00", "FFA500"), PaintMode.FILL),
    3: ("swap-all", ("FFA500", "00FF00", "FF0000", "0000FF"), PaintMode.FILL),
    4: ("grayscale", ("CCCCCC", "999999", "333333", "000000"), PaintMode.FILL),
    5: ("reds", ("FF0000", "FF6699", "FF3366", "FF0099"), PaintMode.FILL),
    6: ("blues", ("0000FF", "0033CC", "0099FF", "0066CC"), PaintMode.FILL),
    7: ("outline", ("FF0000", "0000FF", "FFA500", "00FF00"), PaintMode.OUTLINE),
    8: ("white", ("FFFFFF", "FFFFFF", "FFFFFF", "FFFFFF"), PaintMode.FILL),
}
SCHEME_LABELS = ("QUESTION", "ANSWER", "HEADER", OTHER)


def builtin_scheme(row: int) -> ColorScheme:
    """Return one of the eight built-in colour schemes (rows 1..8)."""
    if row not in _TABLE_ROWS:
        raise ValidationError(f"unknown colour scheme row {row}; expected 1..8")
    name, colors, mode = _TABLE_ROWS[row]
    mapping = {lab: Paint(_hex(c), mode) for lab, c in zip(SCHEME_LABELS, colors)}
    return ColorScheme(f"{row}-{name}", mapping)


def load_scheme(ref) -> ColorScheme:
    """Resolve ``1``..``8`` (int or digit string) or a path to a JSON scheme file."""
    if isinstance(ref, ColorScheme):
        return ref
    if isinstance(ref, int) or (isinstance(ref, str) and ref.isdigit()):
        return builtin_scheme(int(ref))
    path = Path(ref)
    return ColorScheme.from_json(json.loads(path.read_text()), name=path.stem)


@dataclass(frozen=True)
class PaintedDocument:
    source_doc_id: str
    image: RasterImage
    scheme_name: str


def paint_document(doc: Document, scheme: ColorScheme) -> PaintedDocument:
    pixels = doc.image.copy_pixels()
    height, width = pixels.shape[:2]
    for seg in doc.segments:
        paint = scheme[seg.label]
        if paint.mode is PaintMode.NONE:
            continue
        left, top, right, bottom = roi_pixel_rect(seg.box, width, height)
        if right <= left or bottom <= top:
            continue
        if paint.mode is PaintMode.FILL:
            pixels[top:bottom, left:right] = paint.rgb
        else:
            pixels[top, left:right] = paint.rgb
            pixels[bottom - 1, left:right] = paint.rgb
            pixels[top:bottom, left] = paint.rgb
            pixels[top:bottom, right - 1] = paint.rgb
    return PaintedDocument(doc.doc_id, RasterImage(pixels), scheme.name)


def painted_copy(doc: Document, scheme: ColorScheme) -> Document:
    """The same document with its image replaced by the painted one."""
    painted = paint_document(doc, scheme).image
    return Document(doc.doc_id, doc.segments, painted, doc.page_width_px, doc.page_height_px)
