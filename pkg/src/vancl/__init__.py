"""Entity recognition in form documents with a colour-painted second training flow."""

from .core import (OTHER, BoundingBox, Document, Entity, LabelSet, RasterImage, TextSegment,
                   ValidationError, entities_from_tags, is_valid_bio, normalize_box,
                   tags_from_entities)

__version__ = "0.1.0"
