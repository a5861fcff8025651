import json
import struct

import pytest
import torch

from vancl.checkpoint import (MAGIC, load_training_state, read_tensors, save_training_state,
                              write_tensors)
from vancl.core import ValidationError
from vancl.decode import DeployedTagger
from vancl.backbone import Vocabulary
from vancl.synthgen import GenSpec

from helpers import tiny_setup


def test_layout_is_parseable_by_hand(tmp_path):
    tensors = {"b": torch.arange(3, dtype=torch.float32), "a": torch.ones(2, 2, dtype=torch.float64)}
    path = write_tensors(tmp_path / "t.ckpt", tensors, {"k": 1})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    assert raw[16:16 + hlen] == json.dumps(header, sort_keys=True).encode()
    names = [e["name"] for e in header["tensors"]]
    assert names == ["b", "a"]
    body = raw[16 + hlen:]
    assert struct.unpack("<3f", body[:12]) == (0.0, 1.0, 2.0)
    assert len(body) == 12 + 32
    back, meta = read_tensors(path)
    assert meta == {"k": 1} and torch.equal(back["a"], tensors["a"])


def test_rejects_foreign_files(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(ValidationError):
        read_tensors(tmp_path / "x")
    with pytest.raises(ValidationError):
        write_tensors(tmp_path / "y", {"z": torch.zeros(1, dtype=torch.int8)}, {})


def test_training_state_roundtrip_keeps_outer(tmp_path):
    model, outer, _, _ = tiny_setup()
    tagger = DeployedTagger(model, Vocabulary(["a"]), GenSpec().label_set)
    save_training_state(tmp_path / "s.ckpt", tagger, outer)
    tensors, _ = read_tensors(tmp_path / "s.ckpt")
    assert any(k.startswith("outer.") for k in tensors)
    t2, o2, ve = load_training_state(tmp_path / "s.ckpt")
    assert ve is t2.model
    for a, b in zip(outer.parameters(), o2.parameters()):
        assert torch.equal(a, b)
