import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vancl.backbone import (SL, VE, ModelConfig, TokenBatch, Vocabulary, collate, encode_document,
                            forward, init_params, roi_crop)
from vancl.core import BoundingBox, RasterImage, ValidationError, normalize_box
from vancl.losses import cross_entropy
from vancl.synthgen import GenSpec, generate_document

from helpers import fd_gradient_errors, tiny_setup


def reference_crop(pixels, rect, patch):
    """Per-pixel bilinear sampler, half-pixel centres, edge clamped."""
    left, top, right, bottom = rect
    ph, pw = patch
    out = np.zeros((ph, pw, 3))
    if right <= left or bottom <= top:
        y = min(max(top, 0), pixels.shape[0] - 1)
        x = min(max(left, 0), pixels.shape[1] - 1)
        out[:] = pixels[y, x] / 255.0
        return out
    for i in range(ph):
        sy = top + (i + 0.5) * (bottom - top) / ph - 0.5
        sy = min(max(sy, top), bottom - 1)
        for j in range(pw):
            sx = left + (j + 0.5) * (right - left) / pw - 0.5
            sx = min(max(sx, left), right - 1)
            acc = np.zeros(3)
            ya, xa = math.floor(sy), math.floor(sx)
            for yy, wy in ((ya, 1 - (sy - ya)), (min(ya + 1, bottom - 1), sy - ya)):
                for xx, wx in ((xa, 1 - (sx - xa)), (min(xa + 1, right - 1), sx - xa)):
                    acc += wy * wx * pixels[yy, xx] / 255.0
            out[i, j] = acc
    return out


def test_crop_constant_field():
    img = RasterImage.blank(20, 16, (128, 128, 128))
    patch = roi_crop(img, BoundingBox(100, 200, 650, 900), (8, 8))
    assert np.allclose(patch, 128 / 255, atol=1e-12)
    assert abs(128 / 255 - 0.5) <= 1 / 255


def test_crop_identity_sampling():
    rng = np.random.default_rng(0)
    img = RasterImage(rng.integers(0, 256, (16, 16, 3)))
    box = normalize_box((4, 4, 12, 12), 16, 16)
    assert np.array_equal(roi_crop(img, box, (8, 8)), img.pixels[4:12, 4:12] / 255.0)


def test_crop_half_red_half_blue_center_is_purple():
    px = np.zeros((4, 4, 3), np.uint8)
    px[:, :2] = (255, 0, 0)
    px[:, 2:] = (0, 0, 255)
    patch = roi_crop(RasterImage(px), BoundingBox(0, 0, 1000, 1000), (1, 1))
    # sample x = 0 + 0.5 * 4 - 0.5 = 1.5 sits halfway between pixel 1 (red) and 2 (blue)
    assert np.allclose(patch[0, 0], [0.5, 0.0, 0.5])


def test_crop_degenerate_box_replicates_pixel():
    rng = np.random.default_rng(1)
    img = RasterImage(rng.integers(0, 256, (10, 10, 3)))
    patch = roi_crop(img, BoundingBox(300, 500, 300, 800), (4, 4))
    assert np.array_equal(patch, np.broadcast_to(img.pixels[5, 3] / 255.0, (4, 4, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(8, 8), (3, 5), (1, 1)]))
def test_crop_matches_reference_sampler(seed, patch):
    rng = np.random.default_rng(seed)
    w, h = int(rng.integers(1, 30)), int(rng.integers(1, 30))
    img = RasterImage(rng.integers(0, 256, (h, w, 3)))
    x1, x2 = sorted(rng.integers(0, w + 1, 2))
    y1, y2 = sorted(rng.integers(0, h + 1, 2))
    box = normalize_box((x1, y1, x2, y2), w, h)
    from vancl.core import roi_pixel_rect
    ref = reference_crop(img.pixels, roi_pixel_rect(box, w, h), patch)
    assert np.allclose(roi_crop(img, box, patch), ref, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(d_model=10, n_heads=4).validate()
    with pytest.raises(ValidationError):
        ModelConfig(roi_patch=(0, 4)).validate()


def test_init_deterministic_and_seed_sensitive():
    cfg = ModelConfig(vocab_size=20, d_model=16, ffn_dim=32)
    (a, oa), (b, ob), (c, _) = init_params(cfg, 0), init_params(cfg, 0), init_params(cfg, 1)
    for (n, x), y in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(x, y), n
    assert any(not torch.equal(x, y) for x, y in zip(a.parameters(), c.parameters()))
    assert all(torch.isfinite(p).all() for p in [*a.parameters(), *oa.parameters()])
    assert all(float(p.detach().abs().sum()) == 0 for n, p in a.named_parameters() if n.endswith("bias"))
    w = a.blocks[0].ff1.weight
    assert abs(float(w.detach().std()) * math.sqrt(w.shape[1]) - 1) < 0.2


def test_eval_forward_deterministic_and_rows_normalised():
    model, outer, batch, _ = tiny_setup()
    d1, d2 = forward(model, outer, batch, SL), forward(model, outer, batch, SL)
    assert torch.equal(d1.probs, d2.probs)
    sums = d1.probs[batch.mask].sum(-1).double()
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
    assert (d1.probs >= 0).all()


def test_seeded_dropout_replays():
    model, outer, batch, _ = tiny_setup(dropout_p=0.3)
    a = forward(model, outer, batch, SL, train=True, seed=5).probs
    b = forward(model, outer, batch, SL, train=True, seed=5).probs
    c = forward(model, outer, batch, SL, train=True, seed=6).probs
    assert torch.equal(a, b) and not torch.equal(a, c)


def test_zero_weights_give_softmax_of_bias():
    cfg = ModelConfig(vocab_size=5, d_model=8, n_heads=2, ffn_dim=16, n_tags=7)
    model, _ = init_params(cfg, 0)
    bias = torch.tensor([0.3, -1.0, 2.0, 0.0, 0.5, -0.2, 1.1])
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        model.head.bias.copy_(bias)
    batch = TokenBatch(torch.tensor([[3]]), torch.tensor([[[10, 20, 30, 40]]]), torch.tensor([[True]]),
                       torch.rand(1, 1, 3, 8, 8), torch.tensor([[0]]))
    out = forward(model, None, batch, SL).probs[0, 0]
    e = [math.exp(b) for b in bias.tolist()]
    expected = torch.tensor([v / sum(e) for v in e])
    assert torch.allclose(out, expected, atol=1e-6)


def test_permutation_equivariance_without_positions():
    model, outer, batch, _ = tiny_setup(n_docs=1)
    with torch.no_grad():
        model.pos_table.zero_()
        for emb in model.layout_emb:
            emb.weight.zero_()
    n = int(batch.mask.sum())
    perm = torch.from_numpy(np.random.default_rng(0).permutation(n))
    permuted = TokenBatch(batch.token_ids[:, perm], batch.boxes[:, perm], batch.mask[:, perm],
                          batch.crops[:, perm], batch.tags[:, perm])
    a = forward(model, outer, batch, SL).probs[0, :n]
    b = forward(model, outer, permuted, SL).probs[0]
    assert torch.allclose(a[perm], b, atol=1e-6)


def test_padding_never_leaks():
    model, outer, batch, docs = tiny_setup(n_docs=2)
    lengths = batch.lengths
    assert lengths[0] != lengths[1]
    alone = [forward(model, outer, collate([e]), SL).probs[0] for e in docs]
    joint = forward(model, outer, batch, SL).probs
    for i, n in enumerate(lengths):
        assert torch.allclose(joint[i, :n], alone[i][:n], atol=1e-6)


def test_nan_poisoned_padding_does_not_change_loss():
    model, outer, batch, _ = tiny_setup(n_docs=2)
    clean = cross_entropy(forward(model, outer, batch, SL), batch.tags, batch.mask)
    crops = batch.crops.clone()
    crops[~batch.mask] = float("nan")
    poisoned = cross_entropy(forward(model, outer, batch.with_crops(crops), SL), batch.tags, batch.mask)
    assert torch.equal(clean, poisoned)


def test_deployment_invariance_to_outer_and_paint():
    model, outer, batch, _ = tiny_setup()
    base = forward(model, outer, batch, SL).probs
    with torch.no_grad():
        for p in outer.parameters():
            p.copy_(torch.randn_like(p) * 10)
    assert torch.equal(base, forward(model, outer, batch, SL).probs)
    assert torch.equal(base, forward(model, None, batch, SL).probs)


def test_ve_flow_needs_outer_and_differs():
    model, outer, batch, _ = tiny_setup()
    with pytest.raises(ValidationError):
        forward(model, None, batch, VE)
    assert not torch.equal(forward(model, outer, batch, VE).probs, forward(model, outer, batch, SL).probs)


def test_shape_mismatch_raises():
    model, outer, batch, _ = tiny_setup()
    with pytest.raises(ValidationError):
        forward(model, outer, batch.with_crops(batch.crops[..., :4]), SL)


@pytest.mark.parametrize("fusion, ve_visual, position", [("early", "replace", "sinusoidal"),
                                                         ("late", "augment", "learned")])
def test_gradient_check_double(fusion, ve_visual, position):
    errs = fd_gradient_errors(dtype="float64", step=1e-5, n_probes=60, seed=1, tol=1e-6,
                              fusion=fusion, ve_visual=ve_visual, position_embedding=position)
    assert len(errs["relative"]) >= 50
    assert max(errs["relative"]) <= 1e-6
    assert max(errs["absolute_ratio"], default=0.0) <= 1.0


def test_quadratic_probe_gradient_is_theta():
    model, _, _, _ = tiny_setup()
    loss = sum((p ** 2).sum() for p in model.parameters()) / 2
    loss.backward()
    for p in model.parameters():
        assert torch.allclose(p.grad, p.detach())


def test_unused_parameter_has_zero_gradient():
    model, outer, batch, _ = tiny_setup()
    cross_entropy(forward(model, outer, batch, SL), batch.tags, batch.mask).backward()
    assert all(p.grad is None or float(p.grad.abs().sum()) == 0 for p in outer.parameters())


def test_vocabulary_unknown_words():
    vocab = Vocabulary(["a", "b"])
    assert vocab.encode(["a", "zzz", "b"]).tolist() == [2, 1, 3]
    assert len(vocab) == 4


def test_encode_document_shapes():
    spec = GenSpec(n_train=1, n_test=0)
    doc = generate_document(spec, 0)
    enc = encode_document(doc, Vocabulary.from_documents([doc]), spec.label_set, (8, 8))
    assert enc.crops.shape == (len(doc.segments), 3, 8, 8)
    assert len(enc) == len(doc.tokens) == enc.boxes.shape[0]
