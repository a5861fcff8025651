"""Shared fixtures and oracles for the test suite."""

import numpy as np
import torch

from vancl.backbone import SL, ModelConfig, Vocabulary, collate, encode_document, forward, init_params
from vancl.losses import cross_entropy
from vancl.synthgen import GenSpec, generate_document


def tiny_docs(n_docs=2, seed=0, segments=(3, 5)):
    docs = []
    for i in range(n_docs):
        spec = GenSpec(seed=seed, segments_per_doc=segments[i % len(segments)])
        docs.append(generate_document(spec, i))
    return docs


def tiny_setup(n_docs=2, dtype="float32", seed=3, **model_kw):
    docs = tiny_docs(n_docs)
    labels = GenSpec().label_set
    vocab = Vocabulary.from_documents(docs)
    kw = {"d_model": 8, "n_layers": 1, "n_heads": 1, "ffn_dim": 16, "cnn_channels": 4,
          "dropout_p": 0.0, **model_kw}
    cfg = ModelConfig(vocab_size=len(vocab), n_tags=len(labels.tags), dtype=dtype, **kw)
    model, outer = init_params(cfg, seed)
    enc = [encode_document(d, vocab, labels, cfg.roi_patch) for d in docs]
    return model, outer, collate(enc, cfg.torch_dtype), enc


def fd_gradient_errors(dtype, step, n_probes, seed=0, oracle_dtype=None, tol=1e-6,
                       max_attempts=2000, **model_kw):
    """Compare autograd against central differences on randomly probed scalar parameters.

    The analytic gradient is taken at ``dtype``; the finite-difference oracle runs
    at ``oracle_dtype`` (default: the same) on a copy holding identical weights.

    Each probe lands in one of two buckets.  If the oracle's rounding bound
    ``delta = 4 * eps * |L| / (2 * step)`` is at most ``tol / 10`` of the
    gradient, the probe is scored by relative error.  Otherwise the oracle
    cannot resolve ``tol`` and the probe is scored by absolute error, which
    should stay within ``10 * (delta + eps_analytic)``.
    """
    model, _, _, enc = tiny_setup(dtype=dtype, **model_kw)
    batch = collate(enc, model.config.torch_dtype)
    model.zero_grad()
    cross_entropy(forward(model, None, batch, SL), batch.tags, batch.mask).backward()

    oracle_dtype = oracle_dtype or dtype
    ocfg = ModelConfig.from_json(dict(model.config.to_json(), dtype=oracle_dtype))
    oracle, _ = init_params(ocfg, 0)
    oracle.load_state_dict({k: v.to(ocfg.torch_dtype) for k, v in model.state_dict().items()})
    obatch = collate(enc, ocfg.torch_dtype)
    oparams = dict(oracle.named_parameters())
    eps_o = torch.finfo(ocfg.torch_dtype).eps
    eps_a = torch.finfo(model.config.torch_dtype).eps

    def loss():
        with torch.no_grad():
            return float(cross_entropy(forward(oracle, None, obatch, SL), obatch.tags, obatch.mask))

    rng = np.random.default_rng(seed)
    named = list(model.named_parameters())
    sizes = np.array([p.numel() for _, p in named], dtype=float)
    rel, absolute, probes = [], [], []
    for _ in range(max_attempts):
        if len(rel) >= n_probes:
            break
        k = int(rng.choice(len(named), p=sizes / sizes.sum()))
        name, p = named[k]
        i = int(rng.integers(p.numel()))
        analytic = float(p.grad.reshape(-1)[i])
        flat = oparams[name].data.view(-1)
        old = flat[i].item()
        flat[i] = old + step
        up = loss()
        flat[i] = old - step
        down = loss()
        flat[i] = old
        numeric = (up - down) / (2 * step)
        delta = 4 * eps_o * max(abs(up), abs(down)) / (2 * step)
        probes.append((name, i, analytic, numeric, delta))
        if delta <= 0.1 * tol * abs(numeric):
            rel.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
        else:
            absolute.append(abs(analytic - numeric) / (10 * (delta + eps_a)))
    return {"relative": rel, "absolute_ratio": absolute, "probes": probes}
