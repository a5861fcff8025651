"""Supervision and consistency losses over per-token tag distributions.

Every reduction is a mean over real (unmasked) tokens.  Padded rows are
dropped by boolean indexing before any arithmetic, so whatever they hold
(NaN included) never reaches the result.
"""

from __future__ import annotations

import math

import torch

from .backbone import TokenDistributions
from .core import ValidationError

EPS = 1e-9
LOG_EPS = math.log(EPS)
DIVERGENCES = ("KL", "JS", "KL_FWD", "KL_REV")


def _rows(x, mask):
    if mask is None:
        return x.reshape(-1, x.shape[-1])
    return x[mask]


def _log_floor(dist, mask):
    """log(max(p, EPS)) per row, taken from the logits when available."""
    if isinstance(dist, TokenDistributions):
        return torch.clamp(_rows(dist.log_probs, mask), min=LOG_EPS)
    return torch.log(torch.clamp(_rows(dist, mask), min=EPS))


def _probs(dist, mask):
    if isinstance(dist, TokenDistributions):
        return _rows(dist.probs, mask)
    return _rows(dist, mask)


def _mask_of(dist, mask):
    if mask is None and isinstance(dist, TokenDistributions):
        return dist.mask
    return mask


def cross_entropy(pred, gold: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    mask = _mask_of(pred, mask)
    gold_rows = gold[mask] if mask is not None else gold.reshape(-1)
    if gold_rows.numel() == 0:
        raise ValidationError("cross entropy over zero real tokens")
    logp = _log_floor(pred, mask)
    return -logp.gather(1, gold_rows[:, None]).mean()


def _kl_rows(p, logp, logq):
    return (p * (logp - logq)).sum(-1)


def kl_divergence(P, Q, mask: torch.Tensor | None = None, direction: str = "both") -> torch.Tensor:
    """Symmetrised KL, 0.5 * [KL(p||q) + KL(q||p)], with an EPS floor inside the logs.

    ``direction`` "fwd" or "rev" returns one of the two terms alone.
    """
    mask = _mask_of(P, mask)
    p, q = _probs(P, mask), _probs(Q, mask)
    logp, logq = _log_floor(P, mask), _log_floor(Q, mask)
    if direction == "fwd":
        return _kl_rows(p, logp, logq).mean()
    if direction == "rev":
        return _kl_rows(q, logq, logp).mean()
    return (0.5 * (_kl_rows(p, logp, logq) + _kl_rows(q, logq, logp))).mean()


def js_divergence(P, Q, mask: torch.Tensor | None = None) -> torch.Tensor:
    mask = _mask_of(P, mask)
    p, q = _probs(P, mask), _probs(Q, mask)
    m = 0.5 * (p + q)
    # all three logs from probabilities so that P == Q gives exactly zero
    logm = torch.log(torch.clamp(m, min=EPS))
    logp, logq = torch.log(torch.clamp(p, min=EPS)), torch.log(torch.clamp(q, min=EPS))
    return (0.5 * _kl_rows(p, logp, logm) + 0.5 * _kl_rows(q, logq, logm)).mean()


def consistency_loss(P, Q, kind: str = "KL", mask: torch.Tensor | None = None) -> torch.Tensor:
    if kind == "KL":
        return kl_divergence(P, Q, mask)
    if kind == "JS":
        return js_divergence(P, Q, mask)
    if kind == "KL_FWD":
        return kl_divergence(P, Q, mask, "fwd")
    if kind == "KL_REV":
        return kl_divergence(P, Q, mask, "rev")
    raise ValidationError(f"unknown divergence {kind!r}; expected one of {DIVERGENCES}")


def detached(dist: TokenDistributions) -> TokenDistributions:
    return TokenDistributions(dist.probs.detach(), dist.logits.detach(), dist.mask,
                              dist.hidden.detach(), dist.visual.detach())
