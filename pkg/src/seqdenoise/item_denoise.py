"""Item-granularity denoising: gate filtering, re-encoding, weighted contrast."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .nn import TransformerEncoder, cosine_similarity, pool_last

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-12


@dataclass
class DenoisedSequence:
    kept_hidden: torch.Tensor  # (t', d)
    kept_positions: list[int]
    e_it: torch.Tensor | None = None


def reorganize(G, keep_gate, mask=None) -> DenoisedSequence:
    """Pack the rows of G whose gate is 1, preserving order. G: (n, d)."""
    keep = keep_gate.bool()
    if mask is not None:
        keep = keep & mask.bool()
    positions = torch.nonzero(keep, as_tuple=False).flatten().tolist()
    return DenoisedSequence(G[positions], positions)


def encode_denoised(C, transformer: TransformerEncoder):
    """Transformer over the packed survivors, pooled at the last row; zeros if empty."""
    if C.shape[0] == 0:
        return C.new_zeros(C.shape[-1])
    mask = torch.ones(1, C.shape[0], dtype=torch.bool)
    out = transformer(C.unsqueeze(0), mask)
    return out[0, -1]


def encode_denoised_batch(G, keep_value, keep_mask, transformer: TransformerEncoder):
    """Batched equivalent of reorganize + encode_denoised.

    Dropped rows are masked out of attention instead of being physically
    removed; without positional terms inside this transformer the two are
    identical.  ``keep_value`` multiplies the surviving rows so straight-through
    gradients reach the discriminator.
    """
    C = G * keep_value.unsqueeze(-1)
    out = transformer(C, keep_mask)
    return pool_last(out, keep_mask)


def item_weights(p_genuine, keep_gate):
    """omega_i = beta^0 for kept items, 1 - beta^0 for dropped ones."""
    return torch.where(keep_gate.bool(), p_genuine, 1.0 - p_genuine)


def weighted_contrastive(anchor, samples, weights, positive, mask, temperature):
    """-(1/|P|) sum_{i in P} log( w_i e^{s_i/T} / sum_{j in all} w_j e^{s_j/T} ).

    anchor: (B, d); samples: (B, N, d); weights, positive, mask: (B, N).
    ``s`` is cosine similarity.  Rows with no positive contribute 0; the
    result is the mean over rows.
    """
    mask = mask.bool()
    positive = positive.bool() & mask
    sims = cosine_similarity(anchor.unsqueeze(1), samples) / temperature
    logits = torch.log(weights.clamp_min(WEIGHT_FLOOR)) + sims
    logits = logits.masked_fill(~mask, float("-inf"))
    lse = torch.logsumexp(logits, dim=-1, keepdim=True)
    # guard fully-masked rows against -inf - -inf
    lse = torch.where(torch.isfinite(lse), lse, torch.zeros_like(lse))
    logprob = torch.where(positive, logits - lse, torch.zeros_like(logits))
    n_pos = positive.sum(-1)
    per_row = -logprob.sum(-1) / n_pos.clamp_min(1).to(logits.dtype)
    if bool((n_pos == 0).any()):
        log.debug("%d row(s) without positives contribute 0", int((n_pos == 0).sum()))
    return per_row.mean()


def itscl_loss(e_se, G, omega, keep_gate, mask, temperature):
    """Item-granularity weighted contrast; accepts unbatched (n, d) or batched input."""
    if G.dim() == 2:
        if not bool((keep_gate.bool() & mask.bool()).any()):
            log.warning("no kept items; item contrastive loss contributes 0")
        return weighted_contrastive(
            e_se.unsqueeze(0), G.unsqueeze(0), omega.unsqueeze(0),
            keep_gate.unsqueeze(0), mask.unsqueeze(0), temperature,
        )
    return weighted_contrastive(e_se, G, omega, keep_gate, mask, temperature)
