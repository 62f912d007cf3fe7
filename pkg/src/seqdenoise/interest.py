"""Interest-granularity denoising over a learnable bank of interest prototypes."""

from __future__ import annotations

import logging

import torch
from torch import nn

from .errors import ContractError
from .item_denoise import weighted_contrastive
from .nn import Linear

log = logging.getLogger(__name__)


def interest_affinity(G, Q, w3, b2):
    """alpha_i = Softmax(Q ReLU(g_i W3 + b2)) over the m interests. G: (..., n, d) -> (..., n, m)."""
    d = G.shape[-1]
    if Q.shape[-1] != d or w3.shape != (d, d) or b2.shape != (d,):
        raise ContractError(f"interest shapes: Q {tuple(Q.shape)}, W3 {tuple(w3.shape)}, b2 {tuple(b2.shape)}")
    return torch.softmax(torch.relu(G @ w3 + b2) @ Q.T, dim=-1)


def interest_distribution(alpha, mask=None):
    """Mean of the affinity rows over real positions."""
    if mask is None:
        return alpha.mean(-2)
    m = mask.to(alpha.dtype).unsqueeze(-1)
    return (alpha * m).sum(-2) / m.sum(-2).clamp_min(1.0)


def target_interest_gate(Q, target_emb, w4, w5):
    """gamma_l = Softmax([q^ || h || q^ - h || q^ * h] W5) with q^ = q_l W4.

    Q: (m, d); target_emb: (..., d) -> (..., m, 2).
    """
    d = Q.shape[-1]
    if w4.shape != (d, d) or w5.shape != (4 * d, 2):
        raise ContractError(f"gate shapes: W4 {tuple(w4.shape)}, W5 {tuple(w5.shape)} for d={d}")
    q_hat = Q @ w4
    h = target_emb.unsqueeze(-2).expand(*target_emb.shape[:-1], Q.shape[0], d)
    q_hat = q_hat.expand_as(h)
    feats = torch.cat([q_hat, h, q_hat - h, q_hat * h], dim=-1)
    return torch.softmax(feats @ w5, dim=-1)


def denoised_interest(Q, delta, keep_value):
    """e_in = sum_l delta_l * gate_l * q_l. delta, keep_value: (..., m)."""
    return (delta * keep_value) @ Q


def inscl_loss(e_se, Q, delta, keep_gate, temperature):
    """Interest-granularity weighted contrast; e_se (d,) or (B, d)."""
    batched = e_se.dim() == 2
    if not batched:
        e_se, delta, keep_gate = e_se.unsqueeze(0), delta.unsqueeze(0), keep_gate.unsqueeze(0)
        if not bool(keep_gate.bool().any()):
            log.warning("no reliable interests; interest contrastive loss contributes 0")
    samples = Q.unsqueeze(0).expand(e_se.shape[0], *Q.shape)
    mask = torch.ones_like(delta, dtype=torch.bool)
    return weighted_contrastive(e_se, samples, delta, keep_gate, mask, temperature)


class InterestBank(nn.Module):
    def __init__(self, m, dim, std=0.02):
        super().__init__()
        if m < 1:
            raise ContractError("interest count must be >= 1")
        self.Q = nn.Parameter(torch.randn(m, dim) * std)
        self.proj = Linear(dim, dim, bias=True, std=std)  # W3, b2
        self.w4 = nn.Parameter(torch.randn(dim, dim) * std)
        self.w5 = nn.Parameter(torch.randn(4 * dim, 2) * std)

    @property
    def m(self):
        return self.Q.shape[0]

    def affinity(self, G):
        return interest_affinity(G, self.Q, self.proj.weight, self.proj.bias)

    def gate(self, target_emb):
        return target_interest_gate(self.Q, target_emb, self.w4, self.w5)
