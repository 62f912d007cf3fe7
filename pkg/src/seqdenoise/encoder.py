"""Target-aware sequence encoding with the multiple Gaussian-kernel perceptron."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .nn import TransformerEncoder, cosine_similarity, embedding_lookup

PAD_RELEVANCE = -1.0


@dataclass(frozen=True)
class KernelBank:
    means: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if not self.means or len(self.means) != len(self.sigmas):
            raise ValueError("kernel bank needs k >= 1 matching means and sigmas")
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("kernel widths must be positive")

    @property
    def k(self):
        return len(self.means)

    def tensors(self, dtype=torch.float64):
        return (torch.tensor(self.means, dtype=dtype), torch.tensor(self.sigmas, dtype=dtype))


def default_kernel_bank(count=10, exact_sigma=1e-3, soft_sigma=0.1, spacing="endpoint") -> KernelBank:
    """One exact-match kernel at 1.0 plus ``count - 1`` soft kernels over [-1, 1].

    ``endpoint`` spaces the soft means evenly with both ends included
    (-1, -0.75, ..., 1 for the default 9); ``bins`` uses the centres of
    ``count - 1`` equal-width bins instead.
    """
    soft = count - 1
    if soft < 0:
        raise ValueError("count must be >= 1")
    if spacing == "endpoint":
        means = [-1.0 + 2.0 * i / (soft - 1) for i in range(soft)] if soft > 1 else [0.0] * soft
    elif spacing == "bins":
        width = 2.0 / soft if soft else 0.0
        means = [-1.0 + width * (i + 0.5) for i in range(soft)]
    else:
        raise ValueError(f"unknown kernel spacing {spacing!r}")
    return KernelBank(tuple([1.0] + means), tuple([exact_sigma] + [soft_sigma] * soft))


def target_relevance(seq_hidden, target_emb, mask=None):
    """Cosine between each item row and the target; padding gets -1.

    seq_hidden: (..., n, d); target_emb: (..., d); mask: (..., n).
    """
    rel = cosine_similarity(seq_hidden, target_emb.unsqueeze(-2))
    if mask is not None:
        rel = torch.where(mask.bool(), rel, torch.full_like(rel, PAD_RELEVANCE))
    return rel


def kernel_activations(relevance, bank: KernelBank):
    """exp(-(r - mu_j)^2 / (2 sigma_j^2)) for every kernel: (..., n) -> (..., n, k)."""
    mu, sigma = bank.tensors(relevance.dtype)
    diff = relevance.unsqueeze(-1) - mu
    return torch.exp(-(diff * diff) / (2.0 * sigma * sigma))


def kernel_reweight(activations, item_hidden):
    """Scale each item row by the summed kernel response (a per-item scalar gain)."""
    return activations.sum(-1, keepdim=True) * item_hidden


@dataclass
class EncodedSequence:
    hidden: torch.Tensor  # (B, L, d)
    mask: torch.Tensor  # (B, L) bool
    relevance: torch.Tensor  # (B, L)
    kernel_activations: torch.Tensor  # (B, L, k)
    gain: torch.Tensor  # (B, L)


class TargetAwareEncoder(nn.Module):
    """Embedding -> target relevance -> kernel gain -> + positions -> transformer.

    One instance encodes both the original and the augmented sequence, so
    every parameter is shared between the two paths.
    """

    def __init__(self, item_emb: nn.Parameter, max_len, dim, layers, heads, bank: KernelBank,
                 ffn_mult=4, std=0.02, use_kernels=True):
        super().__init__()
        self.item_emb = item_emb
        self.pos_emb = nn.Parameter(torch.randn(max_len, dim) * std)
        self.transformer = TransformerEncoder(dim, layers, heads, ffn_mult, std)
        self.bank = bank
        self.use_kernels = use_kernels

    def forward(self, items, mask, target) -> EncodedSequence:
        """items, mask: (B, L); target: (B,) item index used for relevance."""
        mask = mask.bool()
        H = embedding_lookup(self.item_emb, items, mask)
        h_t = embedding_lookup(self.item_emb, target)
        rel = target_relevance(H, h_t, mask)
        act = kernel_activations(rel, self.bank)
        if self.use_kernels:
            gain = act.sum(-1)
            H_hat = kernel_reweight(act, H)
        else:
            gain = torch.ones_like(rel)
            H_hat = H
        L = items.shape[1]
        x = H_hat + self.pos_emb[-L:] * mask.unsqueeze(-1).to(H.dtype)
        G = self.transformer(x, mask)
        return EncodedSequence(G, mask, rel, act, gain * mask.to(gain.dtype))
