"""Full model: two-path encoding, dual-granularity denoising and the joint objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
from torch import nn

from .config import Config
from .encoder import TargetAwareEncoder, default_kernel_bank
from .errors import ConfigError
from .gates import GateOutput, NoiseDiscriminator, auxiliary_mse_loss, gumbel_harden
from .interest import InterestBank, denoised_interest, inscl_loss, interest_distribution
from .item_denoise import encode_denoised_batch, item_weights, itscl_loss
from .nn import GRUEncoder, TransformerEncoder, embedding_lookup, pool_last

PROB_FLOOR = 1e-12


@dataclass
class Batch:
    items: torch.Tensor  # (B, L) left-padded item indices
    mask: torch.Tensor  # (B, L) bool
    relevance_target: torch.Tensor  # (B,) item used for target-aware scoring
    target: torch.Tensor | None = None  # (B,) next item, for the recommendation loss
    aug_items: torch.Tensor | None = None
    aug_mask: torch.Tensor | None = None
    aug_labels: torch.Tensor | None = None  # 1 genuine / 0 injected


@dataclass
class LossBundle:
    rec: torch.Tensor
    itscl: torch.Tensor
    inscl: torch.Tensor
    mse: torch.Tensor
    l2: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float
    lambda3: float
    rho: float

    def scalars(self) -> dict[str, float]:
        return {f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self)}


@dataclass
class ForwardOutput:
    scores: torch.Tensor  # (B, V) with the pad column at -inf
    e_se: torch.Tensor
    e_it: torch.Tensor
    e_in: torch.Tensor
    item_gate: GateOutput | None
    interest_gate: GateOutput | None
    delta: torch.Tensor | None
    gain: torch.Tensor
    mask: torch.Tensor
    aug_gate_probs: torch.Tensor | None = None  # (B, L, 2) discriminator output on the augmented path
    losses: LossBundle | None = None


# ---------------------------------------------------------------------------
# functional pieces of the prediction head


def sequence_user_rep(G, mask, base: nn.Module):
    """e_se = F(G), pooled at the last real position."""
    if isinstance(base, GRUEncoder):
        return base(G, mask)
    if isinstance(base, TransformerEncoder):
        return pool_last(base(G, mask), mask)
    raise ConfigError(f"unsupported base encoder {type(base).__name__}")


def fuse_user_rep(e_in, e_it, e_se):
    return e_in + e_it + e_se


def predict_scores(user_rep, item_table):
    """Dot-product logits over the catalogue; the pad column is excluded (-inf)."""
    logits = user_rep @ item_table.T
    pad = torch.zeros(logits.shape[-1], dtype=torch.bool)
    pad[0] = True
    return logits.masked_fill(pad, float("-inf"))


def predict_probs(user_rep, item_table):
    """y_hat: softmax of :func:`predict_scores`; the pad item gets probability 0."""
    return torch.softmax(predict_scores(user_rep, item_table), dim=-1)


def rec_loss(logits, target):
    """Mean categorical cross-entropy -log y_hat[target], y_hat clamped at 1e-12."""
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, target.view(-1, 1)).squeeze(-1)
    return -picked.clamp_min(math.log(PROB_FLOOR)).mean()


def l2_penalty(params):
    return sum((p * p).sum() for p in params)


def total_loss(rec, itscl, inscl, mse, l2, lambda1, lambda2, lambda3, rho) -> LossBundle:
    if min(lambda1, lambda2, lambda3, rho) < 0:
        raise ConfigError("loss weights must be non-negative")
    total = rec + lambda1 * itscl + lambda2 * inscl + lambda3 * mse + rho * l2
    return LossBundle(rec, itscl, inscl, mse, l2, total, lambda1, lambda2, lambda3, rho)


# ---------------------------------------------------------------------------


class MGSDModel(nn.Module):
    def __init__(self, n_items: int, cfg: Config):
        super().__init__()
        cfg = cfg.effective()
        self.cfg = cfg
        m = cfg.model
        flags = set(cfg.train.ablate)
        self.use_itsd = "no_itsd" not in flags
        self.use_insd = "no_insd" not in flags
        self.use_and = "no_and" not in flags
        k = cfg.kernels
        bank = default_kernel_bank(k.count, k.exact_sigma, k.soft_sigma, k.spacing)

        emb = torch.randn(n_items, m.dim) * m.init_std
        emb[0] = 0.0
        self.item_emb = nn.Parameter(emb)
        self.encoder = TargetAwareEncoder(
            self.item_emb, cfg.data.max_len, m.dim, m.layers, m.heads, bank,
            m.ffn_mult, m.init_std, use_kernels="no_mgp" not in flags,
        )
        if m.base_encoder == "bert":
            self.base = TransformerEncoder(m.dim, m.base_layers, m.heads, m.ffn_mult, m.init_std)
        elif m.base_encoder == "gru":
            self.base = GRUEncoder(m.dim, m.init_std)
        else:
            raise ConfigError(f"unknown base encoder {m.base_encoder!r}")
        self.discriminator = NoiseDiscriminator(m.dim, m.init_std)
        if m.share_denoise_transformer:
            self.denoise = self.encoder.transformer
        else:
            self.denoise = TransformerEncoder(m.dim, m.denoise_layers, m.heads, m.ffn_mult, m.init_std)
        self.interests = InterestBank(cfg.interests.count, m.dim, m.init_std)

    @property
    def n_items(self):
        return self.item_emb.shape[0]

    def forward(self, batch: Batch, tau: float = 1.0, mode: str = "sample",
                generator: torch.Generator | None = None, compute_loss: bool = True) -> ForwardOutput:
        cfg = self.cfg
        enc = self.encoder(batch.items, batch.mask, batch.relevance_target)
        G, mask = enc.hidden, enc.mask
        B, _, d = G.shape
        e_se = sequence_user_rep(G, mask, self.base)
        zeros = G.new_zeros(B, d)
        zero = G.new_zeros(())

        item_gate = None
        e_it, itscl = zeros, zero
        if self.use_itsd:
            probs = self.discriminator(G)
            item_gate = gumbel_harden(probs, tau, mode, generator)
            keep_value = item_gate.hard[..., 0] * mask.to(G.dtype)
            keep_mask = mask if mode == "soft" else (item_gate.keep & mask)
            e_it = encode_denoised_batch(G, keep_value, keep_mask, self.denoise)
            if compute_loss:
                keep = item_gate.keep & mask
                omega = item_weights(probs[..., 0], keep)
                itscl = itscl_loss(e_se, G, omega, keep, mask, cfg.cl.temperature)

        interest_gate = delta = None
        e_in, inscl = zeros, zero
        if self.use_insd:
            alpha = self.interests.affinity(G)
            delta = interest_distribution(alpha, mask)
            h_t = embedding_lookup(self.item_emb, batch.relevance_target)
            interest_gate = gumbel_harden(self.interests.gate(h_t), tau, mode, generator)
            e_in = denoised_interest(self.interests.Q, delta, interest_gate.hard[..., 0])
            if compute_loss:
                inscl = inscl_loss(e_se, self.interests.Q, delta, interest_gate.keep, cfg.cl.temperature)

        user = fuse_user_rep(e_in, e_it, e_se)
        scores = predict_scores(user, self.item_emb)

        aug_probs = None
        mse = zero
        if self.use_and and batch.aug_items is not None:
            aug = self.encoder(batch.aug_items, batch.aug_mask, batch.relevance_target)
            aug_probs = self.discriminator(aug.hidden)
            if compute_loss:
                mse = auxiliary_mse_loss(aug_probs[..., 0], batch.aug_labels, aug.mask)

        out = ForwardOutput(scores, e_se, e_it, e_in, item_gate, interest_gate, delta,
                            enc.gain, mask, aug_probs)
        if compute_loss and batch.target is not None:
            rec = rec_loss(scores, batch.target)
            out.losses = total_loss(
                rec, itscl, inscl, mse, l2_penalty(self.parameters()),
                cfg.itscl.weight, cfg.inscl.weight, cfg.mse.weight, cfg.l2.weight,
            )
        return out

    def discriminate_augmented(self, items, mask, relevance_target):
        """beta^0 on (augmented) sequences, for noise-detection evaluation."""
        enc = self.encoder(items, mask, relevance_target)
        return self.discriminator(enc.hidden)[..., 0]
