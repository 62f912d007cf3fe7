"""Item-wise noise discriminator, its weak-supervision loss, and Gumbel hardening."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ContractError
from .nn import Linear

log = logging.getLogger(__name__)

MODES = ("sample", "argmax", "soft")


@dataclass
class GateOutput:
    soft: torch.Tensor  # (..., 2) probabilities; index 0 = keep / reliable
    hard: torch.Tensor  # (..., 2) one-hot in forward; carries straight-through gradients
    tau: float

    @property
    def keep(self) -> torch.Tensor:
        """Boolean keep decision (hard index 0)."""
        return self.hard[..., 0].detach() > 0.5


class NoiseDiscriminator(nn.Module):
    """beta_i = Softmax(ReLU(g_i W1 + b1) W2); one instance serves both sequence paths."""

    def __init__(self, dim, std=0.02):
        super().__init__()
        self.hidden = Linear(dim, dim, bias=True, std=std)
        self.out = Linear(dim, 2, bias=False, std=std)

    def forward(self, hidden):
        return torch.softmax(self.out(torch.relu(self.hidden(hidden))), dim=-1)


def discriminate(hidden, w1, b1, w2):
    """Functional form of :class:`NoiseDiscriminator`."""
    d = hidden.shape[-1]
    if w1.shape != (d, d) or b1.shape != (d,) or w2.shape != (d, 2):
        raise ContractError(
            f"discriminator shapes: W1 {tuple(w1.shape)}, b1 {tuple(b1.shape)}, W2 {tuple(w2.shape)} for d={d}"
        )
    return torch.softmax(torch.relu(hidden @ w1 + b1) @ w2, dim=-1)


def auxiliary_mse_loss(p_genuine, labels, mask=None):
    """Mean over real positions of (beta^0 - z)^2, z = 1 genuine / 0 injected.

    Batched inputs (B, L) give the per-sequence mean averaged over sequences
    that have at least one real position.
    """
    labels = labels.to(p_genuine.dtype)
    if mask is None:
        mask = torch.ones_like(p_genuine, dtype=torch.bool)
    m = mask.to(p_genuine.dtype)
    sq = (p_genuine - labels) ** 2 * m
    count = m.sum(-1)
    if p_genuine.dim() == 1:
        if count == 0:
            log.warning("auxiliary MSE over an empty sequence; contributing 0")
            return p_genuine.sum() * 0.0
        return sq.sum() / count
    per_seq = sq.sum(-1) / count.clamp_min(1.0)
    valid = (count > 0).to(p_genuine.dtype)
    if valid.sum() == 0:
        log.warning("auxiliary MSE over an empty batch; contributing 0")
        return per_seq.sum() * 0.0
    return (per_seq * valid).sum() / valid.sum()


def sample_gumbel(shape, generator=None, dtype=torch.float64):
    # torch.rand draws from [0, 1); only the lower end needs guarding
    u = torch.rand(shape, generator=generator, dtype=dtype).clamp_min(torch.finfo(dtype).tiny)
    return -torch.log(-torch.log(u))


def gumbel_harden(soft, tau, mode="sample", generator=None, gumbel=None) -> GateOutput:
    """Harden probability rows to one-hot, straight-through.

    ``sample``: y = softmax((log p + g) / tau) with Gumbel noise g, forward
    value one_hot(argmax y), gradient of y.  ``argmax``: one_hot(argmax p),
    no noise.  ``soft``: y = softmax(log p / tau) is returned unhardened,
    which keeps the whole model smooth for finite-difference checks.
    """
    if not tau > 0:
        raise ContractError(f"Gumbel temperature must be positive, got {tau}")
    if mode not in MODES:
        raise ContractError(f"unknown gate mode {mode!r}")
    logp = torch.log(soft.clamp_min(torch.finfo(soft.dtype).tiny))
    if mode == "sample":
        g = gumbel if gumbel is not None else sample_gumbel(soft.shape, generator, soft.dtype)
        y = torch.softmax((logp + g) / tau, dim=-1)
    else:
        y = torch.softmax(logp / tau, dim=-1)
    if mode == "soft":
        return GateOutput(soft, y, tau)
    index = y.argmax(-1) if mode == "sample" else soft.argmax(-1)
    hard = torch.nn.functional.one_hot(index, soft.shape[-1]).to(soft.dtype)
    return GateOutput(soft, (hard - y).detach() + y, tau)


@dataclass(frozen=True)
class TemperatureSchedule:
    tau0: float = 0.5
    decay: float = 0.9
    interval: int = 40
    tau_min: float = 0.1

    def __post_init__(self):
        if self.tau0 <= 0 or self.tau_min <= 0 or not 0 < self.decay <= 1 or self.interval < 1:
            raise ValueError("invalid temperature schedule")


def temperature_step(schedule: TemperatureSchedule, batch_index: int) -> float:
    if batch_index < 0:
        raise ValueError("batch_index must be >= 0")
    return max(schedule.tau_min, schedule.tau0 * schedule.decay ** (batch_index // schedule.interval))
