"""Differentiable building blocks on top of torch autograd.

The functional helpers add the contract checks the model relies on (index
ranges, shape agreement, zero-norm cosine); :func:`gradient_check` is an
independent central-difference checker for any of them.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Callable, Mapping, Sequence

import torch
from torch import nn

from .errors import ConfigError, ContractError

COS_EPS = 1e-12
LN_EPS = 1e-12


def embedding_lookup(table: torch.Tensor, indices: torch.Tensor, mask: torch.Tensor | None = None):
    if indices.numel() and (int(indices.min()) < 0 or int(indices.max()) >= table.shape[0]):
        raise ContractError(
            f"embedding index out of range [0, {table.shape[0]}): "
            f"min={int(indices.min())} max={int(indices.max())}"
        )
    out = table[indices]
    if mask is not None:
        out = out * mask.unsqueeze(-1).to(out.dtype)
    return out


def affine(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None):
    if x.shape[-1] != weight.shape[0]:
        raise ContractError(f"affine: x has inner dim {x.shape[-1]}, W has {tuple(weight.shape)}")
    if bias is not None and bias.shape[-1] != weight.shape[-1]:
        raise ContractError(f"affine: bias {tuple(bias.shape)} does not match W {tuple(weight.shape)}")
    out = x @ weight
    return out + bias if bias is not None else out


def softmax(x: torch.Tensor, axis: int = -1):
    return torch.softmax(x, dim=axis)


def relu(x: torch.Tensor):
    return torch.relu(x)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LN_EPS):
    mean = x.mean(-1, keepdim=True)
    var = ((x - mean) ** 2).mean(-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, eps: float = COS_EPS):
    """Cosine along the last axis, broadcasting; 0 when either norm is below ``eps``."""
    sa = (a * a).sum(-1)
    sb = (b * b).sum(-1)
    # clamp keeps the backward pass finite at zero vectors
    na = torch.sqrt(sa.clamp_min(eps * eps))
    nb = torch.sqrt(sb.clamp_min(eps * eps))
    cos = (a * b).sum(-1) / (na * nb)
    degenerate = (sa < eps * eps) | (sb < eps * eps)
    return torch.where(degenerate, torch.zeros_like(cos), cos)


def pool_last(x: torch.Tensor, mask: torch.Tensor):
    """Row at the last real position of each sequence; zeros when nothing is real.

    x: (B, L, d), mask: (B, L) bool.
    """
    L = mask.shape[-1]
    pos = torch.arange(L, device=mask.device).expand_as(mask)
    last = torch.where(mask, pos, torch.full_like(pos, -1)).max(-1).values
    picked = x.gather(1, last.clamp_min(0)[:, None, None].expand(-1, 1, x.shape[-1])).squeeze(1)
    return picked * (last >= 0).unsqueeze(-1).to(x.dtype)


# ---------------------------------------------------------------------------
# modules


class LayerNorm(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)


class Linear(nn.Module):
    """``x @ W + b`` with W stored input-major (shape ``(d_in, d_out)``)."""

    def __init__(self, d_in, d_out, bias=True, std=0.02):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(d_in, d_out) * std)
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x):
        return affine(x, self.weight, self.bias)


class EncoderBlock(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)) with a ReLU FFN."""

    def __init__(self, dim, heads, ffn_mult=4, std=0.02):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim={dim} not divisible by heads={heads}")
        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.q = Linear(dim, dim, std=std)
        self.k = Linear(dim, dim, std=std)
        self.v = Linear(dim, dim, std=std)
        self.o = Linear(dim, dim, std=std)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(dim, dim * ffn_mult, std=std)
        self.ff2 = Linear(dim * ffn_mult, dim, std=std)

    def attention(self, x, mask):
        B, L, d = x.shape
        h = self.heads
        dh = d // h

        def split(t):
            return t.view(B, L, h, dh).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        keymask = mask[:, None, None, :]
        scores = scores.masked_fill(~keymask, torch.finfo(scores.dtype).min)
        attn = torch.softmax(scores, dim=-1)
        # rows whose query is padding (or with no real key) contribute nothing
        attn = attn * keymask.to(attn.dtype)
        out = (attn @ v).transpose(1, 2).reshape(B, L, d)
        return self.o(out)

    def forward(self, x, mask):
        m = mask.unsqueeze(-1).to(x.dtype)
        x = x + self.attention(self.ln1(x), mask) * m
        x = x + self.ff2(torch.relu(self.ff1(self.ln2(x)))) * m
        return x


class TransformerEncoder(nn.Module):
    """Bidirectional pre-norm encoder; padded rows of the output are exactly zero."""

    def __init__(self, dim, layers=2, heads=2, ffn_mult=4, std=0.02):
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads, ffn_mult, std) for _ in range(layers))
        self.final = LayerNorm(dim)

    def forward(self, x, mask):
        m = mask.unsqueeze(-1).to(x.dtype)
        x = x * m
        for blk in self.blocks:
            x = blk(x, mask)
        return self.final(x) * m


def transformer_encode(x, mask, encoder: TransformerEncoder):
    """Unbatched convenience wrapper: x (n, d), mask (n,)."""
    if x.dim() != 2:
        raise ContractError("transformer_encode expects an (n, d) array")
    return encoder(x.unsqueeze(0), mask.bool().unsqueeze(0)).squeeze(0)


class GRUEncoder(nn.Module):
    """Single-layer GRU whose state is carried unchanged across padded steps."""

    def __init__(self, dim, std=0.02):
        super().__init__()
        self.w_ih = nn.Parameter(torch.randn(dim, 3 * dim) * std)
        self.w_hh = nn.Parameter(torch.randn(dim, 3 * dim) * std)
        self.b_ih = nn.Parameter(torch.zeros(3 * dim))
        self.b_hh = nn.Parameter(torch.zeros(3 * dim))

    def step(self, x, h):
        gi = x @ self.w_ih + self.b_ih
        gh = h @ self.w_hh + self.b_hh
        ir, iz, in_ = gi.chunk(3, -1)
        hr, hz, hn = gh.chunk(3, -1)
        r = torch.sigmoid(ir + hr)
        z = torch.sigmoid(iz + hz)
        n = torch.tanh(in_ + r * hn)
        return (1 - z) * n + z * h

    def forward(self, x, mask):
        """Returns the final state, i.e. the state after the last real step."""
        B, L, d = x.shape
        h = x.new_zeros(B, d)
        m = mask.to(x.dtype)
        for i in range(L):
            mi = m[:, i : i + 1]
            h = mi * self.step(x[:, i], h) + (1 - mi) * h
        return h


# ---------------------------------------------------------------------------
# gradient check


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    eps: float = 1e-5,
    floor: float = 1e-5,
    max_coords: int | None = None,
    generator: torch.Generator | None = None,
) -> float:
    """Max relative error between autograd and central finite differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, floor)``, so
    gradients smaller than ``floor`` are compared absolutely.  ``loss_fn``
    must be deterministic and the parameters float64.  With ``max_coords``
    a random subset of coordinates per parameter is probed.
    """
    params = list(params)
    for p in params:
        if p.dtype != torch.float64:
            raise ContractError("gradient_check requires float64 parameters")
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            coords = range(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                coords = torch.randperm(flat.numel(), generator=generator)[:max_coords].tolist()
            gflat = g.reshape(-1)
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = float(gflat[i])
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format

CKPT_MAGIC = b"SQDNCKPT"
CKPT_VERSION = 1
_DTYPES = {torch.float32: (0, "<f4"), torch.float64: (1, "<f8"), torch.int64: (2, "<i8")}
_CODES = {code: (dt, fmt) for dt, (code, fmt) in _DTYPES.items()}


def write_checkpoint(path, tensors: Mapping[str, torch.Tensor], meta: dict | None = None) -> None:
    """Flat binary: magic, version, JSON metadata, then named little-endian arrays.

    Layout::

        8s   magic "SQDNCKPT"
        u32  format version
        u32  metadata length, then UTF-8 JSON
        u32  tensor count, then per tensor:
             u16 name length, name, u8 dtype code, u8 ndim, u32 * ndim shape, raw data
    """
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            t = t.detach().cpu().contiguous()
            if t.dtype not in _DTYPES:
                raise ContractError(f"unsupported checkpoint dtype {t.dtype} for {name}")
            code, _ = _DTYPES[t.dtype]
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, t.dim()))
            fh.write(struct.pack(f"<{t.dim()}I", *t.shape))
            fh.write(t.numpy().astype(_DTYPES[t.dtype][1], copy=False).tobytes())


def read_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    import numpy as np

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    off = 8
    version, meta_len = struct.unpack_from("<II", data, off)
    off += 8
    if version != CKPT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dtype, fmt = _CODES[code]
        n = int(np.prod(shape)) if ndim else 1
        size = n * np.dtype(fmt).itemsize
        arr = np.frombuffer(data, dtype=fmt, count=n, offset=off).reshape(shape)
        off += size
        tensors[name] = torch.from_numpy(arr.copy()).to(dtype)
    return tensors, meta
