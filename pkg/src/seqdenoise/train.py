"""Optimisation loop, batching and evaluation glue."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .config import Config
from .data import PAD, SplitBundle, augment_with_noise, truncate_pad, user_rng
from .errors import DivergenceError
from .gates import TemperatureSchedule, temperature_step
from .metrics import (RankingReport, hr_at_k, noise_detection_report, rank_among_sampled,
                      rank_targets, sample_negatives)
from .model import Batch, MGSDModel
from .nn import read_checkpoint, write_checkpoint

log = logging.getLogger(__name__)

LOG_FIELDS = (
    "epoch", "batches", "tau", "rec", "itscl", "inscl", "mse", "l2", "total",
    "lambda1", "lambda2", "lambda3", "rho",
    "mgp_gain", "e_it_norm", "e_in_norm", "valid_hr@20", "valid_ndcg@20",
)

# stream ids for derived generators
_SHUFFLE, _NOISE, _GUMBEL, _EVAL_NOISE, _NEGATIVES = 1, 2, 3, 4, 5


def _dtype(cfg: Config):
    return torch.float64 if cfg.train.dtype == "float64" else torch.float32


def make_batch(rows, max_len, augmentations=None, with_target=True) -> Batch:
    """rows: (user, input_items, target); augmentations: aligned AugmentedSequence list.

    The relevance target is the next item when ``with_target`` (training) and
    the last observed item otherwise.
    """
    items, masks, rel, tgt = [], [], [], []
    for _, inp, target in rows:
        it, m = truncate_pad(inp, max_len)
        items.append(it)
        masks.append(m)
        tgt.append(target)
        last = inp[-1] if inp else PAD
        rel.append(target if with_target else last)
    batch = Batch(
        items=torch.tensor(items, dtype=torch.long),
        mask=torch.tensor(masks, dtype=torch.bool),
        relevance_target=torch.tensor(rel, dtype=torch.long),
        target=torch.tensor(tgt, dtype=torch.long),
    )
    if augmentations is not None:
        a_items, a_mask, a_lab = [], [], []
        for aug in augmentations:
            it, m = truncate_pad(aug.items, max_len)
            lab = [0] * (max_len - len(aug.noise_labels)) + list(aug.noise_labels)
            a_items.append(it)
            a_mask.append(m)
            a_lab.append(lab)
        batch.aug_items = torch.tensor(a_items, dtype=torch.long)
        batch.aug_mask = torch.tensor(a_mask, dtype=torch.bool)
        batch.aug_labels = torch.tensor(a_lab, dtype=torch.float64)
    return batch


def augment_rows(rows, t, n_items, max_len, seed, *stream):
    """One augmented copy per row from an independent (seed, *stream, user, row) generator."""
    return [
        augment_with_noise(inp, target, t, n_items, user_rng(seed, *stream, user, k), max_len)
        for k, (user, inp, target) in enumerate(rows)
    ]


def _bundle_augmentations(bundle: SplitBundle):
    from .data import AugmentedSequence

    return [AugmentedSequence(items, labels, tgt, orig) for _, items, labels, tgt, orig in bundle.augmentations]


@dataclass
class TrainResult:
    model: MGSDModel
    history: list[dict]
    best_epoch: int
    best_valid_hr20: float
    stopped_early: bool
    state: dict = field(repr=False, default_factory=dict)


def set_determinism(seed: int, deterministic: bool = True):
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def build_model(cfg: Config, n_items: int) -> MGSDModel:
    torch.manual_seed(cfg.train.seed)
    model = MGSDModel(n_items, cfg)
    return model.to(_dtype(cfg))


def named_state(model: MGSDModel) -> dict[str, torch.Tensor]:
    """Parameters keyed by first name; shared tensors appear once."""
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def load_state(model: MGSDModel, state: dict[str, torch.Tensor]):
    params = dict(model.named_parameters())
    missing = set(params) - set(state)
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(state[name].to(p.dtype))


@torch.no_grad()
def score_rows(model: MGSDModel, rows, batch_size=512) -> np.ndarray:
    model.eval()
    mode = model.cfg.gumbel.eval_mode
    gen = torch.Generator().manual_seed(model.cfg.train.seed)
    out = []
    for i in range(0, len(rows), batch_size):
        chunk = rows[i : i + batch_size]
        b = make_batch(chunk, model.cfg.data.max_len, with_target=False)
        res = model(b, tau=model.cfg.gumbel.tau_min, mode=mode, generator=gen, compute_loss=False)
        out.append(res.scores.double().numpy())
    return np.concatenate(out) if out else np.zeros((0, model.n_items))


def evaluate_rows(model: MGSDModel, rows, ks=(5, 10, 20), sampled_negatives: int | None = None) -> RankingReport:
    """Full-catalogue ranks, or ranks among per-user sampled negatives when requested."""
    n_neg = model.cfg.eval.sampled_negatives if sampled_negatives is None else sampled_negatives
    scores = score_rows(model, rows)
    if not len(rows):
        ranks = np.zeros(0, dtype=int)
    elif n_neg:
        ranks = np.array([
            rank_among_sampled(
                scores[i], tgt,
                sample_negatives(model.n_items, set(inp) | {tgt}, n_neg,
                                 user_rng(model.cfg.train.seed, _NEGATIVES, user)),
            )
            for i, (user, inp, tgt) in enumerate(rows)
        ])
    else:
        ranks = rank_targets(scores, [r[2] for r in rows])
    return RankingReport(ranks, tuple(ks), users=np.array([r[0] for r in rows]))


@torch.no_grad()
def evaluate_noise(model: MGSDModel, rows, t: int, seed: int, batch_size=512):
    """Inject ``t`` items into each row's input and score the discriminator against them."""
    model.eval()
    cfg = model.cfg
    augs = augment_rows(rows, t, model.n_items, cfg.data.max_len, seed, _EVAL_NOISE)
    keep_all, prob_all, lab_all = [], [], []
    for i in range(0, len(rows), batch_size):
        chunk = rows[i : i + batch_size]
        b = make_batch(chunk, cfg.data.max_len, augs[i : i + batch_size], with_target=False)
        probs = model.discriminate_augmented(b.aug_items, b.aug_mask, b.relevance_target)
        m = b.aug_mask
        keep_all.append((probs >= 0.5)[m].numpy())
        prob_all.append(probs[m].double().numpy())
        lab_all.append(b.aug_labels[m].numpy())
    return noise_detection_report(
        np.concatenate(keep_all), np.concatenate(prob_all), np.concatenate(lab_all)
    )


def _epoch_rows(train_rows, epoch, seed):
    order = np.random.default_rng([seed, _SHUFFLE, epoch]).permutation(len(train_rows))
    return order


def train(cfg: Config, bundle: SplitBundle, log_path: str | Path | None = None,
          train_rows: Sequence | None = None, verbose: bool = False) -> TrainResult:
    """Joint training with per-batch temperature decay and HR@20 early stopping."""
    cfg = cfg.effective().validate()
    seed = cfg.train.seed
    set_determinism(seed, cfg.train.deterministic)
    dtype = _dtype(cfg)
    model = build_model(cfg, bundle.n_items)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.lr)
    schedule = TemperatureSchedule(cfg.gumbel.tau0, cfg.gumbel.decay, cfg.gumbel.interval, cfg.gumbel.tau_min)
    gen = torch.Generator().manual_seed(seed * 1000003 + _GUMBEL)

    rows = list(train_rows if train_rows is not None else bundle.train)
    fixed_augs = None if cfg.data.resample_noise or train_rows is not None else _bundle_augmentations(bundle)
    use_aug = model.use_and
    B = cfg.train.batch_size
    history = []
    best_hr, best_epoch, best_state = -1.0, -1, None
    step = 0
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    stopped = False
    try:
        for epoch in range(cfg.train.max_epochs):
            model.train()
            order = _epoch_rows(rows, epoch, seed)
            if use_aug:
                if fixed_augs is not None:
                    augs = fixed_augs
                else:
                    augs = augment_rows(rows, cfg.data.t, bundle.n_items, cfg.data.max_len,
                                        seed, _NOISE, epoch)
            sums = dict.fromkeys(("rec", "itscl", "inscl", "mse", "l2", "total", "mgp_gain", "e_it_norm", "e_in_norm"), 0.0)
            n_batches = 0
            tau = temperature_step(schedule, step)
            for start in range(0, len(order), B):
                idx = order[start : start + B]
                chunk = [rows[i] for i in idx]
                batch = make_batch(chunk, cfg.data.max_len, [augs[i] for i in idx] if use_aug else None)
                if batch.aug_labels is not None:
                    batch.aug_labels = batch.aug_labels.to(dtype)
                tau = temperature_step(schedule, step)
                out = model(batch, tau=tau, mode="sample", generator=gen)
                lb = out.losses
                if not torch.isfinite(lb.total):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, batch {n_batches}",
                        diagnostics={"epoch": epoch, "batch": n_batches, **lb.scalars()},
                    )
                opt.zero_grad(set_to_none=True)
                lb.total.backward()
                opt.step()
                with torch.no_grad():
                    # the pad row only ever receives regularisation gradient
                    model.item_emb[0].zero_()
                step += 1
                n_batches += 1
                for k in ("rec", "itscl", "inscl", "mse", "l2", "total"):
                    sums[k] += float(getattr(lb, k).detach())
                with torch.no_grad():
                    m = out.mask.to(out.gain.dtype)
                    sums["mgp_gain"] += float((out.gain * m).sum() / m.sum().clamp_min(1))
                    sums["e_it_norm"] += float(out.e_it.norm(dim=-1).mean())
                    sums["e_in_norm"] += float(out.e_in.norm(dim=-1).mean())
            rec = {k: v / max(n_batches, 1) for k, v in sums.items()}
            valid = evaluate_rows(model, bundle.valid)
            vm = valid.metrics
            row = {
                "epoch": epoch, "batches": n_batches, "tau": tau, **rec,
                "lambda1": cfg.itscl.weight, "lambda2": cfg.inscl.weight,
                "lambda3": cfg.mse.weight, "rho": cfg.l2.weight,
                "valid_hr@20": vm.get("hr@20", hr_at_k(valid.ranks, 20)),
                "valid_ndcg@20": vm.get("ndcg@20", 0.0),
            }
            history.append(row)
            if writer:
                writer.writerow({k: _fmt(row[k]) for k in LOG_FIELDS})
                fh.flush()
            if verbose:
                log.info("epoch %d total=%.4f rec=%.4f mse=%.4f valid HR@20=%.4f",
                         epoch, rec["total"], rec["rec"], rec["mse"], row["valid_hr@20"])
            if row["valid_hr@20"] > best_hr:
                best_hr, best_epoch = row["valid_hr@20"], epoch
                best_state = named_state(model)
            elif epoch - best_epoch >= cfg.train.patience:
                stopped = True
                break
    finally:
        if fh:
            fh.close()
    if cfg.train.restore_best:
        load_state(model, best_state)
    return TrainResult(model, history, best_epoch, best_hr, stopped, named_state(model))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: MGSDModel, extra: dict | None = None):
    meta = {
        "version": __version__,
        "config": model.cfg.dumps(),
        "n_items": model.n_items,
        **(extra or {}),
    }
    write_checkpoint(path, named_state(model), meta)


def load_checkpoint(path) -> tuple[MGSDModel, dict]:
    from .config import loads

    tensors, meta = read_checkpoint(path)
    cfg = loads(meta["config"]).validate()
    model = build_model(cfg, int(meta["n_items"]))
    load_state(model, tensors)
    return model, meta
