"""Losses, AdaGrad and the training loop."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import N_SPECIAL, Batch, Instance, ReviewNet, make_batch
from .tensor import NumericError, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lam: float = 10.0
    lr: float = 1e-2
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    max_steps: int | None = None
    early_stop_metric: str = "nll"     # nll | bleu4 | accuracy
    patience: int = 5
    clip_norm: float | None = 5.0
    seed: int = 0
    max_len: int = 30

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.early_stop_metric not in ("nll", "bleu4", "accuracy"):
            raise ValueError(f"unknown early-stop metric {self.early_stop_metric!r}")


@dataclass
class LossBreakdown:
    nll: float
    disc: float
    total: float
    tokens: int


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------- losses

def nll_loss(distributions, targets: Sequence[int], mask=None) -> float:
    """Mean -log p(gold) over unpadded steps; ``distributions`` is (T_y, V) probabilities."""
    probs = np.asarray(distributions, dtype=float)
    targets = np.asarray(targets)
    if len(targets) == 0:
        raise ValueError("zero-length target")
    keep = np.ones(len(targets), bool) if mask is None else np.asarray(mask) > 0
    gold = probs[np.arange(len(targets)), targets][keep]
    return float(-np.log(gold).sum() / keep.sum())


def nll_per_instance(logp: Tensor, tgt_out: np.ndarray, tgt_mask: np.ndarray) -> Tensor:
    B, Ty = tgt_out.shape
    gold = T.index(logp, (np.arange(B)[:, None], np.arange(Ty)[None, :], tgt_out))
    return T.mul(T.sum(T.mul(gold, tgt_mask), axis=1), -1.0 / tgt_mask.sum(axis=1))


def disc_loss_batch(scores: Tensor, positives: Sequence[Sequence[int]], n_special: int = N_SPECIAL) -> Tensor:
    """Multi-label margin loss per instance, (B,).

    Each positive j is compared with every negative i (eligible words outside
    the target set): mean of max(0, 1 - (s_j - s_i)).  An empty positive set
    contributes 0.
    """
    B, V = scores.shape
    width = max(1, max((len(p) for p in positives), default=1))
    pos_idx = np.zeros((B, width), dtype=np.int64)
    pos_mask = np.zeros((B, width))
    neg_mask = np.zeros((B, V))
    neg_mask[:, n_special:] = 1.0
    for b, pos in enumerate(positives):
        pos = list(pos)
        if any(p < n_special or p >= V for p in pos):
            raise ValueError("positive word outside the eligible vocabulary")
        pos_idx[b, :len(pos)] = pos
        pos_mask[b, :len(pos)] = 1.0
        neg_mask[b, pos] = 0.0
    n_pairs = pos_mask.sum(axis=1) * neg_mask.sum(axis=1)
    if np.any(n_pairs == 0):
        warnings.warn("instance without positive/negative word pairs contributes no discriminative loss",
                      stacklevel=2)
    weight = pos_mask[:, :, None] * neg_mask[:, None, :] / np.where(n_pairs > 0, n_pairs, 1.0)[:, None, None]
    s_pos = T.index(scores, (np.arange(B)[:, None], pos_idx))
    margins = T.relu(T.add(T.sub(1.0, T.reshape(s_pos, (B, width, 1))), T.reshape(scores, (B, 1, V))))
    return T.sum(T.reshape(T.mul(margins, weight), (B, width * V)), axis=1)


def disc_loss(scores, positives: Sequence[int], n_special: int = 0) -> float:
    """Single-instance margin loss on pooled scores (ids below ``n_special`` excluded)."""
    s = T.as_tensor(np.asarray(T._data(scores), dtype=float)[None, :])
    with warnings.catch_warnings():
        if not positives:
            warnings.simplefilter("always")
        return float(disc_loss_batch(s, [list(positives)], n_special).data[0])


def total_loss(nll, disc, lam: float):
    return nll + lam * disc


def instance_losses(model: ReviewNet, batch: Batch, lam: float):
    """Per-instance (nll, disc) tensors; disc is None without a discriminative head."""
    fw = model.forward(batch)
    nll = nll_per_instance(fw.logp, batch.tgt_out, batch.tgt_mask)
    disc = disc_loss_batch(fw.pooled, batch.positives) if fw.pooled is not None else None
    return nll, disc


def batch_loss(model: ReviewNet, batch: Batch, lam: float) -> tuple[Tensor, LossBreakdown]:
    """Instance losses nll + lam*disc averaged over the batch."""
    nll, disc = instance_losses(model, batch, lam)
    per = nll if disc is None or lam == 0 else T.add(nll, T.mul(disc, lam))
    loss = T.mean(per)
    nll_v = float(nll.data.mean())
    disc_v = float(disc.data.mean()) if disc is not None else 0.0
    return loss, LossBreakdown(nll_v, disc_v, total_loss(nll_v, disc_v, lam), int(batch.tgt_mask.sum()))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdaGradState:
    lr: float = 1e-2
    eps: float = 1e-8
    accum: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_update(state: AdaGradState, name: str, param: np.ndarray, grad: np.ndarray) -> None:
    """In place: G += g^2; param -= lr * g / (sqrt(G) + eps)."""
    if param.shape != grad.shape:
        raise ValueError(f"{name}: grad shape {grad.shape} != param shape {param.shape}")
    if not np.isfinite(grad).all():
        raise NumericError(f"non-finite gradient for {name}")
    G = state.accum.get(name)
    if G is None:
        G = state.accum[name] = np.zeros_like(param)
    G += grad * grad
    param -= state.lr * grad / (np.sqrt(G) + state.eps)


def clip_global_norm(grads: dict, max_norm: float | None) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train_step(model: ReviewNet, batch: Batch, opt: AdaGradState, cfg: TrainConfig) -> LossBreakdown:
    params = model.parameters()
    with T.Tape():
        loss, parts = batch_loss(model, batch, cfg.lam)
    grads = T.gradient_of(loss, params)
    named = {p.name: g for p, g in grads.items()}
    clip_global_norm(named, cfg.clip_norm)
    for p in params:
        adagrad_update(opt, p.name, p.data, named[p.name])
    return parts


# --------------------------------------------------------------- evaluation

def dev_nll(model: ReviewNet, instances: Sequence[Instance], batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with T.no_tape():
        for k in range(0, len(instances), batch_size):
            batch = make_batch(instances[k:k + batch_size])
            logp = model.forward(batch).logp.data
            B, Ty = batch.tgt_out.shape
            gold = logp[np.arange(B)[:, None], np.arange(Ty)[None, :], batch.tgt_out]
            total += float(-(gold * batch.tgt_mask).sum())
            count += int(batch.tgt_mask.sum())
    return total / count


def token_accuracy(model: ReviewNet, instances: Sequence[Instance], batch_size: int = 64) -> float:
    """Teacher-forced argmax accuracy over gold tokens (including <eos>)."""
    hit, count = 0, 0
    with T.no_tape():
        for k in range(0, len(instances), batch_size):
            batch = make_batch(instances[k:k + batch_size])
            pred = model.forward(batch).logp.data.argmax(axis=-1)
            hit += int(((pred == batch.tgt_out) * batch.tgt_mask).sum())
            count += int(batch.tgt_mask.sum())
    return hit / count


def dev_bleu(model: ReviewNet, instances: Sequence[Instance], max_len: int) -> float:
    from .metrics import bleu4
    from .decoder import EOS
    cands = [model.greedy(i.source, max_len) for i in instances]
    refs = [[[t for t in i.target if t != EOS]] for i in instances]
    return bleu4(cands, refs).bleu


def evaluate_metric(model, instances, metric: str, max_len: int) -> float:
    if metric == "nll":
        return dev_nll(model, instances)
    if metric == "accuracy":
        return token_accuracy(model, instances)
    return dev_bleu(model, instances, max_len)


# --------------------------------------------------------------------- loop

@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_metric: float
    best_epoch: int
    steps: int
    log: list[dict]
    optimizer: AdaGradState


def fit(model: ReviewNet, train: Sequence[Instance], dev: Sequence[Instance], cfg: TrainConfig,
        log_path=None, on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Mini-batch AdaGrad with early stopping on the dev metric.

    Returns the parameters from the best dev epoch.  Patience counts epochs
    without improvement; 0 stops at the first non-improving epoch.
    """
    if not train or not dev:
        raise ValueError("fit needs non-empty train and dev splits")
    lower_better = cfg.early_stop_metric == "nll"
    rng = np.random.default_rng(cfg.seed)
    opt = AdaGradState(cfg.lr, cfg.eps)
    records: list[dict] = []
    best = (math.inf if lower_better else -math.inf, 0, model.state_dict())
    stale, step = 0, 0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(train))
            sums = np.zeros(3)
            n_batches = 0
            for k in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = make_batch([train[i] for i in order[k:k + cfg.batch_size]])
                try:
                    parts = train_step(model, batch, opt, cfg)
                except NumericError as exc:
                    raise TrainingDiverged(f"epoch {epoch} step {step + 1}: {exc}") from exc
                step += 1
                n_batches += 1
                sums += (parts.nll, parts.disc, parts.total)
            if n_batches == 0:
                break
            metric = evaluate_metric(model, dev, cfg.early_stop_metric, cfg.max_len)
            nll, disc, total = (sums / n_batches).tolist()
            rec = {"epoch": epoch, "step": step, "nll": nll, "disc": disc, "total": total,
                   "dev_metric": metric}
            records.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d step %d nll %.4f disc %.4f dev %s %.4f",
                     epoch, step, nll, disc, cfg.early_stop_metric, metric)
            improved = metric < best[0] if lower_better else metric > best[0]
            if improved:
                best = (metric, epoch, model.state_dict())
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if sink:
            sink.close()
    return FitResult(best[2], best[0], best[1], step, records, opt)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
