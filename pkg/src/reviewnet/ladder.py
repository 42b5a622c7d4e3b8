"""Model-ladder harness: train several architectures on one synthetic task.

Every rung sees the same train/dev/test data and the same training loop; only
the architecture (and its reviewer settings) differ.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .model import N_SPECIAL, Instance, ModelConfig, ReviewNet
from .reviewer import ReviewerConfig
from .synthetic import TaskSpec, generate_ids
from .training import TrainConfig, fit, token_accuracy

log = logging.getLogger(__name__)


@dataclass
class LadderConfig:
    task: str = "word_occurrence"
    vocab_size: int = 30
    min_length: int = 5
    max_length: int = 10
    train_count: int = 2000
    dev_count: int = 200
    test_count: int = 200
    data_seed: int = 0
    embed_dim: int = 64
    hidden_dim: int = 256
    review_steps: int = 4
    reviewer_variant: str = "attentive_output"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lam=10.0, lr=0.05, batch_size=32, max_epochs=10, early_stop_metric="accuracy", patience=2))


@dataclass
class RungResult:
    architecture: str
    test_accuracy: float
    dev_accuracy: float
    best_epoch: int
    steps: int
    seconds: float


def task_instances(cfg: LadderConfig, count: int, seed: int) -> list[Instance]:
    """Synthetic pairs with ids shifted past the special tokens; targets end in <eos>."""
    spec = TaskSpec(cfg.task, cfg.vocab_size, cfg.min_length, cfg.max_length, count, seed)
    return [Instance([t + N_SPECIAL for t in src], [t + N_SPECIAL for t in tgt] + [2])
            for src, tgt in generate_ids(spec)]


def splits(cfg: LadderConfig):
    """Train, dev and test come from disjoint generator seeds."""
    s = cfg.data_seed
    return (task_instances(cfg, cfg.train_count, s),
            task_instances(cfg, cfg.dev_count, s + 1),
            task_instances(cfg, cfg.test_count, s + 2))


def model_config(cfg: LadderConfig, architecture: str, seed: int = 0) -> ModelConfig:
    return ModelConfig(architecture=architecture, encoder="rnn", vocab_size=cfg.vocab_size + N_SPECIAL,
                       embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim, attention_hidden=cfg.hidden_dim,
                       reviewer=ReviewerConfig(cfg.reviewer_variant, cfg.review_steps, "tied",
                                               discriminative_head=cfg.train.lam > 0),
                       init_seed=seed)


def run_rung(cfg: LadderConfig, architecture: str, data=None) -> RungResult:
    train, dev, test = data or splits(cfg)
    tc = cfg.train if architecture == "review_net" else replace(cfg.train, lam=0.0)
    model = ReviewNet(model_config(cfg, architecture, tc.seed))
    t0 = time.perf_counter()
    res = fit(model, train, dev, tc)
    model.load_state_dict(res.best_state)
    acc = token_accuracy(model, test)
    out = RungResult(architecture, acc, res.best_metric, res.best_epoch, res.steps, time.perf_counter() - t0)
    log.info("%s: test accuracy %.4f (dev %.4f, epoch %d, %.0fs)", architecture, acc, res.best_metric,
             res.best_epoch, out.seconds)
    return out


def run_ladder(cfg: LadderConfig, architectures=("review_net", "attentive")) -> list[RungResult]:
    data = splits(cfg)
    return [run_rung(cfg, arch, data) for arch in architectures]
