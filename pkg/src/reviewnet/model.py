"""Encoder -> (reviewer) -> decoder models sharing one parameter registry.

``architecture`` picks a rung of the comparison ladder:

* ``review_net``      decoder attends over thought vectors, s_0 = r
* ``attentive``       decoder attends over encoder states, s_0 = c
* ``vanilla``         no attention (zero context), s_0 = c
* ``language_model``  no encoder at all, zero context and zero s_0
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .decoder import (BOS, EOS, PAD, DecoderParams, Hypothesis, beam_search, greedy_decode,
                      init_state, teacher_forced)
from .encoder import EncoderOutput, FeatureGrid, encode_bidir, encode_features, encode_rnn, pad_batch
from .nn import AttentionScorer, LstmParams, LstmState, ParamInit
from .reviewer import (ReviewerConfig, ReviewerParams, ThoughtVectors, discriminative_scores,
                       run_reviewer, step_scores)
from .tensor import Tensor

log = logging.getLogger(__name__)

ARCHITECTURES = ("review_net", "attentive", "vanilla", "language_model")
ENCODERS = ("rnn", "bidir", "features")
N_SPECIAL = 4


@dataclass
class ModelConfig:
    architecture: str = "review_net"
    encoder: str = "rnn"
    vocab_size: int = 0
    embed_dim: int = 50
    hidden_dim: int = 256
    attention: str = "mlp"
    attention_hidden: int = 512
    reviewer: ReviewerConfig = field(default_factory=ReviewerConfig)
    feature_dim: int | None = None
    context_dim: int | None = None
    dtype: str = "float64"
    init_seed: int = 0

    def __post_init__(self):
        if isinstance(self.reviewer, dict):
            self.reviewer = ReviewerConfig(**self.reviewer)
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def has_reviewer(self) -> bool:
        return self.architecture == "review_net"

    @property
    def has_disc_head(self) -> bool:
        return self.has_reviewer and self.reviewer.discriminative_head


@dataclass
class Instance:
    source: list[int] | FeatureGrid
    target: list[int]          # ends with <eos>
    words: list[str] | None = None   # surface form of the target, for completion metrics


@dataclass
class Batch:
    sources: list
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    positives: list[list[int]]

    @property
    def size(self) -> int:
        return len(self.sources)


def make_batch(instances: Sequence[Instance]) -> Batch:
    if not instances:
        raise ValueError("empty batch")
    if any(len(i.target) == 0 for i in instances):
        raise ValueError("zero-length target")
    width = max(len(i.target) for i in instances)
    B = len(instances)
    tgt_in = np.full((B, width), PAD, dtype=np.int64)
    tgt_out = np.full((B, width), PAD, dtype=np.int64)
    mask = np.zeros((B, width))
    for b, inst in enumerate(instances):
        n = len(inst.target)
        tgt_out[b, :n] = inst.target
        tgt_in[b, 0] = BOS
        tgt_in[b, 1:n] = inst.target[:-1]
        mask[b, :n] = 1.0
    positives = [sorted({t for t in inst.target if t >= N_SPECIAL}) for inst in instances]
    return Batch([i.source for i in instances], tgt_in, tgt_out, mask, positives)


@dataclass
class Forward:
    logp: Tensor                         # (B, T_y, V)
    pooled: Tensor | None = None         # (B, V) discriminative scores
    encoded: EncoderOutput | None = None
    thoughts: ThoughtVectors | None = None


class ReviewNet:
    """All rungs of the ladder; see the module docstring."""

    def __init__(self, config: ModelConfig):
        if config.vocab_size <= N_SPECIAL:
            raise ValueError("vocab_size must exceed the special tokens")
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self._build(ParamInit(config.init_seed, dtype=self.dtype))

    # ------------------------------------------------------------ parameters
    def _add(self, name: str, t: Tensor) -> Tensor:
        t.name = name
        self.params[name] = t
        return t

    def _lstm(self, init, name, n_in, n_hidden) -> LstmParams:
        p = LstmParams.init(init, n_in, n_hidden, name)
        for k, t in p.tensors().items():
            self._add(f"{name}.{k}", t)
        return p

    def _scorer(self, init, name, state_dim, query_dim) -> AttentionScorer:
        cfg = self.config
        s = AttentionScorer.init(init, cfg.attention, state_dim, query_dim, cfg.attention_hidden, name)
        for k, t in s.tensors().items():
            self._add(f"{name}.{k}", t)
        return s

    def _build(self, init: ParamInit):
        cfg = self.config
        V, e, h = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim
        self.state_proj = self.context_proj = None
        if cfg.architecture != "language_model":
            if cfg.encoder in ("rnn", "bidir"):
                self.src_embedding = self._add("encoder.embedding", init.weight(V, e))
                self.enc_fwd = self._lstm(init, "encoder.lstm", e, h)
                if cfg.encoder == "bidir":
                    self.enc_bwd = self._lstm(init, "encoder.lstm_bwd", e, h)
                    self.bidir_proj = (self._add("encoder.proj.w", init.weight(2 * h, h)),
                                       self._add("encoder.proj.b", init.zeros(h)))
            else:
                if cfg.feature_dim is None:
                    raise ValueError("feature encoder needs feature_dim")
                if cfg.feature_dim != h:
                    self.state_proj = (self._add("encoder.state_proj.w", init.weight(cfg.feature_dim, h)),
                                       self._add("encoder.state_proj.b", init.zeros(h)))
                if cfg.context_dim is not None and cfg.context_dim != h:
                    self.context_proj = (self._add("encoder.context_proj.w", init.weight(cfg.context_dim, h)),
                                         self._add("encoder.context_proj.b", init.zeros(h)))

        self.reviewer = None
        if cfg.has_reviewer:
            rc = cfg.reviewer
            lstms, scorer, w_out = [], None, None
            if rc.variant != "identity_reduction":
                n_units = 1 if rc.tied else rc.steps
                lstms = [self._lstm(init, f"reviewer.lstm{'' if rc.tied else k}", h, h) for k in range(n_units)]
                scorer = self._scorer(init, "reviewer.att", h, h)
                if rc.variant == "attentive_output":
                    w_out = self._add("reviewer.w_out", init.weight(h, h))
            w_review = self._add("reviewer.w_review", init.weight(2 * h, h))
            disc_w = disc_b = None
            if rc.discriminative_head:
                disc_w = self._add("reviewer.disc.w", init.weight(h, V))
                disc_b = self._add("reviewer.disc.b", init.zeros(V))
            self.reviewer = ReviewerParams(lstms, scorer, w_review, w_out, disc_w, disc_b)

        dec_scorer = None
        if cfg.architecture in ("review_net", "attentive"):
            dec_scorer = self._scorer(init, "decoder.att", h, h)
        self.decoder = DecoderParams(
            embedding=self._add("decoder.embedding", init.weight(V, e)),
            lstm=self._lstm(init, "decoder.lstm", h + e, h),
            scorer=dec_scorer,
            out_w=self._add("decoder.out.w", init.weight(h, V)),
            out_b=self._add("decoder.out.b", init.zeros(V)),
            memory_dim=h,
        )

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"parameter mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    # --------------------------------------------------------------- forward
    def encode(self, sources: Sequence) -> EncoderOutput | None:
        cfg = self.config
        if cfg.architecture == "language_model":
            return None
        if cfg.encoder == "features":
            return encode_features(sources, self.state_proj, self.context_proj, dtype=self.dtype)
        ids, mask = pad_batch(sources)
        if cfg.encoder == "bidir":
            return encode_bidir(self.enc_fwd, self.enc_bwd, self.bidir_proj, self.src_embedding, ids, mask)
        return encode_rnn(self.enc_fwd, self.src_embedding, ids, mask)

    def review(self, enc: EncoderOutput) -> ThoughtVectors | None:
        if self.reviewer is None:
            return None
        return run_reviewer(self.config.reviewer, self.reviewer, enc)

    def decoder_inputs(self, enc, thoughts, batch_size: int):
        """(memory, memory_mask, initial state) for the configured rung."""
        arch = self.config.architecture
        if arch == "review_net":
            return thoughts.vectors, thoughts.mask, init_state(thoughts.review)
        if arch == "attentive":
            return enc.states, enc.mask, init_state(enc.context)
        if arch == "vanilla":
            return None, None, init_state(enc.context)
        return None, None, LstmState.zeros(self.config.hidden_dim, batch_size, self.dtype)

    def forward(self, batch: Batch) -> Forward:
        enc = self.encode(batch.sources)
        thoughts = self.review(enc) if enc is not None else None
        memory, mmask, s0 = self.decoder_inputs(enc, thoughts, batch.size)
        logp = teacher_forced(self.decoder, memory, s0, batch.tgt_in, mmask)
        pooled = None
        if self.config.has_disc_head:
            pooled = discriminative_scores(self.reviewer.disc_w, self.reviewer.disc_b,
                                           thoughts.vectors, thoughts.mask)
        return Forward(logp, pooled, enc, thoughts)

    def teacher_forced_logprobs(self, instances: Sequence[Instance]) -> list[np.ndarray]:
        """Per-instance (T_y, V) gold-history log-probabilities."""
        with T.no_tape():
            batch = make_batch(instances)
            lp = self.forward(batch).logp.data
        return [lp[b, :len(inst.target)] for b, inst in enumerate(instances)]

    # -------------------------------------------------------------- decoding
    def _prepare(self, source):
        enc = self.encode([source])
        thoughts = self.review(enc) if enc is not None else None
        return self.decoder_inputs(enc, thoughts, 1)

    def greedy(self, source, max_len: int) -> list[int]:
        with T.no_tape():
            memory, _, s0 = self._prepare(source)
            return greedy_decode(self.decoder, memory, s0, max_len)

    def beam(self, source, beam: int, max_len: int, length_normalize: bool = False) -> list[Hypothesis]:
        with T.no_tape():
            memory, _, s0 = self._prepare(source)
            return beam_search(self.decoder, memory, s0, beam, max_len, length_normalize=length_normalize)

    def generate(self, source, beam: int = 3, max_len: int = 30, length_normalize: bool = False) -> list[int]:
        if beam == 1:
            return self.greedy(source, max_len)
        return self.beam(source, beam, max_len, length_normalize)[0].output(EOS)

    def attention_trace(self, source) -> dict:
        """Reviewer attention rows and per-step word scores for one input."""
        if self.reviewer is None:
            raise ValueError("model has no reviewer")
        with T.no_tape():
            enc = self.encode([source])
            thoughts = self.review(enc)
            scores = None
            if self.config.has_disc_head:
                scores = step_scores(self.reviewer.disc_w, self.reviewer.disc_b, thoughts.vectors).data[0]
        return {"attention": thoughts.attention[0], "scores": scores}
