"""The reviewer: T_r attention steps over encoder states producing thought vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .encoder import EncoderOutput
from .nn import AttentionScorer, LstmParams, LstmState, attend, lstm_param_count, lstm_step
from .tensor import DimensionError, Tensor

VARIANTS = ("attentive_input", "attentive_output", "identity_reduction")


@dataclass
class ReviewerConfig:
    variant: str = "attentive_input"
    steps: int = 8
    weight_tying: str = "tied"
    discriminative_head: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown reviewer variant {self.variant!r}")
        if self.weight_tying not in ("tied", "untied"):
            raise ValueError(f"weight_tying must be 'tied' or 'untied', not {self.weight_tying!r}")
        if self.steps < 1:
            raise ValueError("reviewer needs at least one step")

    @property
    def tied(self) -> bool:
        # the identity construction is per-step by definition
        return self.weight_tying == "tied" and self.variant != "identity_reduction"


@dataclass
class ReviewerParams:
    lstms: list[LstmParams]
    scorer: AttentionScorer | None
    w_review: Tensor                 # W' : (2h, h)
    w_out: Tensor | None = None      # W  : attention context -> h, attentive output only
    disc_w: Tensor | None = None     # shared score layer h -> V
    disc_b: Tensor | None = None

    def lstm_for(self, step: int) -> LstmParams:
        return self.lstms[0] if len(self.lstms) == 1 else self.lstms[step]

    def lstm_param_count(self) -> int:
        return lstm_param_count(self.lstms)


@dataclass
class ThoughtVectors:
    vectors: Tensor           # F, (B, T_r, h)
    review: Tensor            # r, (B, h)
    attention: np.ndarray     # (B, T_r, |H|), rows sum to 1
    mask: np.ndarray | None = None   # (B, T_r); only ragged for identity reduction

    @property
    def steps(self) -> int:
        return self.vectors.shape[1]


class ReviewStep(NamedTuple):
    state: LstmState   # recurrent state carried to the next unit
    thought: Tensor    # emitted f_t
    weights: Tensor    # attention over H


def review_input_step(lstm: LstmParams, scorer: AttentionScorer, H: Tensor, prev: LstmState,
                      query=None, mask=None) -> ReviewStep:
    """Attend over H with the previous thought, feed the result to the LSTM."""
    weights, ctx = attend(scorer, H, prev.hidden if query is None else query, mask)
    state = lstm_step(lstm, ctx, prev)
    return ReviewStep(state, state.hidden, weights)


def review_output_step(lstm: LstmParams, scorer: AttentionScorer, W: Tensor, H: Tensor,
                       prev: LstmState, query=None, mask=None) -> ReviewStep:
    """LSTM on a zero input; the thought adds ``W`` applied to the attention result.

    The recurrence carries the raw LSTM state, not the augmented thought.
    """
    weights, ctx = attend(scorer, H, prev.hidden if query is None else query, mask)
    if T._data(ctx).shape[-1] != W.shape[0]:
        raise DimensionError("W does not match the attention context dim")
    zero = np.zeros(prev.hidden.shape[:-1] + (lstm.input_dim,), dtype=prev.hidden.dtype)
    state = lstm_step(lstm, zero, prev)
    thought = T.add(state.hidden, T.matmul(ctx, W))
    return ReviewStep(state, thought, weights)


def review_vector(w_review: Tensor, last_thought, context) -> Tensor:
    return T.matmul(T.concat([last_thought, context], axis=-1), w_review)


def run_reviewer(config: ReviewerConfig, params: ReviewerParams, enc: EncoderOutput) -> ThoughtVectors:
    H, c, mask = enc.states, enc.context, enc.mask
    B, Tx = mask.shape

    if config.variant == "identity_reduction":
        lengths = enc.lengths
        if np.any(lengths != config.steps):
            raise ValueError(f"identity reduction needs T_r == T_x; T_r={config.steps}, "
                             f"T_x={sorted(set(lengths.tolist()))}")
        rows = np.arange(B)
        last = T.index(H, (rows, lengths - 1))
        trace = np.eye(Tx)[None].repeat(B, axis=0) * mask[:, :, None]
        return ThoughtVectors(H, review_vector(params.w_review, last, c), trace, mask)

    full_mask = None if mask.all() else mask
    state = LstmState(c, c)
    query = c
    thoughts, trace = [], []
    for t in range(config.steps):
        lstm = params.lstm_for(t)
        if config.variant == "attentive_input":
            step = review_input_step(lstm, params.scorer, H, state, query, full_mask)
        else:
            step = review_output_step(lstm, params.scorer, params.w_out, H, state, query, full_mask)
        state, query = step.state, step.thought
        thoughts.append(step.thought)
        trace.append(step.weights.data)
    F = T.stack(thoughts, axis=1)
    r = review_vector(params.w_review, thoughts[-1], c)
    return ThoughtVectors(F, r, np.stack(trace, axis=1))


def step_scores(W: Tensor, b: Tensor, F: Tensor) -> Tensor:
    """Per-step word scores, (B, T_r, V)."""
    return T.add(T.matmul(F, W), b)


def discriminative_scores(W: Tensor, b: Tensor, F: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Max-pool the per-step word scores over review steps."""
    scores = step_scores(W, b, F)
    if mask is not None and not mask.all():
        scores = T.add(scores, np.where(mask > 0, 0.0, -1e9)[..., None])
    return T.max(scores, axis=-2)
