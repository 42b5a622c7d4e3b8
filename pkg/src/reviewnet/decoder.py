"""Attentive LSTM decoder with teacher forcing, greedy decoding and beam search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import AttentionScorer, LstmParams, LstmState, attend, lstm_step
from .tensor import DimensionError, Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class DecoderParams:
    embedding: Tensor              # (V, e)
    lstm: LstmParams               # input = [context (m); embedding (e)]
    scorer: AttentionScorer | None
    out_w: Tensor                  # (h, V)
    out_b: Tensor                  # (V,)
    memory_dim: int = 0

    @property
    def vocab_size(self) -> int:
        return self.out_w.shape[1]


def init_state(review) -> LstmState:
    """s_0: both cell and hidden start at the review vector."""
    return LstmState(review, review)


def decode_step(params: DecoderParams, memory: Tensor | None, prev_state: LstmState, prev_token,
                memory_mask=None, log: bool = True):
    """One decoder step.

    ``memory`` is (B, n, m) or None for a decoder without attention (its
    context is the zero vector).  Returns ``(state, scores, weights)`` where
    scores are log-probabilities (or probabilities with ``log=False``).
    """
    prev_token = np.atleast_1d(np.asarray(prev_token))
    if prev_state.hidden.shape[-1] != params.lstm.hidden_dim:
        raise DimensionError("decoder state dim mismatch")
    emb = T.embed(params.embedding, prev_token)
    if memory is None:
        weights = None
        ctx = np.zeros((len(prev_token), params.memory_dim), dtype=emb.dtype)
    else:
        weights, ctx = attend(params.scorer, memory, prev_state.hidden, memory_mask)
    state = lstm_step(params.lstm, T.concat([ctx, emb], axis=-1), prev_state)
    logits = T.add(T.matmul(state.hidden, params.out_w), params.out_b)
    scores = T.log_softmax(logits, axis=-1) if log else T.softmax(logits, axis=-1)
    return state, scores, weights


def teacher_forced(params: DecoderParams, memory, init: LstmState, inputs: np.ndarray,
                   memory_mask=None) -> Tensor:
    """Log-probabilities (B, T_y, V) feeding gold previous tokens ``inputs``."""
    state = init
    out = []
    mask = None if memory_mask is None or memory_mask.all() else memory_mask
    for t in range(inputs.shape[1]):
        state, logp, _ = decode_step(params, memory, state, inputs[:, t], mask)
        out.append(logp)
    return T.stack(out, axis=1)


def greedy_decode(params: DecoderParams, memory, init: LstmState, max_len: int,
                  bos: int = BOS, eos: int = EOS) -> list[int]:
    """Argmax decoding for one instance (batch of 1); ties go to the lowest id."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out: list[int] = []
    state, tok = init, bos
    with T.no_tape():
        for _ in range(max_len):
            state, logp, _ = decode_step(params, memory, state, [tok])
            tok = int(np.argmax(logp.data[0]))
            if tok == eos:
                break
            out.append(tok)
    return out


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    state: LstmState | None = field(default=None, repr=False)
    completed: bool = False
    step_logprobs: list[float] = field(default_factory=list, repr=False)

    def output(self, eos: int = EOS) -> list[int]:
        return self.tokens[:-1] if self.completed and self.tokens and self.tokens[-1] == eos else list(self.tokens)

    def normalized(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


def _expand(batch_state: LstmState, rows: np.ndarray) -> LstmState:
    return LstmState(T.Tensor(batch_state.cell.data[rows]), T.Tensor(batch_state.hidden.data[rows]))


def beam_search(params: DecoderParams, memory, init: LstmState, beam: int, max_len: int,
                bos: int = BOS, eos: int = EOS, length_normalize: bool = False) -> list[Hypothesis]:
    """Beam search for one instance.

    Each step scores every (live hypothesis, token) pair and keeps the top
    ``beam`` by total log-probability, ties broken toward the lexicographically
    smaller token sequence.  Selected candidates ending in ``eos`` move to the
    finished pool.  Hypotheses still live at ``max_len`` join the pool
    unfinished.  Returns the pool best-first.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [Hypothesis([], 0.0, init)]
    pool: list[Hypothesis] = []
    with T.no_tape():
        for _ in range(max_len):
            prev = np.array([h.tokens[-1] if h.tokens else bos for h in live])
            state = LstmState(T.Tensor(np.concatenate([h.state.cell.data.reshape(1, -1) for h in live])),
                              T.Tensor(np.concatenate([h.state.hidden.data.reshape(1, -1) for h in live])))
            mem = None
            if memory is not None:
                mem = T.Tensor(np.repeat(memory.data[:1], len(live), axis=0))
            state, logp, _ = decode_step(params, mem, state, prev)
            lp = logp.data
            cands = []
            for i, h in enumerate(live):
                for tok in range(lp.shape[1]):
                    cands.append((-(h.logprob + lp[i, tok]), h.tokens + [tok], i, tok))
            cands.sort(key=lambda c: (c[0], c[1]))
            parents, live = live, []
            for neg, toks, i, tok in cands[:beam]:
                h = Hypothesis(toks, -neg, _expand(state, np.array([i])), tok == eos,
                               parents[i].step_logprobs + [float(lp[i, tok])])
                (pool if tok == eos else live).append(h)
            if not live:
                break
    pool.extend(live)
    key = (lambda h: (-h.normalized(), h.tokens)) if length_normalize else (lambda h: (-h.logprob, h.tokens))
    pool.sort(key=key)
    return pool
