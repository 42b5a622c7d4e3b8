"""Encoders: unidirectional / bidirectional LSTM over tokens, and feature grids.

Everything is batched.  Token input is a (batch, time) id array plus lengths;
positions past a sequence's length are padding and are masked downstream.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import LstmParams, LstmState, lstm_step, masked_update
from .tensor import DimensionError, Tensor


@dataclass
class EncoderOutput:
    context: Tensor      # (B, h)       the vector c
    states: Tensor       # (B, T_x, h)  the set H
    mask: np.ndarray     # (B, T_x)     1 for real positions

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)

    def state_list(self, b: int = 0) -> list[np.ndarray]:
        return [self.states.data[b, t] for t in range(int(self.lengths[b]))]


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids, mask)."""
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ValueError("cannot encode an empty sequence")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for b, s in enumerate(seqs):
        ids[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return ids, mask


def _as_batch(tokens, mask):
    if mask is None:
        if isinstance(tokens, np.ndarray) and tokens.ndim == 2:
            return tokens, np.ones(tokens.shape)
        if len(tokens) and np.ndim(tokens[0]) == 0:
            tokens = [list(tokens)]
        return pad_batch(tokens)
    return np.asarray(tokens), np.asarray(mask, dtype=float)


def _run_lstm(params: LstmParams, embeddings: Tensor, ids: np.ndarray, mask: np.ndarray):
    B, Tx = ids.shape
    state = LstmState.zeros(params.hidden_dim, B, dtype=embeddings.dtype)
    hiddens = []
    ragged = not mask.all()
    for t in range(Tx):
        x = T.embed(embeddings, ids[:, t])
        new = lstm_step(params, x, state)
        state = masked_update(new, state, mask[:, t]) if ragged else new
        hiddens.append(state.hidden)
    return hiddens, state


def encode_rnn(params: LstmParams, embeddings: Tensor, tokens, mask=None) -> EncoderOutput:
    """h_t = LSTM(x_t, h_{t-1}) from a zero state; c = h_{T_x}."""
    ids, mask = _as_batch(tokens, mask)
    if ids.shape[1] == 0:
        raise ValueError("cannot encode an empty sequence")
    hiddens, final = _run_lstm(params, embeddings, ids, mask)
    return EncoderOutput(final.hidden, T.stack(hiddens, axis=1), mask)


def _reverse_index(mask: np.ndarray):
    """Index arrays mapping each position to its mirror inside the sequence."""
    B, Tx = mask.shape
    lengths = mask.sum(axis=1).astype(int)
    t = np.arange(Tx)[None, :]
    rev = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    return np.broadcast_to(np.arange(B)[:, None], (B, Tx)), rev


def encode_bidir(fwd: LstmParams, bwd: LstmParams, projection: tuple[Tensor, Tensor],
                 embeddings: Tensor, tokens, mask=None) -> EncoderOutput:
    """Both directions, concatenated per position and projected to hidden_dim."""
    ids, mask = _as_batch(tokens, mask)
    rows, rev = _reverse_index(mask)
    f_hidden, f_final = _run_lstm(fwd, embeddings, ids, mask)
    b_hidden, b_final = _run_lstm(bwd, embeddings, ids[rows, rev], mask)
    f_states = T.stack(f_hidden, axis=1)
    b_states = T.index(T.stack(b_hidden, axis=1), (rows, rev))
    W, b = projection
    states = T.add(T.matmul(T.concat([f_states, b_states], axis=-1), W), b)
    context = T.add(T.matmul(T.concat([f_final.hidden, b_final.hidden], axis=-1), W), b)
    return EncoderOutput(context, states, mask)


# ------------------------------------------------------------------ features

@dataclass
class FeatureGrid:
    values: np.ndarray              # (rows, dim)
    context: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("feature grid needs at least one row")
        if self.context is not None:
            self.context = np.asarray(self.context, dtype=np.float64).reshape(-1)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_feature_grid(path, grid: FeatureGrid) -> None:
    lines = [f"{grid.rows} {grid.dim} {int(grid.context is not None)}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in grid.values]
    if grid.context is not None:
        lines.append(" ".join(repr(float(v)) for v in grid.context))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_feature_grid(path) -> FeatureGrid:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty feature grid file")
    try:
        rows, dim, has_ctx = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from exc
    if rows < 1 or dim < 1 or has_ctx not in (0, 1):
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    if len(lines) != 1 + rows + has_ctx:
        raise ValueError(f"{path}: expected {rows + has_ctx} data lines, found {len(lines) - 1}")
    values = []
    for k, line in enumerate(lines[1:1 + rows]):
        row = [float(v) for v in line.split()]
        if len(row) != dim:
            raise ValueError(f"{path}: row {k} has {len(row)} values, expected {dim}")
        values.append(row)
    context = [float(v) for v in lines[-1].split()] if has_ctx else None
    if context is not None and not context:
        raise ValueError(f"{path}: empty context line")
    return FeatureGrid(np.array(values), None if context is None else np.array(context))


def encode_features(grids: Sequence[FeatureGrid], state_proj: tuple[Tensor, Tensor] | None = None,
                    context_proj: tuple[Tensor, Tensor] | None = None, dtype=np.float64) -> EncoderOutput:
    """Grid rows become H; c is the stored context, else the mean row.

    ``state_proj`` maps rows to hidden_dim (and a mean-row context with them);
    ``context_proj`` maps a stored context of a different width.
    """
    dims = {g.dim for g in grids}
    if len(dims) != 1:
        raise DimensionError(f"mixed feature dims in batch: {sorted(dims)}")
    B, width = len(grids), max(g.rows for g in grids)
    vals = np.zeros((B, width, grids[0].dim), dtype=dtype)
    mask = np.zeros((B, width))
    for b, g in enumerate(grids):
        vals[b, :g.rows] = g.values
        mask[b, :g.rows] = 1.0
    states = Tensor(vals)
    if state_proj is not None:
        states = T.add(T.matmul(states, state_proj[0]), state_proj[1])
    contexts = []
    for b, g in enumerate(grids):
        if g.context is not None:
            c = Tensor(g.context.astype(dtype))
            if context_proj is not None:
                c = T.add(T.matmul(c, context_proj[0]), context_proj[1])
        else:
            c = T.mean(T.index(states, (b, slice(0, g.rows))), axis=0)
        contexts.append(c)
    context = T.stack(contexts, axis=0)
    if context.shape[-1] != states.shape[-1]:
        raise DimensionError(f"context dim {context.shape[-1]} != state dim {states.shape[-1]}")
    return EncoderOutput(context, states, mask)


def load_feature_grid(path, state_proj=None, context_proj=None) -> EncoderOutput:
    return encode_features([read_feature_grid(path)], state_proj, context_proj)
