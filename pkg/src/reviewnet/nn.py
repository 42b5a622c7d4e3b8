"""LSTM cell, attention, linear and embedding layers.

Every function accepts either a single vector or a batch with a leading
batch axis; the math is the same.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

INIT_SCALE = 0.08
MASK_FILL = -1e9


class ParamInit:
    """Seeded uniform(-0.08, 0.08) weights, zero biases."""

    def __init__(self, seed: int = 0, dtype=np.float64, scale: float = INIT_SCALE):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.scale = scale

    def weight(self, *shape, name=None) -> Tensor:
        return Tensor(self.rng.uniform(-self.scale, self.scale, size=shape).astype(self.dtype), name=name)

    def zeros(self, *shape, name=None) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self.dtype), name=name)


@dataclass
class LstmParams:
    """Gate weights packed as [input | forget | output | candidate] columns."""
    w_x: Tensor  # input_dim x 4*hidden
    w_h: Tensor  # hidden x 4*hidden
    b: Tensor    # 4*hidden

    @classmethod
    def init(cls, init: ParamInit, input_dim: int, hidden_dim: int, name: str = "lstm"):
        return cls(init.weight(input_dim, 4 * hidden_dim, name=f"{name}.w_x"),
                   init.weight(hidden_dim, 4 * hidden_dim, name=f"{name}.w_h"),
                   init.zeros(4 * hidden_dim, name=f"{name}.b"))

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}


@dataclass
class LstmState:
    cell: Tensor
    hidden: Tensor

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None, dtype=np.float64):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(Tensor(np.zeros(shape, dtype)), Tensor(np.zeros(shape, dtype)))


def lstm_step(params: LstmParams, x, state: LstmState) -> LstmState:
    n = params.hidden_dim
    if T._data(x).shape[-1] != params.input_dim:
        raise DimensionError(f"lstm input dim {T._data(x).shape[-1]} != {params.input_dim}")
    if state.hidden.shape[-1] != n or state.cell.shape[-1] != n:
        raise DimensionError("lstm state dim does not match hidden_dim")
    pre = T.add(T.add(T.matmul(x, params.w_x), T.matmul(state.hidden, params.w_h)), params.b)
    i = T.sigmoid(T.index(pre, (..., slice(0, n))))
    f = T.sigmoid(T.index(pre, (..., slice(n, 2 * n))))
    o = T.sigmoid(T.index(pre, (..., slice(2 * n, 3 * n))))
    g = T.tanh(T.index(pre, (..., slice(3 * n, 4 * n))))
    cell = T.add(T.mul(f, state.cell), T.mul(i, g))
    hidden = T.mul(o, T.tanh(cell))
    return LstmState(cell, hidden)


def masked_update(new: LstmState, old: LstmState, mask: np.ndarray | None) -> LstmState:
    """Keep ``old`` where ``mask`` (batch,) is 0; used past a sequence's end."""
    if mask is None:
        return new
    m = mask[:, None]
    return LstmState(T.add(T.mul(new.cell, m), T.mul(old.cell, 1.0 - m)),
                     T.add(T.mul(new.hidden, m), T.mul(old.hidden, 1.0 - m)))


def linear(W, b, x) -> Tensor:
    """``x @ W + b``; ``b`` may be None."""
    if T._data(x).shape[-1] != W.shape[0]:
        raise DimensionError(f"linear input dim {T._data(x).shape[-1]} != {W.shape[0]}")
    out = T.matmul(x, W)
    if b is not None:
        if b.shape[-1] != W.shape[1]:
            raise DimensionError("bias does not match output dim")
        out = T.add(out, b)
    return out


def embed(table, ids) -> Tensor:
    return T.embed(table, ids)


@dataclass
class AttentionScorer:
    """Scores a state against a query.

    ``dot`` is the inner product; ``mlp`` is ``v . tanh(W_s h + W_q q + b) + c``,
    i.e. a one-hidden-layer MLP on the concatenation [h; q].
    """
    variant: str = "mlp"
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, init: ParamInit, variant: str, state_dim: int, query_dim: int,
             hidden: int = 512, name: str = "att"):
        if variant == "dot":
            if state_dim != query_dim:
                raise DimensionError("dot attention needs equal state and query dims")
            return cls("dot", {})
        if variant != "mlp":
            raise ValueError(f"unknown attention variant {variant!r}")
        if hidden < 1:
            raise ValueError("mlp attention hidden size must be >= 1")
        return cls("mlp", {
            "w_state": init.weight(state_dim, hidden, name=f"{name}.w_state"),
            "w_query": init.weight(query_dim, hidden, name=f"{name}.w_query"),
            "b": init.zeros(hidden, name=f"{name}.b"),
            "v": init.weight(hidden, 1, name=f"{name}.v"),
            "c": init.zeros(1, name=f"{name}.c"),
        })

    def tensors(self) -> dict[str, Tensor]:
        return dict(self.params)

    def scores(self, states: Tensor, query) -> Tensor:
        """states: (..., n, d); query: (..., q) -> (..., n)."""
        if self.variant == "dot":
            if states.shape[-1] != T._data(query).shape[-1]:
                raise DimensionError("dot attention operand dims differ")
            q = T.reshape(query, T._data(query).shape[:-1] + (1, T._data(query).shape[-1]))
            return T.sum(T.mul(states, q), axis=-1)
        p = self.params
        hs = T.matmul(states, p["w_state"])
        hq = T.matmul(query, p["w_query"])
        hq = T.reshape(hq, hq.shape[:-1] + (1, hq.shape[-1]))
        hid = T.tanh(T.add(T.add(hs, hq), p["b"]))
        out = T.add(T.matmul(hid, p["v"]), p["c"])
        return T.reshape(out, out.shape[:-1])


def attend(scorer: AttentionScorer, states, query, mask: np.ndarray | None = None):
    """Softmax-normalized attention.

    ``states`` is a list of vectors or a stacked (..., n, d) tensor.  Returns
    ``(weights, context)``; masked-out positions get weight exactly 0.
    """
    if isinstance(states, (list, tuple)):
        if not states:
            raise DimensionError("attend over an empty state set")
        states = T.stack(states, axis=0)
    if states.shape[-2] < 1:
        raise DimensionError("attend over an empty state set")
    scores = scorer.scores(states, query)
    if mask is not None:
        scores = T.add(scores, np.where(mask > 0, 0.0, MASK_FILL))
    weights = T.softmax(scores, axis=-1)
    w = T.reshape(weights, weights.shape + (1,))
    context = T.sum(T.mul(w, states), axis=-2)
    return weights, context


def lstm_param_count(params: LstmParams | Sequence[LstmParams]) -> int:
    if isinstance(params, LstmParams):
        params = [params]
    return int(np.sum([t.data.size for p in params for t in p.tensors().values()]))
