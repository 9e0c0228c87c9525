"""Single-layer LSTM cell, token embeddings, and output projection.

Gate layout in the packed weight matrices is [input, forget, output, cell]
along the first axis. All tensors are batched: vectors are rows of
[B x dim] matrices, so a single example is just B = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import ParameterStore, Tensor


@dataclass
class LstmParams:
    """Packed recurrent parameters: W_x [4H x D], W_h [4H x H], bias [4H]."""

    input_weight: Tensor
    hidden_weight: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.hidden_weight.shape[1]

    @property
    def input_size(self) -> int:
        return self.input_weight.shape[1]


@dataclass
class LstmState:
    h: Tensor  # [B x H]
    c: Tensor  # [B x H]


def init_lstm_params(store: ParameterStore, prefix: str, input_size: int,
                     hidden_size: int, group: str = "main") -> LstmParams:
    """uniform(-0.08, 0.08) weights; zero biases except forget gate at 1.0."""
    wx = store.add(f"{prefix}.input_weight", (4 * hidden_size, input_size), group=group)
    wh = store.add(f"{prefix}.hidden_weight", (4 * hidden_size, hidden_size), group=group)
    b = store.add(f"{prefix}.bias", (4 * hidden_size,), init="zeros", group=group)
    b.data[hidden_size:2 * hidden_size] = 1.0
    return LstmParams(input_weight=wx, hidden_weight=wh, bias=b)


def zero_state(hidden_size: int, batch: int = 1) -> LstmState:
    return LstmState(
        h=Tensor(np.zeros((batch, hidden_size))),
        c=Tensor(np.zeros((batch, hidden_size))),
    )


def lstm_step(params: LstmParams, state: LstmState, x: Tensor) -> LstmState:
    """One cell update: gates from W_x x + W_h h + b, then the usual carry.

    i, f, o pass through sigmoid and g through tanh; c' = f*c + i*g and
    h' = o * tanh(c'), which keeps every |h'| strictly below 1.
    """
    h, c = state.h, state.c
    hsz = params.hidden_size
    pre = nm.add(
        nm.add(nm.matmul(x, nm.transpose(params.input_weight)),
               nm.matmul(h, nm.transpose(params.hidden_weight))),
        params.bias,
    )
    i = nm.sigmoid(nm.slice_cols(pre, 0, hsz))
    f = nm.sigmoid(nm.slice_cols(pre, hsz, 2 * hsz))
    o = nm.sigmoid(nm.slice_cols(pre, 2 * hsz, 3 * hsz))
    g = nm.tanh(nm.slice_cols(pre, 3 * hsz, 4 * hsz))
    c_new = nm.add(nm.elementwise_mul(f, c), nm.elementwise_mul(i, g))
    h_new = nm.elementwise_mul(o, nm.tanh(c_new))
    return LstmState(h=h_new, c=c_new)


def unroll(params: LstmParams, inputs: list[Tensor],
           initial: LstmState | None = None) -> list[LstmState]:
    """Apply lstm_step over `inputs` from the zero state; returns all states."""
    if not inputs:
        return []
    batch = inputs[0].shape[0]
    state = initial if initial is not None else zero_state(params.hidden_size, batch)
    states = []
    for x in inputs:
        state = lstm_step(params, state, x)
        states.append(state)
    return states


def project(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine output layer: logits [B x K] from hidden rows [B x H]."""
    return nm.add(nm.matmul(h, nm.transpose(weight)), bias)
