"""Item embedding lookup and the LSTM controller step."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_RANGE = 0.08
FORGET_BIAS = 1.0


@dataclass
class LstmParams:
    """Gate weights fused column-wise in the order forget, input, candidate, output.

    W maps the controller input [v ; r] (width k+m) and U the recurrent state
    (width h) to the four gate pre-activations (width 4h).
    """

    W: Tensor  # (k + m, 4h)
    U: Tensor  # (h, 4h)
    b: Tensor  # (4h,)

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class ControllerState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden_dim: int, batch: Optional[int] = None) -> "ControllerState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def init_embedding(n_items: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    table = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(n_items + 1, dim))
    table[0] = 0.0
    return table


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> dict:
    b = np.zeros(4 * hidden_dim)
    b[:hidden_dim] = FORGET_BIAS
    return {
        "W": rng.uniform(-INIT_RANGE, INIT_RANGE, size=(input_dim, 4 * hidden_dim)),
        "U": rng.uniform(-INIT_RANGE, INIT_RANGE, size=(hidden_dim, 4 * hidden_dim)),
        "b": b,
    }


def embed(item_id, table: Tensor) -> Tensor:
    """Row lookup; id 0 is the padding row and receives no gradient."""
    ids = np.asarray(item_id)
    if ids.dtype.kind not in "iu":
        raise TypeError(f"item ids must be integers, got {ids.dtype}")
    n = table.shape[0] - 1
    if ids.size and (ids.min() < 0 or ids.max() > n):
        raise IndexError(f"item id outside [0, {n}]")
    return ad.gather(table, ids, padding_idx=0)


def controller_step(
    v: Tensor,
    r_prev: Optional[Tensor],
    state: ControllerState,
    params: LstmParams,
    recurrent_override: Optional[Tensor] = None,
) -> Tuple[Tensor, ControllerState]:
    """One LSTM step on input [v ; r_prev]; returns (output, new state).

    The output gate uses tanh and the output equals the new hidden state.
    ``recurrent_override`` replaces ``state.h`` as the recurrent input while
    the cell state is carried over unchanged.  ``r_prev`` may be None for a
    controller without memory.
    """
    x = v if r_prev is None else ad.concat(v, r_prev)
    if x.shape[-1] != params.input_dim:
        raise ad.ShapeError(
            f"controller_step: input width {x.shape[-1]} does not match weights {params.W.shape}"
        )
    h_in = state.h if recurrent_override is None else recurrent_override
    if h_in.shape != state.c.shape:
        raise ad.ShapeError(f"controller_step: recurrent input {h_in.shape} vs cell {state.c.shape}")
    H = params.hidden_dim
    pre = ad.matmul(_as_row(x), params.W) + ad.matmul(_as_row(h_in), params.U) + params.b
    pre = ad.reshape(pre, x.shape[:-1] + (4 * H,))
    f = ad.sigmoid(ad.slice_(pre, 0, H))
    i = ad.sigmoid(ad.slice_(pre, H, 2 * H))
    z = ad.tanh(ad.slice_(pre, 2 * H, 3 * H))
    o = ad.tanh(ad.slice_(pre, 3 * H, 4 * H))
    c = f * state.c + i * z
    h = o * ad.tanh(c)
    return h, ControllerState(h, c)


def _as_row(x: Tensor) -> Tensor:
    return ad.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x
