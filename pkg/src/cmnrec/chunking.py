"""Chunk schedules, the chunk area buffer, and attention compression."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Tuple

from . import autodiff as ad
from .autodiff import Tensor


class ScheduleError(ValueError):
    pass


class ChunkRule(str, enum.Enum):
    PEC = "pec"
    TSC = "tsc"
    EXC = "exc"
    EVERY_STEP = "every-step"

    @classmethod
    def parse(cls, value) -> "ChunkRule":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for rule in cls:
            if rule.value == key or rule.name.lower().replace("_", "-") == key:
                return rule
        raise ValueError(f"unknown chunk rule {value!r}; expected one of pec, tsc, exc, every-step")


@dataclass(frozen=True)
class ChunkSchedule:
    T: int
    M: int
    rule: ChunkRule
    times: Tuple[int, ...]
    _lookup: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_lookup", frozenset(self.times))

    def __contains__(self, t: int) -> bool:
        return t in self._lookup

    def __len__(self) -> int:
        return len(self.times)

    def gaps(self) -> List[int]:
        """Chunk lengths in sequence order (first chunk starts at step 1)."""
        prev = 0
        out = []
        for t in self.times:
            out.append(t - prev)
            prev = t
        return out


def tsc_step(T: int, M: int) -> int:
    """Proportional step length floor(2T / (M(M+1)))."""
    return (2 * T) // (M * (M + 1))


def make_schedule(T: int, M: int, rule) -> ChunkSchedule:
    """Chunk time steps (1-based, ending at T) for ``rule``.

    PEC counts back from T in strides of floor(T/M); TSC counts back with gaps
    g, 2g, 3g, ... where g = floor(2T/(M(M+1))); EXC puts one big chunk first
    followed by M-1 single-step chunks.  In PEC and TSC the first chunk
    absorbs the remainder.
    """
    rule = ChunkRule.parse(rule)
    if int(T) != T or T < 1:
        raise ScheduleError(f"sequence length T must be a positive integer, got {T}")
    T = int(T)
    if rule is ChunkRule.EVERY_STEP:
        return ChunkSchedule(T, T, rule, tuple(range(1, T + 1)))
    if int(M) != M or M < 1:
        raise ScheduleError(f"slot count M must be a positive integer, got {M}")
    M = int(M)
    if M > T:
        raise ScheduleError(f"slot count M={M} exceeds sequence length T={T}")

    if rule is ChunkRule.PEC:
        G = T // M
        times = [T - j * G for j in range(M - 1, -1, -1)]
    elif rule is ChunkRule.TSC:
        g = tsc_step(T, M)
        if g == 0:
            raise ScheduleError(
                f"TSC schedule is degenerate for T={T}, M={M}: step length "
                f"floor(2T/(M(M+1))) is 0; use M <= {_max_tsc_slots(T)}"
            )
        times = [T - g * r * (r + 1) // 2 for r in range(M - 1, -1, -1)]
    else:
        times = list(range(T - M + 1, T + 1))

    if times[0] < 1:
        raise ScheduleError(f"{rule.value} schedule produced non-positive time {times[0]}")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScheduleError(f"{rule.value} schedule has duplicate or unordered times {times}")
    return ChunkSchedule(T, M, rule, tuple(times))


def _max_tsc_slots(T: int) -> int:
    M = 1
    while (M + 1) * (M + 2) <= 2 * T:
        M += 1
    return M


class ChunkArea:
    """Buffer of hidden states accumulated between chunk times."""

    def __init__(self):
        self._items: List[Tensor] = []

    def push(self, h: Tensor) -> "ChunkArea":
        self._items.append(h)
        return self

    def clear(self) -> "ChunkArea":
        self._items = []
        return self

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def items(self) -> List[Tensor]:
        return list(self._items)


@dataclass
class AttentionParams:
    W: Tensor  # (h, b) projection of buffered states
    U: Tensor  # (m, b) projection of the previous read vector
    w: Tensor  # (b, 1) scoring vector


def _weights(C: Tensor, r_prev, params: AttentionParams) -> Tensor:
    lead, l = C.shape[:-2], C.shape[-2]
    proj = ad.matmul(C, params.W)
    if r_prev is not None:
        r = ad.reshape(r_prev, lead + (1, r_prev.shape[-1]))
        proj = proj + ad.matmul(r, params.U)
    scores = ad.matmul(ad.tanh(proj), params.w)  # (..., l, 1)
    return ad.softmax(ad.reshape(scores, lead + (l,)))


def _stacked(area: ChunkArea) -> Tensor:
    if len(area) == 0:
        raise ValueError("attend: chunk area is empty")
    return ad.stack(area.items, axis=-2)  # (..., l, h)


def attention_weights(area: ChunkArea, r_prev, params: AttentionParams) -> Tensor:
    """softmax_j( w . tanh(W c_j + U r_prev) ) over the buffered states."""
    return _weights(_stacked(area), r_prev, params)


def attend(area: ChunkArea, r_prev, params: AttentionParams) -> Tensor:
    """Attention-weighted combination of the states in ``area``.

    Accepts unbatched (h,) states or batched (B, h) states; ``r_prev`` is
    the matching (m,) or (B, m) read vector.
    """
    C = _stacked(area)
    lead, l = C.shape[:-2], C.shape[-2]
    weights = _weights(C, r_prev, params)
    mix = ad.matmul(ad.reshape(weights, lead + (1, l)), C)
    return ad.reshape(mix, lead + (C.shape[-1],))
