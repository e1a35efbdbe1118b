"""Interaction ingestion, fixed-length sequences, splits and synthetic data.

Sequence files hold one sequence per line as space-separated decimal item
ids with explicit front padding, e.g. ``0 0 3 7 7 2``.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

PAD_ID = 0


class SequenceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ItemSequence:
    items: Tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(x) for x in self.items)
        object.__setattr__(self, "items", items)
        if any(x < 0 for x in items):
            raise ValueError("item ids must be non-negative")
        seen_item = False
        for x in items:
            if x != PAD_ID:
                seen_item = True
            elif seen_item:
                raise ValueError("padding must precede all items")

    @property
    def valid_len(self) -> int:
        return sum(1 for x in self.items if x != PAD_ID)

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def padded(cls, items: Sequence[int], length: int) -> "ItemSequence":
        if len(items) > length:
            raise ValueError(f"{len(items)} items do not fit in length {length}")
        return cls((PAD_ID,) * (length - len(items)) + tuple(items))


@dataclass
class DatasetSpec:
    L: int = 100
    l_min: int = 20
    min_item_count: int = 20
    ratios: Tuple[float, float, float] = (0.8, 0.02, 0.18)

    def __post_init__(self):
        if self.L < 1 or self.l_min < 1 or self.l_min > self.L:
            raise ValueError(f"need 1 <= l_min <= L, got l_min={self.l_min}, L={self.L}")
        _check_ratios(self.ratios)


def _check_ratios(ratios) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")


def as_array(sequences) -> np.ndarray:
    """(S, T) int64 array from ItemSequence objects, id lists or an array."""
    if isinstance(sequences, np.ndarray):
        return sequences.astype(np.int64, copy=False)
    rows = [getattr(s, "items", s) for s in sequences]
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def preprocess(events: Iterable[Tuple[object, object, object]], spec: DatasetSpec):
    """Turn (user, item, timestamp) events into padded sequences.

    Items seen fewer than ``spec.min_item_count`` times are dropped first.
    Each user's chronological history (stable for equal timestamps) is cut
    into consecutive windows of ``spec.L``; windows shorter than
    ``spec.l_min`` are discarded and the rest are front-padded.  Surviving
    items are re-indexed densely from 1 in order of first appearance.

    Returns (sequences, vocab) where vocab maps original item -> dense id.
    """
    events = list(events)
    counts = Counter(item for _, item, _ in events)
    per_user: Dict[object, List[Tuple[object, int, object]]] = defaultdict(list)
    for pos, (user, item, ts) in enumerate(events):
        if counts[item] >= spec.min_item_count:
            per_user[user].append((ts, pos, item))

    windows = []
    for user in per_user:
        history = [item for _, _, item in sorted(per_user[user], key=lambda e: (e[0], e[1]))]
        for start in range(0, len(history), spec.L):
            window = history[start : start + spec.L]
            if len(window) >= spec.l_min:
                windows.append(window)
    if not windows:
        raise ValueError("preprocess: no sequences left after filtering")

    vocab: Dict[object, int] = {}
    for window in windows:
        for item in window:
            if item not in vocab:
                vocab[item] = len(vocab) + 1
    sequences = [ItemSequence.padded([vocab[i] for i in w], spec.L) for w in windows]
    return sequences, vocab


def split_dataset(sequences: Sequence, ratios=(0.8, 0.02, 0.18), seed: int = 0):
    """Seeded shuffle then contiguous train/valid/test partition.

    Validation and test sizes are floored; the remainder goes to train.
    """
    _check_ratios(ratios)
    n = len(sequences)
    order = np.random.default_rng(seed).permutation(n)
    n_valid = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError(f"split of {n} sequences by {tuple(ratios)} leaves an empty partition")
    pick = lambda idx: [sequences[i] for i in idx]
    if isinstance(sequences, np.ndarray):
        pick = lambda idx: sequences[idx]
    return (
        pick(order[:n_train]),
        pick(order[n_train : n_train + n_valid]),
        pick(order[n_train + n_valid :]),
    )


def read_sequences(path) -> List[ItemSequence]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                ids = [int(tok) for tok in text.split()]
                out.append(ItemSequence(tuple(ids)))
            except ValueError as exc:
                raise SequenceFormatError(f"{path}:{lineno}: {exc}") from None
    lengths = {len(s) for s in out}
    if len(lengths) > 1:
        raise SequenceFormatError(f"{path}: sequences have differing lengths {sorted(lengths)}")
    return out


def write_sequences(path, sequences) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for seq in sequences:
            fh.write(" ".join(str(int(x)) for x in getattr(seq, "items", seq)) + "\n")
    return path


def read_events_csv(path) -> List[Tuple[str, str, float]]:
    """Read ``user,item,timestamp`` rows; a header row is skipped if present."""
    events = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 3:
                raise SequenceFormatError(f"{path}:{lineno}: expected user,item,timestamp")
            try:
                ts = float(row[2])
            except ValueError:
                if lineno == 1:
                    continue
                raise SequenceFormatError(f"{path}:{lineno}: bad timestamp {row[2]!r}") from None
            events.append((row[0].strip(), row[1].strip(), ts))
    return events


def write_vocab(path, vocab: Dict[object, int]) -> Path:
    path = Path(path)
    path.write_text(json.dumps({str(k): v for k, v in vocab.items()}, indent=1))
    return path


def markov_sequences(
    n_items: int,
    n_sequences: int,
    seq_len: int,
    seed: int = 0,
    *,
    noise: float = 0.02,
    window: int = 3,
    min_len=None,
) -> np.ndarray:
    """Seeded ring-drift Markov chain over items 1..n_items.

    With probability ``1 - noise`` the next item is the ring successor of the
    current one; otherwise it is drawn uniformly from the ``window`` items on
    either side.  Nearby items therefore share successors while distant ones
    do not.  Sequence lengths are uniform in [min_len, seq_len] (default: all
    full length) and front-padded.
    """
    if n_items < 2:
        raise ValueError("need at least two items")
    rng = np.random.default_rng(seed)
    min_len = seq_len if min_len is None else min_len
    if not 1 <= min_len <= seq_len:
        raise ValueError("need 1 <= min_len <= seq_len")
    offsets = np.array([d for d in range(-window, window + 1) if d != 0])
    out = np.zeros((n_sequences, seq_len), dtype=np.int64)
    for s in range(n_sequences):
        length = int(rng.integers(min_len, seq_len + 1))
        cur = int(rng.integers(0, n_items))
        row = [cur]
        for _ in range(length - 1):
            if rng.random() < noise:
                cur = (cur + int(rng.choice(offsets))) % n_items
            else:
                cur = (cur + 1) % n_items
            row.append(cur)
        out[s, seq_len - length :] = np.asarray(row) + 1
    return out
