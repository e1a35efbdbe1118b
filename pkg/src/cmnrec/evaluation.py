"""Top-N ranking metrics at the last position of each sequence."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricReport:
    n: int
    mrr: float
    hr: float
    ndcg: float
    count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["n", "mrr", "hr", "ndcg", "count"], lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow(asdict(self))
        return buf.getvalue()


def rank_of_target(scores, target: int) -> int:
    """1-based rank of ``target`` (scores[j] is item j + 1); ties count against it."""
    scores = np.asarray(scores, dtype=float)
    if not 1 <= target <= scores.shape[-1]:
        raise ValueError(f"target {target} outside 1..{scores.shape[-1]}")
    s = scores[target - 1]
    higher = int(np.sum(scores > s))
    ties = int(np.sum(scores == s)) - 1
    return 1 + higher + ties


def ranks_of_targets(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rank_of_target` over rows of ``scores``."""
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets)
    if targets.min() < 1 or targets.max() > scores.shape[-1]:
        raise ValueError("targets outside the item range")
    s = np.take_along_axis(scores, (targets - 1)[:, None], axis=1)
    return (scores >= s).sum(axis=1)


def metrics_at_n(rank: int, n: int):
    """(reciprocal rank, hit, dcg) contribution of one ranked target."""
    if rank < 1 or n < 1:
        raise ValueError("rank and n must be >= 1")
    if rank > n:
        return 0.0, 0.0, 0.0
    return 1.0 / rank, 1.0, 1.0 / math.log2(rank + 1)


def evaluate(model, sequences, n: int = 5) -> MetricReport:
    """Mean MRR/HR/NDCG@n predicting each sequence's last item from its prefix.

    ``model`` needs a ``final_scores(ids) -> (B, I)`` method.
    """
    from .data import as_array

    data = as_array(sequences)
    if len(data) == 0:
        raise ValueError("evaluate: empty sequence set")
    contributions = []
    batch = 256
    for start in range(0, len(data), batch):
        chunk = data[start : start + batch]
        ranks = ranks_of_targets(model.final_scores(chunk), chunk[:, -1])
        contributions.extend(metrics_at_n(int(rank), n) for rank in ranks)
    # fsum keeps the means independent of sequence order
    mrr, hr, ndcg = (math.fsum(col) / len(data) for col in zip(*contributions))
    return MetricReport(n=n, mrr=mrr, hr=hr, ndcg=ndcg, count=len(data))


class PopularityRecommender:
    """Scores every item by its frequency in the training sequences."""

    def __init__(self, train_sequences, n_items: int):
        from .data import as_array

        data = as_array(train_sequences)
        counts = np.bincount(data[data > 0].ravel(), minlength=n_items + 1)[1:]
        self.scores = counts.astype(float)

    def final_scores(self, ids) -> np.ndarray:
        ids = np.atleast_2d(ids)
        return np.tile(self.scores, (len(ids), 1))
