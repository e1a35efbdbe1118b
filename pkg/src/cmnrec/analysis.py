"""Diagnostics: position-wise embedding correlation and gradient contribution norms."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

COSINE_EPS = 1e-12


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v) + COSINE_EPS))


@dataclass
class CorrelationProfile:
    positions: List[int]  # 1-based
    mean_cosine: List[float]
    counts: List[int]

    def at(self, position: int) -> float:
        return self.mean_cosine[self.positions.index(position)]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "mean_cosine", "count"])
            w.writerows(zip(self.positions, self.mean_cosine, self.counts))
        return path


def position_correlation_profile(embeddings, sequences) -> CorrelationProfile:
    """Mean cosine between the item at each position and the final (target) item.

    Padding positions are skipped; positions with no items are omitted.
    """
    from .data import as_array

    emb = np.asarray(embeddings, dtype=float)
    data = as_array(sequences)
    if data.size == 0:
        raise ValueError("no sequences")
    T = data.shape[1]
    sums = np.zeros(T - 1)
    counts = np.zeros(T - 1, dtype=int)
    for row in data:
        target = emb[row[-1]]
        for i in range(T - 1):
            if row[i] != 0:
                sums[i] += cosine(emb[row[i]], target)
                counts[i] += 1
    keep = np.nonzero(counts)[0]
    return CorrelationProfile(
        positions=[int(i) + 1 for i in keep],
        mean_cosine=[float(sums[i] / counts[i]) for i in keep],
        counts=[int(counts[i]) for i in keep],
    )


@dataclass
class ContributionSeries:
    q: List[float]  # |d s(h_T) / d v_i|, i = 1..T-1
    p: List[float]  # |d s(h_T) / d h_i|
    scalarize: str

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "q_input", "p_hidden"])
            for i, (q, p) in enumerate(zip(self.q, self.p), 1):
                w.writerow([i, q, p])
        return path


def _scalar(h_last: Tensor, scalarize: str, component=None) -> Tensor:
    if scalarize == "sum":
        return ad.sum_(h_last)
    if scalarize == "max":
        return ad.sum_(ad.slice_(h_last, component, component + 1))
    raise ValueError(f"unknown scalarization {scalarize!r}; expected 'sum' or 'max'")


def _prepare(model, sequence):
    ids = np.asarray(getattr(sequence, "items", sequence), dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("expected a single sequence")
    if np.count_nonzero(ids) < 2:
        raise ValueError("contribution analysis needs at least two valid items")
    emb = model.params["embedding"]
    vectors = [np.where(i == 0, 0.0, emb[i]) for i in ids]
    return ids, vectors


def contribution_norms(model, sequence, scalarize: str = "sum") -> ContributionSeries:
    """Gradient norms of the scalarized final hidden state w.r.t. each input
    embedding v_i and each hidden state h_i, from one reverse pass."""
    ids, vectors = _prepare(model, sequence)
    T = len(ids)
    tape = Tape()
    bound = model.bind(None)
    inputs = [tape.leaf(v[None, :], f"v{t}") for t, v in enumerate(vectors, 1)]
    res = model.forward(ids[None, :], tape, bound, inputs=inputs)
    h_last = ad.reshape(res.hidden[-1], (res.hidden[-1].shape[-1],))
    component = int(np.argmax(h_last.value)) if scalarize == "max" else None
    s = _scalar(h_last, scalarize, component)
    wrt = inputs[: T - 1] + res.hidden[: T - 1]
    grads = ad.backward(s, wrt)
    q = [float(np.linalg.norm(grads[t])) for t in inputs[: T - 1]]
    p = [float(np.linalg.norm(grads[t])) for t in res.hidden[: T - 1]]
    return ContributionSeries(q=q, p=p, scalarize=scalarize)


def contribution_norms_fd(model, sequence, scalarize: str = "sum", eps: float = 1e-5) -> ContributionSeries:
    """Central-difference counterpart of :func:`contribution_norms` (forward passes only)."""
    ids, vectors = _prepare(model, sequence)
    T = len(ids)
    bound = model.bind(None)
    h_dim = model.config.hidden_dim

    base = model.forward(ids[None, :], None, bound, inputs=[Tensor(v[None, :]) for v in vectors])
    component = int(np.argmax(base.hidden[-1].value[0])) if scalarize == "max" else None

    def run(inputs, offsets=None) -> float:
        res = model.forward(ids[None, :], None, bound, inputs=[Tensor(v[None, :]) for v in inputs], hidden_offsets=offsets)
        h = res.hidden[-1].value[0]
        return float(h.sum() if scalarize == "sum" else h[component])

    q = []
    for i in range(T - 1):
        def f(p, i=i):
            vs = list(vectors)
            vs[i] = p["v"]
            return run(vs)

        g = ad.finite_difference_gradient(f, {"v": vectors[i]}, eps)["v"]
        q.append(float(np.linalg.norm(g)))
    p_norms = []
    for i in range(T - 1):
        def f(p, i=i):
            return run(vectors, {i + 1: p["d"]})

        g = ad.finite_difference_gradient(f, {"d": np.zeros(h_dim)}, eps)["d"]
        p_norms.append(float(np.linalg.norm(g)))
    return ContributionSeries(q=q, p=p_norms, scalarize=scalarize)
