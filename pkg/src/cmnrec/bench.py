"""Analytic cost model and wall-clock benchmarks for chunked vs every-step memory."""
from __future__ import annotations

import csv
import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .model import CmnRec, ModelConfig
from .training import AdamState, TrainConfig, train_epoch

# Closed form quoted alongside the per-step costs for h = 2k.  Substituting
# the per-step costs gives 11/(3 + 8M/T) instead, so reports carry both.
QUOTED_CLOSED_FORM = "8/(3+8M/T)"
DERIVED_CLOSED_FORM = "11/(3+8M/T)"


@dataclass(frozen=True)
class CostModel:
    h: int
    k: int
    T: int
    M: int

    def __post_init__(self):
        for name in ("h", "k", "T", "M"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def controller_cost(self) -> int:
        return self.h * self.h + self.k * self.h

    @property
    def memory_cost(self) -> int:
        return 4 * self.h * self.h


@dataclass(frozen=True)
class AnalyticCosts:
    mnr_total: int
    cmn_total: int
    ratio: float

    @property
    def exact_ratio(self) -> Fraction:
        return Fraction(self.mnr_total, self.cmn_total)


def analytic_costs(cm: CostModel) -> AnalyticCosts:
    """Every-step total (controller + memory each step) vs chunked total (memory M times)."""
    if cm.M > cm.T:
        raise ValueError(f"M={cm.M} exceeds T={cm.T}")
    mnr = (cm.controller_cost + cm.memory_cost) * cm.T
    cmn = cm.controller_cost * cm.T + cm.memory_cost * cm.M
    return AnalyticCosts(mnr, cmn, mnr / cmn)


def h2k_ratio(M: int, T: int) -> float:
    return 11.0 / (3.0 + 8.0 * M / T)


def cost_model_note(M: int, T: int) -> dict:
    return {
        "quoted_closed_form": QUOTED_CLOSED_FORM,
        "quoted_value": 8.0 / (3.0 + 8.0 * M / T),
        "derived_closed_form": DERIVED_CLOSED_FORM,
        "derived_value": h2k_ratio(M, T),
        "note": "for h=2k the per-step costs (h^2+kh, 4h^2) give 11/(3+8M/T); "
        "the quoted 8/(3+8M/T) is inconsistent with them and falls below 1 at M=T",
    }


@dataclass
class TimingReport:
    label: str
    variant: str
    rule: str
    M: int
    T: int
    epochs_timed: int
    epoch_seconds: List[float]
    mean_epoch_seconds: float
    std_epoch_seconds: float
    median_epoch_seconds: float
    inference_us_per_sequence: float
    memory_ops_per_sequence: int
    memory_ops_per_epoch: int
    environment: Dict[str, object] = field(default_factory=dict)


def environment_info(threads: int) -> Dict[str, object]:
    cpu = platform.processor() or ""
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu": cpu,
        "threads": threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def bench_threads(default: int = 1) -> int:
    value = os.environ.get("CMNREC_THREADS")
    return max(1, int(value)) if value else default


def time_epoch(
    config: ModelConfig,
    data: np.ndarray,
    train_config: TrainConfig,
    repetitions: int = 5,
    label: Optional[str] = None,
    threads: Optional[int] = None,
) -> TimingReport:
    """Time full training epochs (after one warm-up epoch) and forward-only inference.

    Each repetition is one epoch over ``data`` from the same model, so the
    compared variants see identical work apart from memory scheduling.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3 to report a spread")
    threads = bench_threads() if threads is None else threads
    data = np.asarray(data, dtype=np.int64)
    model = CmnRec(config, seed=train_config.seed)
    rng = np.random.default_rng(train_config.seed)
    state = AdamState.zeros_like(model.params)

    with threadpool_limits(limits=threads):
        counters = model.forward(data[:1]).counters
        train_epoch(model, data, train_config, state, rng)  # warm-up
        epochs = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            train_epoch(model, data, train_config, state, rng)
            epochs.append(time.perf_counter() - t0)
        infer = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for start in range(0, len(data), train_config.batch_size):
                model.forward(data[start : start + train_config.batch_size])
            infer.append(time.perf_counter() - t0)

    # one memory access = one write followed by one read
    ops = counters.memory_writes
    return TimingReport(
        label=label or f"{config.variant.value}-{config.rule.value}",
        variant=config.variant.value,
        rule=config.rule.value,
        M=config.n_slots,
        T=config.seq_len,
        epochs_timed=repetitions,
        epoch_seconds=epochs,
        mean_epoch_seconds=statistics.fmean(epochs),
        std_epoch_seconds=statistics.stdev(epochs),
        median_epoch_seconds=statistics.median(epochs),
        inference_us_per_sequence=statistics.median(infer) / len(data) * 1e6,
        memory_ops_per_sequence=ops,
        memory_ops_per_epoch=ops * len(data),
        environment=environment_info(threads),
    )


def speedup_report(reports: List[TimingReport], baseline: str) -> List[dict]:
    """Per-report multiples of the baseline's median epoch and inference time."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    by_label = {r.label: r for r in reports}
    if baseline not in by_label:
        raise KeyError(f"baseline {baseline!r} not among reports {sorted(by_label)}")
    base = by_label[baseline]
    rows = []
    for r in reports:
        rows.append(
            {
                "label": r.label,
                "variant": r.variant,
                "rule": r.rule,
                "M": r.M,
                "train_speedup": base.median_epoch_seconds / r.median_epoch_seconds,
                "inference_speedup": base.inference_us_per_sequence / r.inference_us_per_sequence,
                "memory_ops_per_sequence": r.memory_ops_per_sequence,
            }
        )
    return rows


def write_speedup_csv(path, rows: List[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_bench_json(path, reports: List[TimingReport], rows: List[dict], extra: Optional[dict] = None) -> Path:
    path = Path(path)
    payload = {"reports": [asdict(r) for r in reports], "speedup": rows}
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2))
    return path
