import json
from fractions import Fraction

import numpy as np
import pytest

from cmnrec import ModelConfig
from cmnrec.bench import (
    CostModel,
    TimingReport,
    analytic_costs,
    bench_threads,
    cost_model_note,
    h2k_ratio,
    speedup_report,
    time_epoch,
    write_bench_json,
    write_speedup_csv,
)
from cmnrec.data import markov_sequences
from cmnrec.training import TrainConfig


def test_analytic_costs_small_case():
    c = analytic_costs(CostModel(h=2, k=1, T=10, M=2))
    assert c.mnr_total == (5 * 4 + 2) * 10
    assert c.cmn_total == (4 + 2) * 10 + 4 * 2 * 4
    assert c.exact_ratio == Fraction(220, 92)


def test_h2k_ratio_limits():
    assert h2k_ratio(1, 1) == pytest.approx(1.0)
    c = analytic_costs(CostModel(h=200, k=100, T=100_000, M=1))
    assert c.ratio == pytest.approx(11 / 3, rel=1e-3)


def test_cost_note_mentions_both_forms():
    note = cost_model_note(4, 100)
    assert note["quoted_value"] == pytest.approx(8 / 3.32)
    assert note["derived_value"] == pytest.approx(11 / 3.32)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(h=0, k=1, T=1, M=1)
    with pytest.raises(ValueError):
        analytic_costs(CostModel(h=1, k=1, T=2, M=3))


def _report(label, median, infer, ops=4):
    return TimingReport(label, "cmnrec", "tsc", 4, 100, 3, [median] * 3, median, 0.0, median, infer, ops, ops * 10)


def test_speedup_multiples():
    rows = speedup_report([_report("base", 3.0, 30.0), _report("fast", 1.0, 10.0)], "base")
    fast = next(r for r in rows if r["label"] == "fast")
    assert fast["train_speedup"] == pytest.approx(3.0)
    assert fast["inference_speedup"] == pytest.approx(3.0)
    with pytest.raises(KeyError):
        speedup_report([_report("a", 1, 1), _report("b", 1, 1)], "c")


def test_time_epoch_needs_three_repetitions():
    cfg = ModelConfig(n_items=5, seq_len=6, embed_dim=2, hidden_dim=2, n_slots=2, slot_dim=2, attn_dim=2)
    with pytest.raises(ValueError, match=">= 3"):
        time_epoch(cfg, markov_sequences(5, 4, 6), TrainConfig(), repetitions=2)


def test_time_epoch_small_run(tmp_path):
    cfg = ModelConfig(n_items=5, seq_len=6, embed_dim=2, hidden_dim=2, n_slots=2, slot_dim=2, attn_dim=2)
    data = markov_sequences(5, 8, 6)
    rep = time_epoch(cfg, data, TrainConfig(batch_size=4), repetitions=3, threads=1)
    assert rep.epochs_timed == 3 and len(rep.epoch_seconds) == 3
    assert rep.memory_ops_per_sequence == 2 and rep.memory_ops_per_epoch == 16
    assert rep.environment["threads"] == 1
    srmn = time_epoch(ModelConfig(**{**cfg.to_dict(), "variant": "srmn"}), data, TrainConfig(batch_size=4), 3, "srmn", 1)
    rows = speedup_report([srmn, rep], "srmn")
    write_speedup_csv(tmp_path / "s.csv", rows)
    write_bench_json(tmp_path / "b.json", [srmn, rep], rows, {"extra": 1})
    payload = json.loads((tmp_path / "b.json").read_text())
    assert payload["extra"] == 1 and len(payload["reports"]) == 2
    assert (tmp_path / "s.csv").read_text().startswith("label,")


def test_thread_env(monkeypatch):
    monkeypatch.delenv("CMNREC_THREADS", raising=False)
    assert bench_threads() == 1
    monkeypatch.setenv("CMNREC_THREADS", "3")
    assert bench_threads() == 3
