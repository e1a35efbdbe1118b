import numpy as np
import pytest

from cmnrec.data import (
    DatasetSpec,
    ItemSequence,
    SequenceFormatError,
    as_array,
    markov_sequences,
    preprocess,
    read_events_csv,
    read_sequences,
    split_dataset,
    write_sequences,
)

SPEC = DatasetSpec(L=10, l_min=5, min_item_count=1, ratios=(0.8, 0.1, 0.1))


def _events(user, items, t0=0):
    return [(user, f"i{it}", t0 + k) for k, it in enumerate(items)]


def test_short_history_is_front_padded():
    seqs, vocab = preprocess(_events("u", range(7)), SPEC)
    assert len(seqs) == 1
    assert seqs[0].items[:3] == (0, 0, 0)
    assert seqs[0].items[3:] == (1, 2, 3, 4, 5, 6, 7)
    assert seqs[0].valid_len == 7


def test_history_below_minimum_is_dropped():
    with pytest.raises(ValueError, match="no sequences"):
        preprocess(_events("u", range(4)), SPEC)
    seqs, _ = preprocess(_events("u", range(4)) + _events("v", range(6)), SPEC)
    assert len(seqs) == 1


def test_long_history_is_windowed():
    seqs, _ = preprocess(_events("u", range(23)), SPEC)
    # windows of 10, 10 and 3; the last is below l_min
    assert [s.valid_len for s in seqs] == [10, 10]


def test_chronological_order_with_stable_ties():
    events = [("u", "b", 2), ("u", "a", 1), ("u", "c", 2), ("u", "d", 0), ("u", "e", 3)]
    seqs, vocab = preprocess(events, SPEC)
    inv = {v: k for k, v in vocab.items()}
    assert [inv[i] for i in seqs[0].items if i] == ["d", "a", "b", "c", "e"]


def test_rare_items_removed_before_windowing():
    events = _events("u", [1, 2, 1, 2, 1, 2, 3])
    spec = DatasetSpec(L=10, l_min=5, min_item_count=2, ratios=(0.8, 0.1, 0.1))
    seqs, vocab = preprocess(events, spec)
    assert "i3" not in vocab and seqs[0].valid_len == 6


def test_split_sizes_and_disjointness():
    seqs = [ItemSequence.padded([i + 1], 3) for i in range(100)]
    train, valid, test = split_dataset(seqs, (0.8, 0.02, 0.18), seed=0)
    assert (len(train), len(valid), len(test)) == (80, 2, 18)
    ids = [s.items[-1] for s in train + valid + test]
    assert sorted(ids) == list(range(1, 101))
    again = split_dataset(seqs, (0.8, 0.02, 0.18), seed=0)
    assert again[1] == valid


def test_split_rejects_empty_partition_and_bad_ratios():
    with pytest.raises(ValueError, match="empty"):
        split_dataset([ItemSequence((1,))] * 10, (0.8, 0.02, 0.18))
    with pytest.raises(ValueError):
        split_dataset([ItemSequence((1,))] * 10, (0.5, 0.2, 0.2))


def test_file_round_trip(tmp_path):
    seqs = [ItemSequence((0, 0, 3, 7)), ItemSequence((1, 2, 3, 4))]
    path = write_sequences(tmp_path / "s.txt", seqs)
    assert read_sequences(path) == seqs


def test_negative_id_reports_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 1 2\n1 -4 2\n")
    with pytest.raises(SequenceFormatError, match=r"bad.txt:2"):
        read_sequences(path)


def test_padding_after_items_rejected():
    with pytest.raises(ValueError, match="padding"):
        ItemSequence((1, 0, 2))


def test_ragged_file_rejected(tmp_path):
    path = tmp_path / "r.txt"
    path.write_text("1 2 3\n1 2\n")
    with pytest.raises(SequenceFormatError, match="differing"):
        read_sequences(path)


def test_events_csv_with_header(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("user,item,ts\nu1,a,3\nu1,b,4\n")
    assert read_events_csv(path) == [("u1", "a", 3.0), ("u1", "b", 4.0)]


def test_markov_generator_is_seeded_and_valid():
    a = markov_sequences(10, 20, 8, seed=1, min_len=3)
    b = markov_sequences(10, 20, 8, seed=1, min_len=3)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 10
    for row in a:
        ItemSequence(tuple(row))  # padding comes first
        assert np.count_nonzero(row) >= 3


def test_markov_generator_mostly_follows_successor():
    a = markov_sequences(10, 200, 10, seed=2, noise=0.0)
    assert np.all((a[:, 1:] - 1) % 10 == a[:, :-1] % 10)


def test_as_array():
    assert as_array([ItemSequence((0, 1)), ItemSequence((2, 3))]).tolist() == [[0, 1], [2, 3]]
    assert as_array([]).shape == (0, 0)
