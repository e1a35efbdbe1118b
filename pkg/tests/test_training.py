import math

import numpy as np
import pytest

from cmnrec import CmnRec, ModelConfig
from cmnrec.autodiff import Tensor
from cmnrec.data import markov_sequences
from cmnrec.training import (
    HISTORY_FIELDS,
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    compute_gradients,
    masked_xent,
    train,
    train_epoch,
)


def test_uniform_logits_give_log_vocab():
    loss = masked_xent(Tensor(np.zeros((2, 3, 4))), np.array([[1, 2, 3], [4, 1, 2]]))
    assert float(loss.value) == pytest.approx(math.log(4))


def test_padding_targets_are_ignored():
    logits = np.zeros((1, 3, 2))
    logits[0, 0] = [100.0, -100.0]  # would be a huge loss for target 2
    loss = masked_xent(Tensor(logits), np.array([[0, 1, 2]]))
    assert float(loss.value) == pytest.approx(math.log(2))


def test_all_padding_targets_rejected():
    with pytest.raises(ValueError, match="padding"):
        masked_xent(Tensor(np.zeros((1, 2, 3))), np.array([[0, 0]]))


def test_adam_two_steps_by_hand():
    params = {"w": np.array([1.0])}
    cfg = TrainConfig(learning_rate=0.1)
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.array([2.0])}, state, cfg)
    # first bias-corrected step moves by lr * g / |g|
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8))
    adam_step(params, {"w": np.array([1.0])}, state, cfg)
    m = (0.9 * 0.1 * 2.0 + 0.1 * 1.0) / (1 - 0.9**2)
    v = (0.999 * 0.001 * 4.0 + 0.001 * 1.0) / (1 - 0.999**2)
    assert params["w"][0] == pytest.approx(0.9 - 0.1 * m / (math.sqrt(v) + 1e-8))


def test_zero_learning_rate_leaves_parameters():
    params = {"w": np.array([1.0, 2.0])}
    adam_step(params, {"w": np.array([5.0, -5.0])}, AdamState.zeros_like(params), TrainConfig(learning_rate=0.0))
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_non_finite_gradient_names_parameter():
    params = {"lstm.W": np.zeros(2)}
    with pytest.raises(TrainingDiverged, match="lstm.W"):
        adam_step(params, {"lstm.W": np.array([np.nan, 0.0])}, AdamState.zeros_like(params), TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)


CFG = ModelConfig(n_items=8, seq_len=6, embed_dim=4, hidden_dim=6, n_slots=2, slot_dim=4, attn_dim=3)


def test_untrained_loss_is_near_log_vocab():
    model = CmnRec(CFG, seed=0)
    data = markov_sequences(8, 16, 6, seed=0)
    loss, _ = compute_gradients(model, data)
    assert abs(loss - math.log(8)) / math.log(8) < 0.05


def test_repeated_sequence_loss_decreases():
    model = CmnRec(CFG, seed=0)
    data = np.tile(markov_sequences(8, 1, 6, seed=1), (4, 1))
    cfg = TrainConfig(batch_size=4, learning_rate=3e-2)
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(0)
    losses = [train_epoch(model, data, cfg, state, rng) for _ in range(60)]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.1


def test_training_is_deterministic(tmp_path):
    data = markov_sequences(8, 40, 6, seed=2)
    cfg = TrainConfig(batch_size=8, max_epochs=3, patience=3, seed=5)
    a = train(CmnRec(CFG, seed=1), data[:30], data[30:], cfg, history_path=tmp_path / "h.csv")
    b = train(CmnRec(CFG, seed=1), data[:30], data[30:], cfg)
    for name in a.model.params:
        np.testing.assert_array_equal(a.model.params[name], b.model.params[name])
    header = (tmp_path / "h.csv").read_text().splitlines()[0]
    assert header.split(",") == HISTORY_FIELDS
    assert len(a.history) == 3


def test_early_stopping_and_callback():
    data = markov_sequences(8, 40, 6, seed=3)
    seen = []
    cfg = TrainConfig(batch_size=8, learning_rate=0.0, max_epochs=20, patience=2)
    result = train(CmnRec(CFG, seed=0), data[:30], data[30:], cfg, on_epoch=lambda e, m, r: seen.append(e))
    # a frozen model never improves after epoch 1
    assert result.best_epoch == 1
    assert seen == [1, 2, 3]


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        train(CmnRec(CFG), np.zeros((0, 6), dtype=np.int64), markov_sequences(8, 2, 6), TrainConfig())
