"""The chunk-accelerated memory recommender: forward pass and checkpoints."""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .chunking import AttentionParams, ChunkArea, ChunkRule, ChunkSchedule, attend, make_schedule
from .controller import ControllerState, LstmParams, controller_step, embed, init_embedding, init_lstm
from .memory import init_memory, interface_width, memory_read, memory_write, split_interface

CHECKPOINT_FORMAT = "cmnrec-checkpoint"
CHECKPOINT_VERSION = 1


class Variant(str, enum.Enum):
    CMNREC = "cmnrec"
    SRMN_BASELINE = "srmn"
    LSTM_BASELINE = "lstm"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for v in cls:
            if key in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown variant {value!r}; expected one of cmnrec, srmn, lstm")


@dataclass
class ModelConfig:
    n_items: int
    seq_len: int
    embed_dim: int = 128
    hidden_dim: int = 256
    n_slots: int = 4
    slot_dim: int = 256
    attn_dim: int = 64
    rule: ChunkRule = ChunkRule.TSC
    variant: Variant = Variant.CMNREC

    def __post_init__(self):
        self.rule = ChunkRule.parse(self.rule)
        self.variant = Variant.parse(self.variant)
        if self.variant is Variant.SRMN_BASELINE:
            self.rule = ChunkRule.EVERY_STEP
        for name in ("n_items", "seq_len", "embed_dim", "hidden_dim", "n_slots", "slot_dim", "attn_dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
            setattr(self, name, int(value))

    @property
    def has_memory(self) -> bool:
        return self.variant is not Variant.LSTM_BASELINE

    @property
    def read_dim(self) -> int:
        return self.slot_dim if self.has_memory else 0

    def schedule(self) -> ChunkSchedule:
        return make_schedule(self.seq_len, self.n_slots, self.rule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rule"] = self.rule.value
        d["variant"] = self.variant.value
        return d


@dataclass
class StepCounters:
    memory_reads: int = 0
    memory_writes: int = 0
    attention_calls: int = 0

    def as_tuple(self):
        return (self.memory_reads, self.memory_writes, self.attention_calls)


@dataclass
class ForwardResult:
    logits: Tensor  # (B, T, I); column j scores item id j + 1
    counters: StepCounters  # per sequence
    hidden: List[Tensor] = field(default_factory=list)  # h_1..h_T
    inputs: List[Tensor] = field(default_factory=list)  # v_1..v_T
    area_sizes: List[int] = field(default_factory=list)  # buffer length after each step


def init_params(config: ModelConfig, seed: int = 0) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    k, h, m, b, I = config.embed_dim, config.hidden_dim, config.read_dim, config.attn_dim, config.n_items
    params = {"embedding": init_embedding(I, k, rng)}
    params.update({f"lstm.{n}": a for n, a in init_lstm(k + m, h, rng).items()})
    u = lambda *shape: rng.uniform(-0.08, 0.08, size=shape)
    if config.has_memory:
        params["iface.W"] = u(h, interface_width(m))
        params["iface.b"] = np.zeros(interface_width(m))
    if config.variant is Variant.CMNREC:
        params["attn.W"] = u(h, b)
        params["attn.U"] = u(m, b)
        params["attn.w"] = u(b, 1)
    params["out.W"] = u(h + m, I)
    params["out.b"] = np.zeros(I)
    return params


class CmnRec:
    """Embedding + LSTM controller + chunked external memory + output layer."""

    def __init__(self, config: ModelConfig, params: Optional[Dict[str, np.ndarray]] = None, seed: int = 0):
        self.config = config
        # the plain LSTM never consults a schedule
        self.schedule = config.schedule() if config.has_memory else None
        self.params = init_params(config, seed) if params is None else {k: np.array(v, dtype=float) for k, v in params.items()}
        expected = init_params(config, 0)
        for name, arr in expected.items():
            if name not in self.params:
                raise KeyError(f"missing parameter {name!r}")
            if self.params[name].shape != arr.shape:
                raise ad.ShapeError(f"parameter {name!r} has shape {self.params[name].shape}, expected {arr.shape}")

    def copy(self) -> "CmnRec":
        return CmnRec(self.config, {k: v.copy() for k, v in self.params.items()})

    def bind(self, tape: Optional[Tape] = None) -> Dict[str, Tensor]:
        """Wrap parameters as tape leaves (or constants when ``tape`` is None)."""
        if tape is None:
            return {k: Tensor(v, k) for k, v in self.params.items()}
        return {k: tape.leaf(v, k) for k, v in self.params.items()}

    def forward(
        self,
        ids,
        tape: Optional[Tape] = None,
        bound: Optional[Dict[str, Tensor]] = None,
        *,
        inputs: Optional[List[Tensor]] = None,
        hidden_offsets: Optional[Dict[int, np.ndarray]] = None,
    ) -> ForwardResult:
        """Run a batch of front-padded sequences through every step 1..T.

        ``ids`` is (B, T) or (T,).  ``inputs`` replaces the embedding lookups
        with caller-provided per-step vectors, and ``hidden_offsets`` adds a
        constant to h_t as soon as step t (1-based) produces it; both exist for gradient
        analysis.
        """
        cfg = self.config
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2 or ids.shape[1] != cfg.seq_len:
            raise ValueError(f"expected sequences of length {cfg.seq_len}, got shape {ids.shape}")
        if ids.dtype.kind not in "iu":
            raise TypeError(f"item ids must be integers, got {ids.dtype}")
        if ids.size and (ids.min() < 0 or ids.max() > cfg.n_items):
            raise ValueError(f"item ids outside [0, {cfg.n_items}]")
        B, T = ids.shape
        P = bound if bound is not None else self.bind(tape)
        lstm = LstmParams(P["lstm.W"], P["lstm.U"], P["lstm.b"])
        attn = AttentionParams(P["attn.W"], P["attn.U"], P["attn.w"]) if cfg.variant is Variant.CMNREC else None
        state = ControllerState.zeros(cfg.hidden_dim, B)
        m = cfg.read_dim
        r = Tensor(np.zeros((B, m))) if cfg.has_memory else None
        mem = init_memory(cfg.n_slots, m, B) if cfg.has_memory else None
        area = ChunkArea()
        counters = StepCounters()
        result = ForwardResult(logits=None, counters=counters)  # type: ignore[arg-type]
        feats = []

        for t in range(1, T + 1):
            v = inputs[t - 1] if inputs is not None else embed(ids[:, t - 1], P["embedding"])
            result.inputs.append(v)
            if cfg.variant is Variant.LSTM_BASELINE:
                o, state = self._step(t, v, None, state, lstm, None, hidden_offsets)
                feat = o
            else:
                chunk_time = t in self.schedule
                if cfg.variant is Variant.CMNREC:
                    # the buffer holds every recurrent state entering a step since
                    # the last chunk time; at a chunk time its attention summary
                    # replaces the recurrent input
                    area.push(state.h)
                    if chunk_time:
                        a = attend(area, r, attn)
                        counters.attention_calls += 1
                        o, state = self._step(t, v, r, state, lstm, a, hidden_offsets)
                        area.clear()
                    else:
                        o, state = self._step(t, v, r, state, lstm, None, hidden_offsets)
                else:
                    o, state = self._step(t, v, r, state, lstm, None, hidden_offsets)
                if chunk_time:
                    iface = split_interface(ad.matmul(o, P["iface.W"]) + P["iface.b"], m)
                    mem = memory_write(iface, mem)
                    counters.memory_writes += 1
                    r = memory_read(iface, mem)
                    counters.memory_reads += 1
                feat = ad.concat(o, r)
            result.hidden.append(state.h)
            result.area_sizes.append(len(area))
            feats.append(feat)

        F = ad.stack(feats, axis=1)  # (B, T, h + m)
        result.logits = ad.matmul(F, P["out.W"]) + P["out.b"]
        return result

    @staticmethod
    def _step(t, v, r, state, lstm, override, hidden_offsets):
        o, state = controller_step(v, r, state, lstm, recurrent_override=override)
        if hidden_offsets is not None and t in hidden_offsets:
            # perturb h_t before anything downstream (memory, output) sees it
            o = o + hidden_offsets[t]
            state = ControllerState(o, state.c)
        return o, state

    def loss(self, ids, tape: Tape, bound: Optional[Dict[str, Tensor]] = None):
        """Masked next-item cross-entropy over steps 1..T-1; returns (loss, forward result)."""
        from .training import masked_xent

        res = self.forward(ids, tape, bound)
        ids = np.atleast_2d(np.asarray(ids))
        T = self.config.seq_len
        logits = ad.slice_(res.logits, 0, T - 1, axis=1)
        return masked_xent(logits, ids[:, 1:]), res

    def final_scores(self, ids) -> np.ndarray:
        """Scores for the last item of each sequence given the preceding items: (B, I)."""
        res = self.forward(ids)
        return np.array(res.logits.value[:, self.config.seq_len - 2, :])

    # -- checkpoints ------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "config": self.config.to_dict()}
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "CmnRec":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        return cls(ModelConfig(**meta["config"]), params)


def forward_sequence(model: CmnRec, seq):
    """Logits (T, I) and per-sequence op counters for one sequence."""
    items = getattr(seq, "items", seq)
    res = model.forward(np.asarray(items, dtype=np.int64)[None, :])
    return np.array(res.logits.value[0]), res.counters


def predict_next(logits) -> int:
    """Argmax item id; logits[j] scores id j + 1, ties go to the lowest id."""
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise ValueError("predict_next: empty logits")
    return int(np.argmax(logits)) + 1
