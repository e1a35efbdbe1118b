"""Chunk-accelerated memory network for sequential recommendation."""

__version__ = "0.1.0"

from .chunking import ChunkRule, ChunkSchedule, ScheduleError, make_schedule
from .model import CmnRec, ModelConfig, StepCounters, Variant, forward_sequence, predict_next

__all__ = [
    "ChunkRule",
    "ChunkSchedule",
    "CmnRec",
    "ModelConfig",
    "ScheduleError",
    "StepCounters",
    "Variant",
    "forward_sequence",
    "make_schedule",
    "predict_next",
]
