"""Recomputation-free streaming speech-to-text translation at toy scale."""

from .config import ModelConfig
from .decoder import SPEECH, TEXT, InterleavedLayout, Vocabulary
from .model import SpeechTranslator, build_model
from .streaming import Clock, PolicyConfig, SessionEventLog, run_hold_n, run_wait_k_stride_n

__all__ = [
    "SPEECH",
    "TEXT",
    "Clock",
    "InterleavedLayout",
    "ModelConfig",
    "PolicyConfig",
    "SessionEventLog",
    "SpeechTranslator",
    "Vocabulary",
    "build_model",
    "run_hold_n",
    "run_wait_k_stride_n",
]
