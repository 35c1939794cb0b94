"""Context-aware video dubbing at desk scale.

The pipeline selects a bounded multimodal context around the sentence being
dubbed, aligns concatenated phonemes with lip frames through cross-modal
attention, predicts context-aware global energy and pitch from facial affect
features, and decodes a global mel-spectrogram refined against the masked
ground-truth context mels. Synthetic corpora with learnable cross-modal
structure stand in for real audio-visual data.
"""

from .data import (ContextConfig, ContextSample, NormStats, ProsodyTrack,
                   SelectedContext, SentenceBundle, build_masked_mel_context,
                   select_context)
from .frames import FrameRateConfig, derive_frame_ratio
from .metrics import ffe, gpe, pitch_from_mel
from .model import Ablation, DubbingModel, ModelConfig
from .synth import PitchMap, ShapeConfig, generate_synthetic_corpus
from .training import TrainConfig, load_checkpoint, run_training, save_checkpoint

__all__ = [
    "Ablation",
    "ContextConfig",
    "ContextSample",
    "DubbingModel",
    "FrameRateConfig",
    "ModelConfig",
    "NormStats",
    "PitchMap",
    "ProsodyTrack",
    "SelectedContext",
    "SentenceBundle",
    "ShapeConfig",
    "TrainConfig",
    "build_masked_mel_context",
    "derive_frame_ratio",
    "ffe",
    "generate_synthetic_corpus",
    "gpe",
    "load_checkpoint",
    "pitch_from_mel",
    "run_training",
    "save_checkpoint",
    "select_context",
]
