"""Synthetic multimodal corpus generation.

Stands in for a real dubbing corpus with identical shapes and semantics.
Lip and face features are produced by fixed per-corpus linear+tanh maps of
phoneme-aligned latent states, so cross-modal alignment is learnable rather
than pure noise. The pitch contour and voicing flags are written into two
reserved mel bins with a power-of-two divisor, which makes the mel-to-pitch
decoding in :mod:`ctxdub.metrics` an exact round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ContextSample, SentenceBundle
from .errors import InvalidShapeConfig
from .frames import FrameRateConfig


@dataclass(frozen=True)
class PitchMap:
    """Where and how the pitch contour is encoded inside the mel."""

    pitch_bin: int
    voicing_bin: int
    divisor: float = 256.0   # power of two keeps encode/decode exact
    threshold: float = 0.5


@dataclass(frozen=True)
class ShapeConfig:
    """Dimensions and length ranges for generated samples."""

    vocab: int
    d_lip: int
    d_face: int
    n_mels: int
    min_phonemes: int = 4
    max_phonemes: int = 12
    min_frames_per_phoneme: int = 1
    max_frames_per_phoneme: int = 2
    voiced_prob: float = 0.7
    feature_noise: float = 0.05
    mel_noise: float = 0.02

    def __post_init__(self):
        for name in ("vocab", "d_lip", "d_face", "n_mels",
                     "min_phonemes", "max_phonemes",
                     "min_frames_per_phoneme", "max_frames_per_phoneme"):
            if getattr(self, name) <= 0:
                raise InvalidShapeConfig(f"{name} must be positive")
        if self.n_mels < 3:
            raise InvalidShapeConfig("n_mels must be >= 3 (two bins are reserved for pitch)")
        if self.min_phonemes > self.max_phonemes:
            raise InvalidShapeConfig("min_phonemes > max_phonemes")
        if self.min_frames_per_phoneme > self.max_frames_per_phoneme:
            raise InvalidShapeConfig("min_frames_per_phoneme > max_frames_per_phoneme")
        if not (0.0 < self.voiced_prob <= 1.0):
            raise InvalidShapeConfig("voiced_prob must be in (0, 1]")

    @property
    def pitch_map(self) -> PitchMap:
        return PitchMap(pitch_bin=self.n_mels - 2, voicing_bin=self.n_mels - 1)


# Base log-F0 around 180 Hz; valence shifts it by up to ~25%.
_LOG_F0_BASE = 5.19
_LOG_F0_SPAN = 0.25


class CorpusMaps:
    """Fixed random projections shared by every sample of one corpus."""

    def __init__(self, rng: np.random.Generator, shape: ShapeConfig):
        self.lip_map = rng.normal(0.0, 1.0, size=(shape.vocab, shape.d_lip))
        self.lip_bias = rng.normal(0.0, 0.3, size=shape.d_lip)
        self.face_aro = rng.normal(0.0, 1.0, size=shape.d_face)
        self.face_val = rng.normal(0.0, 1.0, size=shape.d_face)
        self.face_bias = rng.normal(0.0, 0.3, size=shape.d_face)
        content = shape.n_mels - 2
        self.mel_map = rng.normal(0.0, 1.0, size=(shape.vocab, content))
        self.mel_val_vec = rng.normal(0.0, 0.5, size=content)


def _smooth_contour(rng: np.random.Generator, length: int) -> np.ndarray:
    """Bounded smooth trajectory in [-1, 1] (random walk through tanh)."""
    steps = rng.normal(0.0, 0.25, size=length)
    steps[0] = rng.normal(0.0, 0.6)
    return np.tanh(np.cumsum(steps))


def generate_sentence(rng: np.random.Generator, shape: ShapeConfig,
                      frame_cfg: FrameRateConfig, maps: CorpusMaps) -> SentenceBundle:
    n = frame_cfg.n
    t_p = int(rng.integers(shape.min_phonemes, shape.max_phonemes + 1))
    phonemes = rng.integers(0, shape.vocab, size=t_p).astype(np.int64)
    durations = rng.integers(shape.min_frames_per_phoneme,
                             shape.max_frames_per_phoneme + 1, size=t_p)
    phone_of_frame = np.repeat(np.arange(t_p), durations)
    t_v = int(phone_of_frame.shape[0])
    t_mel = n * t_v

    aro = _smooth_contour(rng, t_v)
    val = _smooth_contour(rng, t_v)
    noise = shape.feature_noise

    lip = np.tanh(maps.lip_map[phonemes[phone_of_frame]] + maps.lip_bias)
    lip = lip + rng.normal(0.0, noise, size=lip.shape)
    face = np.tanh(np.outer(aro, maps.face_aro) + np.outer(val, maps.face_val)
                   + maps.face_bias)
    face = face + rng.normal(0.0, noise, size=face.shape)

    # Mel-rate latents: each video frame spans n mel frames.
    frame_of_mel = np.repeat(np.arange(t_v), n)
    phone_of_mel = phone_of_frame[frame_of_mel]
    aro_mel = aro[frame_of_mel]
    val_mel = val[frame_of_mel]

    voiced_phone = rng.random(t_p) < shape.voiced_prob
    voiced = voiced_phone[phone_of_mel]
    if not voiced.any():
        voiced[: max(1, t_mel // 4)] = True  # keep at least a few voiced frames
    pitch = np.where(voiced, np.exp(_LOG_F0_BASE + _LOG_F0_SPAN * val_mel), 0.0)

    loud = np.exp(0.4 * aro_mel)
    content = loud[:, None] * np.tanh(maps.mel_map[phonemes[phone_of_mel]]
                                      + np.outer(val_mel, maps.mel_val_vec))
    content = content + rng.normal(0.0, shape.mel_noise, size=content.shape)

    pm = shape.pitch_map
    mel = np.zeros((t_mel, shape.n_mels), dtype=np.float64)
    mel[:, : shape.n_mels - 2] = content
    mel[:, pm.pitch_bin] = pitch / pm.divisor
    mel[:, pm.voicing_bin] = voiced.astype(np.float64)

    energy = np.linalg.norm(mel, axis=1)
    return SentenceBundle(phonemes=phonemes, lip_feats=lip, face_feats=face,
                          mel=mel, voiced=voiced, pitch=pitch, energy=energy)


def generate_synthetic_corpus(seed: int, count: int, frame_cfg: FrameRateConfig,
                              shape_cfg: ShapeConfig, with_context: bool = True,
                              ) -> list[ContextSample]:
    """Deterministic corpus of ``count`` samples.

    Per-sample RNG streams are spawned from (seed, index), so generation is
    order-independent and could run per sample in parallel. In a context
    corpus the first sample lacks a previous sentence and the last lacks a
    following one, mirroring clip-chain boundaries.
    """
    if count < 1:
        raise InvalidShapeConfig("count must be >= 1")
    root = np.random.SeedSequence(seed)
    children = root.spawn(count + 1)
    maps = CorpusMaps(np.random.default_rng(children[0]), shape_cfg)

    samples = []
    for i in range(count):
        rng = np.random.default_rng(children[i + 1])
        current = generate_sentence(rng, shape_cfg, frame_cfg, maps)
        previous = following = None
        if with_context:
            if i > 0:
                previous = generate_sentence(rng, shape_cfg, frame_cfg, maps)
            if i < count - 1:
                following = generate_sentence(rng, shape_cfg, frame_cfg, maps)
        sample = ContextSample(current=current, previous=previous,
                               following=following, frame_cfg=frame_cfg)
        sample.validate(vocab=shape_cfg.vocab)
        samples.append(sample)
    return samples
