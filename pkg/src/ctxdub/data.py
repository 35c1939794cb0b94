"""Core data containers: sentence bundles, context samples, and context selection.

A dubbing unit is the current sentence plus (optionally) its previous and
following sentences. Selection keeps the whole current sentence, the last
``K`` phonemes of the previous sentence and the first ``K`` of the following
one, and slices video frames / mels proportionally so the mel:video ratio
stays exactly ``n`` on every segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvariantViolation
from .frames import FrameRateConfig

PREV, CUR, FOL = 0, 1, 2


@dataclass
class SentenceBundle:
    """All per-sentence modalities, shape-locked to one FrameRateConfig."""

    phonemes: np.ndarray    # (T_p,) int64 ids
    lip_feats: np.ndarray   # (T_v, d_lip) float64
    face_feats: np.ndarray  # (T_v, d_face) float64
    mel: np.ndarray         # (T_mel, n_mels) float64
    voiced: np.ndarray      # (T_mel,) bool
    pitch: np.ndarray       # (T_mel,) float64 Hz, 0 where unvoiced
    energy: np.ndarray      # (T_mel,) float64, non-negative

    @property
    def t_p(self) -> int:
        return int(self.phonemes.shape[0])

    @property
    def t_v(self) -> int:
        return int(self.lip_feats.shape[0])

    @property
    def t_mel(self) -> int:
        return int(self.mel.shape[0])

    def validate(self, frame_cfg: FrameRateConfig, vocab: Optional[int] = None) -> None:
        if self.phonemes.ndim != 1 or self.t_p < 1:
            raise InvariantViolation("phoneme sequence must be 1-D and non-empty")
        if np.any(self.phonemes < 0):
            raise InvariantViolation("negative phoneme id")
        if vocab is not None and np.any(self.phonemes >= vocab):
            raise InvariantViolation(f"phoneme id >= vocab ({vocab})")
        if self.lip_feats.ndim != 2 or self.face_feats.ndim != 2 or self.mel.ndim != 2:
            raise InvariantViolation("lip/face/mel must be 2-D")
        if self.face_feats.shape[0] != self.t_v:
            raise InvariantViolation("lip and face sequences differ in length")
        if self.t_mel != frame_cfg.mel_len(self.t_v):
            raise InvariantViolation(
                f"T_mel={self.t_mel} != n*T_v={frame_cfg.mel_len(self.t_v)}"
            )
        for name, arr in (("voiced", self.voiced), ("pitch", self.pitch), ("energy", self.energy)):
            if arr.shape != (self.t_mel,):
                raise InvariantViolation(f"{name} must have shape (T_mel,)")
        if not np.array_equal(self.pitch > 0, self.voiced.astype(bool)):
            raise InvariantViolation("pitch > 0 must hold exactly on voiced frames")
        if np.any(self.energy < 0):
            raise InvariantViolation("energy must be non-negative")
        for name, arr in (("lip", self.lip_feats), ("face", self.face_feats),
                          ("mel", self.mel), ("pitch", self.pitch), ("energy", self.energy)):
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"non-finite values in {name}")


@dataclass
class ContextSample:
    """One dubbing unit: the current sentence plus optional neighbours."""

    current: SentenceBundle
    previous: Optional[SentenceBundle] = None
    following: Optional[SentenceBundle] = None
    frame_cfg: FrameRateConfig = None  # type: ignore[assignment]

    def validate(self, vocab: Optional[int] = None) -> None:
        if self.current is None:
            raise InvariantViolation("current sentence is required")
        if self.frame_cfg is None:
            raise InvariantViolation("frame_cfg is required")
        for bundle in (self.previous, self.current, self.following):
            if bundle is not None:
                bundle.validate(self.frame_cfg, vocab=vocab)


@dataclass(frozen=True)
class ContextConfig:
    """Maximum context length in phonemes plus per-side enable flags."""

    k: int
    use_prev: bool = True
    use_fol: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise InvariantViolation(f"K must be >= 1, got {self.k}")


@dataclass(frozen=True)
class SegmentBounds:
    """(start, end) index pairs for prev/cur/fol in all three coordinate systems."""

    phoneme: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    video: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    mel: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]

    def mel_current(self) -> tuple[int, int]:
        return self.mel[CUR]

    def validate(self, t_p: int, t_v: int, t_mel: int) -> None:
        for axis, total in (("phoneme", t_p), ("video", t_v), ("mel", t_mel)):
            spans = getattr(self, axis)
            pos = 0
            for start, end in spans:
                if start != pos or end < start:
                    raise InvariantViolation(f"{axis} bounds do not partition the axis")
                pos = end
            if pos != total:
                raise InvariantViolation(f"{axis} bounds do not cover the axis")


@dataclass
class SelectedContext:
    """Concatenated prev/cur/fol sequences after maximum-context-length selection."""

    phoneme_seq: np.ndarray  # (T_p,) int64
    lip_seq: np.ndarray      # (T_v, d_lip)
    face_seq: np.ndarray     # (T_v, d_face)
    mel_gt: np.ndarray       # (T_mel, n_mels)
    pitch_gt: np.ndarray     # (T_mel,)
    voiced_gt: np.ndarray    # (T_mel,) bool
    energy_gt: np.ndarray    # (T_mel,)
    bounds: SegmentBounds
    frame_cfg: FrameRateConfig

    @property
    def t_p(self) -> int:
        return int(self.phoneme_seq.shape[0])

    @property
    def t_v(self) -> int:
        return int(self.lip_seq.shape[0])

    @property
    def t_mel(self) -> int:
        return int(self.mel_gt.shape[0])

    def validate(self) -> None:
        self.bounds.validate(self.t_p, self.t_v, self.t_mel)
        if self.t_mel != self.frame_cfg.mel_len(self.t_v):
            raise InvariantViolation("T_mel != n * T_v on concatenated sequence")
        n = self.frame_cfg.n
        for (vs, ve), (ms, me) in zip(self.bounds.video, self.bounds.mel):
            if (me - ms) != n * (ve - vs):
                raise InvariantViolation("mel/video ratio broken on a segment")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _context_slice(bundle: Optional[SentenceBundle], k: int, enabled: bool,
                   take_tail: bool, n: int):
    """Select min(K, T_p) phonemes from one side and slice frames proportionally.

    take_tail selects the last phonemes (previous sentence); otherwise the
    first (following sentence). Frames follow the selected phoneme fraction
    f = k_sel / T_p: round(f * T_v) video frames and exactly n times as many
    mel frames, taken from the matching end.
    """
    if bundle is None or not enabled:
        return None, 0, 0
    k_sel = min(k, bundle.t_p)
    if k_sel == bundle.t_p:
        v_sel = bundle.t_v
    else:
        v_sel = _round_half_up(k_sel / bundle.t_p * bundle.t_v)
    return bundle, k_sel, v_sel


def select_context(sample: ContextSample, cfg: ContextConfig) -> SelectedContext:
    """Concatenate context-limited prev/cur/fol phonemes, frames, and mels."""
    n = sample.frame_cfg.n
    prev, k_prev, v_prev = _context_slice(sample.previous, cfg.k, cfg.use_prev, True, n)
    fol, k_fol, v_fol = _context_slice(sample.following, cfg.k, cfg.use_fol, False, n)
    cur = sample.current

    d_lip = cur.lip_feats.shape[1]
    d_face = cur.face_feats.shape[1]
    n_mels = cur.mel.shape[1]

    def empty(cols=None):
        return np.zeros((0,) if cols is None else (0, cols), dtype=np.float64)

    if prev is not None:
        p_pho = prev.phonemes[prev.t_p - k_prev:]
        p_lip = prev.lip_feats[prev.t_v - v_prev:]
        p_face = prev.face_feats[prev.t_v - v_prev:]
        p_mel = prev.mel[prev.t_mel - n * v_prev:]
        p_pitch = prev.pitch[prev.t_mel - n * v_prev:]
        p_voiced = prev.voiced[prev.t_mel - n * v_prev:]
        p_energy = prev.energy[prev.t_mel - n * v_prev:]
    else:
        p_pho = np.zeros(0, dtype=np.int64)
        p_lip, p_face, p_mel = empty(d_lip), empty(d_face), empty(n_mels)
        p_pitch, p_voiced, p_energy = empty(), np.zeros(0, dtype=bool), empty()

    if fol is not None:
        f_pho = fol.phonemes[:k_fol]
        f_lip = fol.lip_feats[:v_fol]
        f_face = fol.face_feats[:v_fol]
        f_mel = fol.mel[:n * v_fol]
        f_pitch = fol.pitch[:n * v_fol]
        f_voiced = fol.voiced[:n * v_fol]
        f_energy = fol.energy[:n * v_fol]
    else:
        f_pho = np.zeros(0, dtype=np.int64)
        f_lip, f_face, f_mel = empty(d_lip), empty(d_face), empty(n_mels)
        f_pitch, f_voiced, f_energy = empty(), np.zeros(0, dtype=bool), empty()

    def spans(a: int, b: int, c: int):
        return ((0, a), (a, a + b), (a + b, a + b + c))

    bounds = SegmentBounds(
        phoneme=spans(k_prev, cur.t_p, k_fol),
        video=spans(v_prev, cur.t_v, v_fol),
        mel=spans(n * v_prev, cur.t_mel, n * v_fol),
    )
    sel = SelectedContext(
        phoneme_seq=np.concatenate([p_pho, cur.phonemes, f_pho]),
        lip_seq=np.concatenate([p_lip, cur.lip_feats, f_lip], axis=0),
        face_seq=np.concatenate([p_face, cur.face_feats, f_face], axis=0),
        mel_gt=np.concatenate([p_mel, cur.mel, f_mel], axis=0),
        pitch_gt=np.concatenate([p_pitch, cur.pitch, f_pitch]),
        voiced_gt=np.concatenate([p_voiced, cur.voiced, f_voiced]),
        energy_gt=np.concatenate([p_energy, cur.energy, f_energy]),
        bounds=bounds,
        frame_cfg=sample.frame_cfg,
    )
    sel.validate()
    return sel


MASK_FILL = 0.0


def build_masked_mel_context(sel: SelectedContext, fill: float = MASK_FILL) -> np.ndarray:
    """Ground-truth context mels with the current segment replaced by the mask fill.

    Context rows are copied verbatim; only the current segment is overwritten,
    so the output never depends on the current sentence's audio.
    """
    masked = sel.mel_gt.copy()
    start, end = sel.bounds.mel_current()
    masked[start:end, :] = fill
    return masked


@dataclass
class ProsodyTrack:
    """Per-mel-frame scalar sequence (energy or pitch) with optional voicing flags."""

    values: np.ndarray               # (T,) float64
    voiced: Optional[np.ndarray] = None  # (T,) bool for pitch tracks

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.voiced is not None:
            self.voiced = np.asarray(self.voiced, dtype=bool)
            if self.voiced.shape != self.values.shape:
                raise InvariantViolation("voiced flags must match values length")

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass
class NormStats:
    """Per-corpus normalization statistics, stored in the corpus manifest."""

    mel_mean: np.ndarray  # (n_mels,)
    mel_std: np.ndarray   # (n_mels,)
    energy_mean: float
    energy_std: float
    pitch_log_mean: float
    pitch_log_std: float


def compute_norm_stats(samples: list[ContextSample]) -> NormStats:
    mels, energies, logpitch = [], [], []
    for sample in samples:
        for bundle in (sample.previous, sample.current, sample.following):
            if bundle is None:
                continue
            mels.append(bundle.mel)
            energies.append(bundle.energy)
            voiced = bundle.voiced.astype(bool)
            if voiced.any():
                logpitch.append(np.log(bundle.pitch[voiced]))
    mel_all = np.concatenate(mels, axis=0)
    energy_all = np.concatenate(energies)
    lp_all = np.concatenate(logpitch) if logpitch else np.zeros(1)
    floor = 1e-6
    return NormStats(
        mel_mean=mel_all.mean(axis=0),
        mel_std=np.maximum(mel_all.std(axis=0), floor),
        energy_mean=float(energy_all.mean()),
        energy_std=float(max(energy_all.std(), floor)),
        pitch_log_mean=float(lp_all.mean()),
        pitch_log_std=float(max(lp_all.std(), floor)),
    )


def normalize_mel(mel: np.ndarray, stats: NormStats) -> np.ndarray:
    return (mel - stats.mel_mean) / stats.mel_std


def denormalize_mel(mel: np.ndarray, stats: NormStats) -> np.ndarray:
    return mel * stats.mel_std + stats.mel_mean
