"""Objective prosody metrics: gross pitch error and F0 frame error.

Both operate on per-frame pitch tracks with voicing flags. A pitch error is a
relative deviation of more than 20% (strictly greater) from the reference on
a frame voiced in both tracks; both rates are percentages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ProsodyTrack
from .errors import (EmptyTrack, InvariantViolation, LengthMismatch,
                     MissingPitchMap, NoVoicedOverlap)
from .synth import PitchMap

PITCH_ERROR_THRESHOLD = 0.2


@dataclass
class PitchComparison:
    """Per-frame classification of a reference/hypothesis track pair."""

    both_voiced: np.ndarray    # voiced in ref and hyp
    voicing_error: np.ndarray  # voicing decision differs
    pitch_error: np.ndarray    # both voiced and relative error > threshold

    @property
    def length(self) -> int:
        return int(self.both_voiced.shape[0])


def _require_tracks(ref: ProsodyTrack, hyp: ProsodyTrack) -> None:
    if ref.voiced is None or hyp.voiced is None:
        raise InvariantViolation("pitch metrics need voicing flags on both tracks")
    if len(ref) != len(hyp):
        raise LengthMismatch(f"track lengths differ: {len(ref)} vs {len(hyp)}")


def compare_tracks(ref: ProsodyTrack, hyp: ProsodyTrack,
                   threshold: float = PITCH_ERROR_THRESHOLD) -> PitchComparison:
    _require_tracks(ref, hyp)
    both = ref.voiced & hyp.voiced
    voicing_error = ref.voiced != hyp.voiced
    rel = np.zeros(len(ref))
    rel[both] = np.abs(hyp.values[both] - ref.values[both]) / ref.values[both]
    pitch_error = both & (rel > threshold)
    return PitchComparison(both_voiced=both, voicing_error=voicing_error,
                           pitch_error=pitch_error)


def gpe(ref: ProsodyTrack, hyp: ProsodyTrack,
        threshold: float = PITCH_ERROR_THRESHOLD) -> float:
    """Percentage of both-voiced frames whose relative pitch error exceeds 20%."""
    cmp = compare_tracks(ref, hyp, threshold)
    denom = int(cmp.both_voiced.sum())
    if denom == 0:
        raise NoVoicedOverlap("no frame is voiced in both tracks")
    return 100.0 * int(cmp.pitch_error.sum()) / denom


def ffe(ref: ProsodyTrack, hyp: ProsodyTrack,
        threshold: float = PITCH_ERROR_THRESHOLD) -> float:
    """Percentage of frames with a voicing decision error or a gross pitch error."""
    cmp = compare_tracks(ref, hyp, threshold)
    if cmp.length == 0:
        raise EmptyTrack("cannot evaluate an empty track")
    bad = int(cmp.voicing_error.sum()) + int(cmp.pitch_error.sum())
    return 100.0 * bad / cmp.length


def pitch_from_mel(mel: np.ndarray, pitch_map: PitchMap | None) -> ProsodyTrack:
    """Decode the pitch contour and voicing flags embedded in a raw-scale mel.

    Synthetic corpora store voicing as a 0/1 bin thresholded at 0.5 and pitch
    as Hz divided by a power of two, so decoding a ground-truth mel recovers
    the stored track exactly.
    """
    if pitch_map is None:
        raise MissingPitchMap("no pitch map provided for this corpus")
    if mel.ndim != 2 or mel.shape[1] <= max(pitch_map.pitch_bin, pitch_map.voicing_bin):
        raise MissingPitchMap(
            f"mel with {mel.shape[1] if mel.ndim == 2 else '?'} bins cannot hold "
            f"pitch map bins ({pitch_map.pitch_bin}, {pitch_map.voicing_bin})"
        )
    voiced = mel[:, pitch_map.voicing_bin] > pitch_map.threshold
    pitch = np.where(voiced, mel[:, pitch_map.pitch_bin] * pitch_map.divisor, 0.0)
    # Decoded pitch must stay positive wherever voicing fired; clamp the rare
    # non-physical decode (negative bin value on a frame called voiced).
    bad = voiced & (pitch <= 0)
    if bad.any():
        voiced = voiced & ~bad
        pitch = np.where(voiced, pitch, 0.0)
    return ProsodyTrack(values=pitch, voiced=voiced)
