"""Audio-visual frame-rate bookkeeping.

An audio-visual clip ties the mel frame count to the video frame count
through a fixed integer ratio: with audio sample rate ``sr``, mel hop size
``hs`` and video rate ``fps``, every video frame spans exactly
``n = (sr / hs) / fps`` mel frames, and a bundle with ``T_v`` video frames
carries ``T_mel = n * T_v`` mel frames.
"""

from dataclasses import dataclass
from fractions import Fraction

from .errors import NonIntegerRatio


@dataclass(frozen=True)
class FrameRateConfig:
    """Frame-rate constants plus the derived mels-per-video-frame ratio."""

    sr: int
    hs: int
    fps: int
    n: int

    def __post_init__(self):
        if self.sr <= 0 or self.hs <= 0 or self.fps <= 0:
            raise NonIntegerRatio(
                f"rates must be positive, got sr={self.sr} hs={self.hs} fps={self.fps}"
            )
        expected = _integer_ratio(self.sr, self.hs, self.fps)
        if self.n != expected:
            raise NonIntegerRatio(f"n={self.n} inconsistent, expected {expected}")

    def mel_len(self, n_video_frames: int) -> int:
        return self.n * n_video_frames


def _integer_ratio(sr: int, hs: int, fps: int) -> int:
    ratio = Fraction(sr, hs * fps)
    if ratio.denominator != 1 or ratio < 1:
        raise NonIntegerRatio(
            f"(sr/hs)/fps = ({sr}/{hs})/{fps} = {float(ratio)} is not a positive integer"
        )
    return int(ratio)


def derive_frame_ratio(sr: int, hs: int, fps: int) -> FrameRateConfig:
    """Build a FrameRateConfig, failing unless (sr/hs)/fps is a positive integer."""
    for name, value in (("sr", sr), ("hs", hs), ("fps", fps)):
        if not isinstance(value, int) or value <= 0:
            raise NonIntegerRatio(f"{name} must be a positive integer, got {value!r}")
    return FrameRateConfig(sr=sr, hs=hs, fps=fps, n=_integer_ratio(sr, hs, fps))
