"""Training objective: summed energy, pitch, and mel reconstruction losses.

Energy and pitch use mean squared error (pitch only over voiced frames), the
mel uses mean absolute error, and the total is their plain sum. All terms are
computed over the full concatenated prev/cur/fol range.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import LengthMismatch


@dataclass
class LossBreakdown:
    """Loss terms as 0-dim tensors; l_sum is computed as the written sum."""

    l_energy: torch.Tensor
    l_pitch: torch.Tensor
    l_mel: torch.Tensor
    l_sum: torch.Tensor

    def floats(self) -> tuple[float, float, float, float]:
        return (float(self.l_energy.detach()), float(self.l_pitch.detach()),
                float(self.l_mel.detach()), float(self.l_sum.detach()))


def compute_losses(pred_energy: torch.Tensor | None,
                   pred_pitch: torch.Tensor | None,
                   pred_mel: torch.Tensor,
                   target_energy: torch.Tensor,
                   target_pitch: torch.Tensor,
                   target_mel: torch.Tensor,
                   voiced: torch.Tensor,
                   weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                   ) -> LossBreakdown:
    """Weighted loss terms plus their sum (weights default to the plain sum).

    Disabled prosody heads pass None and contribute exactly zero. Pitch MSE
    is averaged over voiced frames only; with no voiced frames it is zero.
    """
    if pred_mel.shape != target_mel.shape:
        raise LengthMismatch(
            f"mel shapes differ: {tuple(pred_mel.shape)} vs {tuple(target_mel.shape)}"
        )
    t_mel = target_mel.shape[0]
    for name, track in (("energy", pred_energy), ("pitch", pred_pitch)):
        if track is not None and track.shape != (t_mel,):
            raise LengthMismatch(f"{name} track length {tuple(track.shape)} != ({t_mel},)")
    if target_energy.shape != (t_mel,) or target_pitch.shape != (t_mel,) \
            or voiced.shape != (t_mel,):
        raise LengthMismatch("target tracks must match the mel length")

    zero = torch.zeros((), dtype=pred_mel.dtype, device=pred_mel.device)
    w_energy, w_pitch, w_mel = weights

    if pred_energy is None:
        l_energy = zero.clone()
    else:
        l_energy = w_energy * torch.mean((pred_energy - target_energy) ** 2)

    voiced = voiced.to(torch.bool)
    if pred_pitch is None or not bool(voiced.any()):
        l_pitch = zero.clone()
    else:
        diff = pred_pitch[voiced] - target_pitch[voiced]
        l_pitch = w_pitch * torch.mean(diff ** 2)

    l_mel = w_mel * torch.mean(torch.abs(pred_mel - target_mel))
    l_sum = l_energy + l_pitch + l_mel
    return LossBreakdown(l_energy=l_energy, l_pitch=l_pitch, l_mel=l_mel, l_sum=l_sum)
