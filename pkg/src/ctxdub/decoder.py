"""Context acoustic decoder: coarse mel decoding, masked-context fusion, refinement.

The decoder turns the concatenated aligner and prosody features into a coarse
mel, fuses it with the masked ground-truth context mels through a double
attention block (gather global descriptors by attention pooling over
positions, then redistribute them per position), and refines the result with
a residual convolutional postnet.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import FFTStack, sinusoidal_positions
from .errors import BoundsOutOfRange, DimMismatch


class MelDecoder(nn.Module):
    """Input projection + FFT blocks + linear head -> (T_mel, n_mels)."""

    def __init__(self, in_dim: int, dim: int, n_mels: int, n_blocks: int,
                 n_heads: int, ffn_dim: int, ffn_kernel: int = 9,
                 dropout: float = 0.1):
        super().__init__()
        self.in_dim = in_dim
        self.in_proj = nn.Linear(in_dim, dim)
        self.stack = FFTStack(n_blocks, dim, n_heads, ffn_dim, ffn_kernel, dropout)
        self.head = nn.Linear(dim, n_mels)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.ndim != 2 or feats.shape[1] != self.in_dim:
            raise DimMismatch(
                f"expected (T, {self.in_dim}) decoder features, got {tuple(feats.shape)}"
            )
        x = self.in_proj(feats)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype,
                                     device=x.device)
        return self.head(self.stack(x))


class DoubleAttentionBlock(nn.Module):
    """Gather-and-distribute attention over sequence positions.

    Gather: per descriptor, a softmax over positions pools projected features
    into one of G global descriptor vectors. Distribute: per position, a
    softmax over the G descriptors selects a mixture that is then projected
    to the output. Gathering is invariant to permuting input positions.
    """

    def __init__(self, in_dim: int, dim: int, n_descriptors: int):
        super().__init__()
        if n_descriptors < 1:
            raise DimMismatch("need at least one global descriptor")
        self.in_dim = in_dim
        self.n_descriptors = n_descriptors
        self.feature_map = nn.Linear(in_dim, dim)       # per-position value features
        self.gather_map = nn.Linear(in_dim, n_descriptors)
        self.distribute_map = nn.Linear(in_dim, n_descriptors)
        self.out_proj = nn.Linear(dim, dim)

    def attention_weights(self, x: torch.Tensor
                          ) -> tuple[torch.Tensor, torch.Tensor]:
        """(gather, distribute) weights: (T, G) each, normalized over T and G."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimMismatch(f"expected (T, {self.in_dim}), got {tuple(x.shape)}")
        gather = torch.softmax(self.gather_map(x), dim=0)
        distribute = torch.softmax(self.distribute_map(x), dim=1)
        return gather, distribute

    def gather(self, x: torch.Tensor) -> torch.Tensor:
        """Pool features into (G, dim) global descriptors."""
        gather, _ = self.attention_weights(x)
        return gather.t() @ self.feature_map(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gather, distribute = self.attention_weights(x)
        descriptors = gather.t() @ self.feature_map(x)
        return self.out_proj(distribute @ descriptors)


class Postnet(nn.Module):
    """Five-layer residual conv refiner over [fused-context, coarse-mel] channels.

    The final convolution is zero-initialized, so at init the refined mel is
    exactly the coarse mel.
    """

    def __init__(self, n_mels: int, context_dim: int, hidden: int, kernel: int = 5,
                 n_layers: int = 5):
        super().__init__()
        if n_layers < 2:
            raise DimMismatch("postnet needs at least two layers")
        channels = [context_dim + n_mels] + [hidden] * (n_layers - 1) + [n_mels]
        self.convs = nn.ModuleList(
            nn.Conv1d(channels[i], channels[i + 1], kernel, padding=kernel // 2)
            for i in range(n_layers)
        )
        with torch.no_grad():
            self.convs[-1].weight.zero_()
            self.convs[-1].bias.zero_()

    def forward(self, coarse: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if coarse.shape[0] != context.shape[0]:
            raise DimMismatch("coarse mel and context features differ in length")
        y = torch.cat([context, coarse], dim=1).t().unsqueeze(0)
        for conv in self.convs[:-1]:
            y = torch.tanh(conv(y))
        residual = self.convs[-1](y).squeeze(0).t()
        return coarse + residual


def extract_current(mel: torch.Tensor | "np.ndarray", mel_bounds: tuple[int, int]):
    """Rows of the global mel belonging to the current sentence."""
    start, end = mel_bounds
    if not (0 <= start <= end <= mel.shape[0]):
        raise BoundsOutOfRange(
            f"bounds ({start}, {end}) invalid for {mel.shape[0]} mel frames"
        )
    return mel[start:end]


class ContextAcousticDecoder(nn.Module):
    """Coarse decode, double-attention fusion with masked context mels, postnet."""

    def __init__(self, feature_dim: int, dim: int, n_mels: int, n_blocks: int,
                 n_heads: int, ffn_dim: int, n_descriptors: int,
                 postnet_hidden: int, ffn_kernel: int = 9,
                 postnet_kernel: int = 5, dropout: float = 0.1):
        super().__init__()
        self.mel_decoder = MelDecoder(feature_dim, dim, n_mels, n_blocks, n_heads,
                                      ffn_dim, ffn_kernel, dropout)
        self.dab = DoubleAttentionBlock(2 * n_mels, dim, n_descriptors)
        self.postnet = Postnet(n_mels, dim, postnet_hidden, postnet_kernel)

    def forward(self, feats: torch.Tensor, masked_mel: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        coarse = self.mel_decoder(feats)
        if masked_mel.shape != coarse.shape:
            raise DimMismatch(
                f"masked context mel {tuple(masked_mel.shape)} does not match "
                f"decoded mel {tuple(coarse.shape)}"
            )
        fused = self.dab(torch.cat([coarse, masked_mel], dim=1))
        refined = self.postnet(coarse, fused)
        return refined, coarse
