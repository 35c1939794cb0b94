"""Context duration aligner: text/lip encoding, cross-modal alignment, mel expansion.

The aligner consumes the concatenated phoneme and lip-frame sequences of the
previous, current, and following sentences, aligns text to lip frames with
row-stochastic cross-modal attention, and expands the aligned features from
video rate to mel rate with a learned transposed convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import math
import torch
from torch import nn

from .blocks import FFTStack, sinusoidal_positions
from .errors import DimMismatch, UnknownPhonemeId


def align_text_video(h_lip: torch.Tensor, h_pho: torch.Tensor
                     ) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-head cross-modal attention between lip and phoneme representations.

    Returns (h_lip_pho, a) with a of shape (T_v, T_p): each row is a softmax
    over phonemes of scaled dot products, and h_lip_pho is exactly a @ h_pho.
    """
    if h_lip.ndim != 2 or h_pho.ndim != 2 or h_lip.shape[1] != h_pho.shape[1]:
        raise DimMismatch(
            f"lip {tuple(h_lip.shape)} and phoneme {tuple(h_pho.shape)} dims differ"
        )
    scale = math.sqrt(h_lip.shape[1])
    a = torch.softmax(h_lip @ h_pho.t() / scale, dim=-1)
    return a @ h_pho, a


class TextVideoAligner(nn.Module):
    """Cross-modal attention, optionally multi-head.

    With one head this is exactly :func:`align_text_video` with no learned
    parameters. With several heads the model dimension is split per head,
    each head attends independently, and the concatenated result goes through
    a learned output projection. Attention weights are returned per head,
    shape (n_heads, T_v, T_p), each row stochastic.
    """

    def __init__(self, dim: int, n_heads: int = 1):
        super().__init__()
        if dim % n_heads != 0:
            raise DimMismatch(f"dim {dim} not divisible by aligner heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.out_proj = nn.Linear(dim, dim) if n_heads > 1 else None

    def forward(self, h_lip: torch.Tensor, h_pho: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        if h_lip.shape[1] != self.dim or h_pho.shape[1] != self.dim:
            raise DimMismatch("inputs do not match the aligner dimension")
        if self.n_heads == 1:
            out, a = align_text_video(h_lip, h_pho)
            return out, a.unsqueeze(0)
        d_head = self.dim // self.n_heads
        outs, weights = [], []
        for h in range(self.n_heads):
            cols = slice(h * d_head, (h + 1) * d_head)
            out_h, a_h = align_text_video(h_lip[:, cols], h_pho[:, cols])
            outs.append(out_h)
            weights.append(a_h)
        out = self.out_proj(torch.cat(outs, dim=1))
        return out, torch.stack(weights)


class MelUpsampler(nn.Module):
    """Expand (T_v, D) to (n * T_v, D) with a strided transposed convolution.

    Kernel and padding are chosen so the output length is exactly n * T_v by
    construction: kernel 2n with padding n/2 for even n, kernel 2n-1 with
    padding (n-1)/2 for odd n (kernel 1, identity-capable, when n = 1).
    """

    def __init__(self, dim: int, n: int):
        super().__init__()
        if n < 1:
            raise DimMismatch(f"frame ratio n must be >= 1, got {n}")
        self.n = n
        if n % 2 == 0:
            kernel, padding = 2 * n, n // 2
        else:
            kernel, padding = max(2 * n - 1, 1), (n - 1) // 2
        self.conv = nn.ConvTranspose1d(dim, dim, kernel_size=kernel, stride=n,
                                       padding=padding)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv(x.t().unsqueeze(0)).squeeze(0).t()
        assert y.shape[0] == self.n * x.shape[0]
        return y

    def identity_init_(self) -> None:
        """For n = 1 only: make the layer the identity map."""
        if self.n != 1:
            raise DimMismatch("identity init requires n = 1")
        with torch.no_grad():
            self.conv.weight.zero_()
            self.conv.weight[range(self.conv.in_channels), range(self.conv.out_channels), 0] = 1.0
            self.conv.bias.zero_()


class TextEncoder(nn.Module):
    """Phoneme embedding + positions + FFT blocks -> (T_p, D)."""

    def __init__(self, vocab: int, dim: int, n_blocks: int, n_heads: int,
                 ffn_dim: int, ffn_kernel: int = 9, dropout: float = 0.1):
        super().__init__()
        self.vocab = vocab
        self.embedding = nn.Embedding(vocab, dim)
        self.stack = FFTStack(n_blocks, dim, n_heads, ffn_dim, ffn_kernel, dropout)

    def forward(self, ids: torch.Tensor, zero_mask: torch.Tensor | None = None
                ) -> torch.Tensor:
        if ids.numel() == 0:
            raise DimMismatch("empty phoneme sequence")
        if torch.any(ids < 0) or torch.any(ids >= self.vocab):
            raise UnknownPhonemeId(
                f"phoneme id outside [0, {self.vocab}): {ids.min()}..{ids.max()}"
            )
        x = self.embedding(ids)
        if zero_mask is not None:
            x = x * (~zero_mask).to(x.dtype).unsqueeze(1)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype,
                                     device=x.device)
        return self.stack(x)


class LipEncoder(nn.Module):
    """Lip-feature projection + positions + FFT blocks -> (T_v, D).

    The input projection stands in for a pretrained lip feature extractor;
    here lip features arrive as raw per-frame vectors of width d_lip.
    """

    def __init__(self, d_lip: int, dim: int, n_blocks: int, n_heads: int,
                 ffn_dim: int, ffn_kernel: int = 9, dropout: float = 0.1):
        super().__init__()
        self.d_lip = d_lip
        self.proj = nn.Linear(d_lip, dim)
        self.stack = FFTStack(n_blocks, dim, n_heads, ffn_dim, ffn_kernel, dropout)

    def forward(self, feats: torch.Tensor, zero_mask: torch.Tensor | None = None
                ) -> torch.Tensor:
        if feats.ndim != 2 or feats.shape[0] == 0 or feats.shape[1] != self.d_lip:
            raise DimMismatch(
                f"expected (T_v>0, {self.d_lip}) lip features, got {tuple(feats.shape)}"
            )
        x = self.proj(feats)
        if zero_mask is not None:
            x = x * (~zero_mask).to(x.dtype).unsqueeze(1)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype,
                                     device=x.device)
        return self.stack(x)


@dataclass
class AlignedFeatures:
    """Aligner outputs at video rate and mel rate, plus the attention map."""

    h_lip_pho: torch.Tensor   # (T_v, D)
    t_lip_pho: torch.Tensor   # (T_mel, D)
    attention: torch.Tensor   # (n_heads, T_v, T_p), rows stochastic


class ContextDurationAligner(nn.Module):
    """Full aligner pipeline on the concatenated context sequences."""

    def __init__(self, vocab: int, d_lip: int, dim: int, n: int, n_blocks: int,
                 fft_heads: int, ffn_dim: int, aligner_heads: int = 1,
                 ffn_kernel: int = 9, dropout: float = 0.1):
        super().__init__()
        self.text_encoder = TextEncoder(vocab, dim, n_blocks, fft_heads, ffn_dim,
                                        ffn_kernel, dropout)
        self.lip_encoder = LipEncoder(d_lip, dim, n_blocks, fft_heads, ffn_dim,
                                      ffn_kernel, dropout)
        self.cross_attention = TextVideoAligner(dim, aligner_heads)
        self.upsampler = MelUpsampler(dim, n)

    def forward(self, phoneme_ids: torch.Tensor, lip_feats: torch.Tensor,
                pho_zero_mask: torch.Tensor | None = None,
                lip_zero_mask: torch.Tensor | None = None) -> AlignedFeatures:
        h_pho = self.text_encoder(phoneme_ids, pho_zero_mask)
        h_lip = self.lip_encoder(lip_feats, lip_zero_mask)
        h_lip_pho, attention = self.cross_attention(h_lip, h_pho)
        t_lip_pho = self.upsampler(h_lip_pho)
        return AlignedFeatures(h_lip_pho=h_lip_pho, t_lip_pho=t_lip_pho,
                               attention=attention)
