"""Shared sequence-model building blocks.

Everything here operates on unbatched (T, D) float64 tensors; the corpus is
small enough that per-sample processing keeps variable lengths trivial.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_positions(length: int, dim: int, dtype=torch.float64,
                         device=None) -> torch.Tensor:
    """Standard sine/cosine absolute position table, shape (length, dim)."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype, device=device)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq[: dim // 2])
    return table


class MultiHeadSelfAttention(nn.Module):
    """Plain multi-head scaled-dot-product self-attention on (T, D)."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.d_head = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[0]
        def split(p):
            return p(x).reshape(t, self.n_heads, self.d_head).transpose(0, 1)
        q, k, v = split(self.q_proj), split(self.k_proj), split(self.v_proj)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.d_head)
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(t, self.dim)
        return self.out_proj(out)


class ConvFeedForward(nn.Module):
    """Two-layer position-wise feed-forward with 1-D convolutions."""

    def __init__(self, dim: int, hidden: int, kernel: int):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, hidden, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(hidden, dim, kernel, padding=kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x.t().unsqueeze(0)
        y = self.conv2(torch.relu(self.conv1(y)))
        return y.squeeze(0).t()


class FFTBlock(nn.Module):
    """Pre-norm feed-forward transformer block: self-attention + conv FFN."""

    def __init__(self, dim: int, n_heads: int, ffn_dim: int, ffn_kernel: int = 9,
                 dropout: float = 0.1):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = ConvFeedForward(dim, ffn_dim, ffn_kernel)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.norm1(x)))
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class FFTStack(nn.Module):
    """A sequence of FFT blocks with a final layer norm."""

    def __init__(self, n_blocks: int, dim: int, n_heads: int, ffn_dim: int,
                 ffn_kernel: int = 9, dropout: float = 0.1):
        super().__init__()
        if n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        self.blocks = nn.ModuleList(
            FFTBlock(dim, n_heads, ffn_dim, ffn_kernel, dropout) for _ in range(n_blocks)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x)
