"""Context prosody predictor: affect fusion and global energy/pitch heads.

Face frames are projected into arousal and valence features, each fused with
the mel-rate aligned lip-phoneme features through additive attention, and the
fused representations drive one scalar-per-frame predictors for energy and
pitch. Predicted tracks are supervision heads only; the decoder consumes the
fused features, not the tracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import DimMismatch


class AdditiveAttention(nn.Module):
    """Additive (tanh-scored) attention of query rows over key rows.

    Scores are w_a^T tanh(W_a^T q_i + U_a^T k_j + b_a); each query row's
    weights are softmax-normalized over keys, and the output row i is the
    weight-averaged key sum_j alpha_ij k_j.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w_a = nn.Parameter(torch.empty(dim))
        self.W_a = nn.Parameter(torch.empty(dim, dim))
        self.U_a = nn.Parameter(torch.empty(dim, dim))
        self.b_a = nn.Parameter(torch.zeros(dim))
        nn.init.normal_(self.w_a, std=dim ** -0.5)
        nn.init.xavier_uniform_(self.W_a)
        nn.init.xavier_uniform_(self.U_a)

    def forward(self, queries: torch.Tensor, keys: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        if queries.ndim != 2 or keys.ndim != 2:
            raise DimMismatch("queries and keys must be 2-D")
        if queries.shape[1] != self.dim or keys.shape[1] != self.dim:
            raise DimMismatch(
                f"expected dim {self.dim}, got queries {tuple(queries.shape)} "
                f"keys {tuple(keys.shape)}"
            )
        # (T_q, 1, D) + (1, T_k, D) -> tanh -> dot with w_a -> (T_q, T_k)
        hidden = torch.tanh(
            (queries @ self.W_a).unsqueeze(1) + (keys @ self.U_a).unsqueeze(0) + self.b_a
        )
        scores = hidden @ self.w_a
        alpha = torch.softmax(scores, dim=-1)
        return alpha @ keys, alpha


class ScalarSequencePredictor(nn.Module):
    """Two conv-relu-norm-dropout layers plus a linear head to one scalar per frame."""

    def __init__(self, dim: int, kernel: int = 3, dropout: float = 0.5):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, dim, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(dim)
        self.conv2 = nn.Conv1d(dim, dim, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.relu(self.conv1(x.t().unsqueeze(0))).squeeze(0).t()
        y = self.dropout(self.norm1(y))
        y = torch.relu(self.conv2(y.t().unsqueeze(0))).squeeze(0).t()
        y = self.dropout(self.norm2(y))
        return self.out(y).squeeze(1)


@dataclass
class ProsodyOutput:
    """Fused affect features at mel rate plus the predicted prosody tracks."""

    h_aro: torch.Tensor        # (T_v, D) arousal-fused features
    h_val: torch.Tensor        # (T_v, D) valence-fused features
    features: torch.Tensor     # (T_mel, 2D) upsampled column-concatenation
    energy: torch.Tensor | None  # (T_mel,) predicted energy, normalized scale
    pitch: torch.Tensor | None   # (T_mel,) predicted pitch, normalized log-F0 scale
    energy_weights: torch.Tensor  # (T_v, T_mel) additive-attention weights
    pitch_weights: torch.Tensor   # (T_v, T_mel)


class ContextProsodyPredictor(nn.Module):
    """Predict context-aware global energy and pitch from face frames."""

    def __init__(self, d_face: int, dim: int, n: int,
                 predictor_kernel: int = 3, predictor_dropout: float = 0.5):
        super().__init__()
        self.dim = dim
        self.n = n
        self.aro_proj = nn.Linear(d_face, dim)
        self.val_proj = nn.Linear(d_face, dim)
        self.energy_attention = AdditiveAttention(dim)
        self.pitch_attention = AdditiveAttention(dim)
        self.energy_predictor = ScalarSequencePredictor(dim, predictor_kernel,
                                                        predictor_dropout)
        self.pitch_predictor = ScalarSequencePredictor(dim, predictor_kernel,
                                                       predictor_dropout)

    def forward(self, face_feats: torch.Tensor, t_lip_pho: torch.Tensor
                ) -> ProsodyOutput:
        if face_feats.ndim != 2 or face_feats.shape[0] == 0:
            raise DimMismatch(f"expected (T_v>0, d_face), got {tuple(face_feats.shape)}")
        if t_lip_pho.shape[0] != self.n * face_feats.shape[0]:
            raise DimMismatch(
                f"t_lip_pho length {t_lip_pho.shape[0]} != n*T_v "
                f"{self.n * face_feats.shape[0]}"
            )
        aro = self.aro_proj(face_feats)
        val = self.val_proj(face_feats)
        h_aro, w_e = self.energy_attention(aro, t_lip_pho)
        h_val, w_p = self.pitch_attention(val, t_lip_pho)
        energy = torch.repeat_interleave(self.energy_predictor(h_aro), self.n)
        pitch = torch.repeat_interleave(self.pitch_predictor(h_val), self.n)
        features = torch.cat([
            torch.repeat_interleave(h_aro, self.n, dim=0),
            torch.repeat_interleave(h_val, self.n, dim=0),
        ], dim=1)
        return ProsodyOutput(h_aro=h_aro, h_val=h_val, features=features,
                             energy=energy, pitch=pitch,
                             energy_weights=w_e, pitch_weights=w_p)

    def bypass(self, t_mel: int, dtype=torch.float64, device=None) -> ProsodyOutput:
        """Ablation: zero features of matching shape, no predicted tracks."""
        zeros = torch.zeros(t_mel, 2 * self.dim, dtype=dtype, device=device)
        empty = torch.zeros(0, 0, dtype=dtype, device=device)
        return ProsodyOutput(h_aro=empty, h_val=empty, features=zeros,
                             energy=None, pitch=None,
                             energy_weights=empty, pitch_weights=empty)
