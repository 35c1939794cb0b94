"""Full dubbing model: aligner + prosody predictor + acoustic decoder.

The model runs per sample on unbatched float64 tensors. Ablation switches
remove one ingredient each while preserving every shape contract:

* ``no_cda_context``: zero the context segments of the phoneme embeddings and
  projected lip features before encoding (content removed, positions kept).
* ``no_cpp``: bypass the prosody predictor; its feature block is replaced by
  zeros and no prosody tracks are predicted (or supervised).
* ``no_cad_context``: feed an all-mask context mel to the decoder instead of
  the ground-truth neighbour mels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from torch import nn

from .aligner import AlignedFeatures, ContextDurationAligner
from .data import NormStats, SelectedContext, build_masked_mel_context
from .decoder import ContextAcousticDecoder
from .prosody import ContextProsodyPredictor, ProsodyOutput

DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    """Every architecture hyperparameter, serialized into checkpoints."""

    vocab: int
    d_lip: int
    d_face: int
    n_mels: int
    n: int                      # mel frames per video frame
    d_model: int = 32
    n_blocks: int = 1           # FFT blocks per encoder/decoder stack
    fft_heads: int = 2
    aligner_heads: int = 2
    ffn_dim: int = 64
    ffn_kernel: int = 9
    dropout: float = 0.1
    dab_descriptors: int = 8
    postnet_hidden: int = 32
    postnet_kernel: int = 5
    predictor_kernel: int = 3
    predictor_dropout: float = 0.5

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("ascii")
        return hashlib.sha256(payload).hexdigest()

    @classmethod
    def paper(cls, vocab: int, d_lip: int, d_face: int, n_mels: int, n: int,
              **overrides) -> "ModelConfig":
        """Full-scale preset: 256-dim stacks of 6 blocks, 8 aligner heads."""
        defaults = dict(d_model=256, n_blocks=6, fft_heads=2, aligner_heads=8,
                        ffn_dim=1024, dab_descriptors=32, postnet_hidden=256)
        defaults.update(overrides)
        return cls(vocab=vocab, d_lip=d_lip, d_face=d_face, n_mels=n_mels, n=n,
                   **defaults)


@dataclass(frozen=True)
class Ablation:
    no_cda_context: bool = False
    no_cpp: bool = False
    no_cad_context: bool = False

    @property
    def any(self) -> bool:
        return self.no_cda_context or self.no_cpp or self.no_cad_context


@dataclass
class ModelInputs:
    """Tensors for one forward pass, already normalized where applicable."""

    phonemes: torch.Tensor       # (T_p,) long
    lips: torch.Tensor           # (T_v, d_lip)
    faces: torch.Tensor          # (T_v, d_face)
    masked_mel: torch.Tensor     # (T_mel, n_mels) normalized, current masked
    mel_target: torch.Tensor     # (T_mel, n_mels) normalized
    energy_target: torch.Tensor  # (T_mel,) normalized
    pitch_target: torch.Tensor   # (T_mel,) normalized log-F0 (0 where unvoiced)
    voiced: torch.Tensor         # (T_mel,) bool
    pho_zero_mask: torch.Tensor | None = None
    lip_zero_mask: torch.Tensor | None = None


@dataclass
class ModelOutput:
    mel_refined: torch.Tensor   # (T_mel, n_mels) normalized space
    mel_coarse: torch.Tensor    # (T_mel, n_mels)
    energy: torch.Tensor | None
    pitch: torch.Tensor | None
    aligned: AlignedFeatures
    prosody: ProsodyOutput


class DubbingModel(nn.Module):
    """Context-aware dubbing network over concatenated prev/cur/fol sequences."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.aligner = ContextDurationAligner(
            vocab=cfg.vocab, d_lip=cfg.d_lip, dim=cfg.d_model, n=cfg.n,
            n_blocks=cfg.n_blocks, fft_heads=cfg.fft_heads, ffn_dim=cfg.ffn_dim,
            aligner_heads=cfg.aligner_heads, ffn_kernel=cfg.ffn_kernel,
            dropout=cfg.dropout,
        )
        self.prosody = ContextProsodyPredictor(
            d_face=cfg.d_face, dim=cfg.d_model, n=cfg.n,
            predictor_kernel=cfg.predictor_kernel,
            predictor_dropout=cfg.predictor_dropout,
        )
        self.decoder = ContextAcousticDecoder(
            feature_dim=3 * cfg.d_model, dim=cfg.d_model, n_mels=cfg.n_mels,
            n_blocks=cfg.n_blocks, n_heads=cfg.fft_heads, ffn_dim=cfg.ffn_dim,
            n_descriptors=cfg.dab_descriptors, postnet_hidden=cfg.postnet_hidden,
            ffn_kernel=cfg.ffn_kernel, postnet_kernel=cfg.postnet_kernel,
            dropout=cfg.dropout,
        )
        self.to(DTYPE)

    def forward(self, inputs: ModelInputs, ablation: Ablation = Ablation()
                ) -> ModelOutput:
        aligned = self.aligner(inputs.phonemes, inputs.lips,
                               inputs.pho_zero_mask, inputs.lip_zero_mask)
        t_mel = aligned.t_lip_pho.shape[0]
        if ablation.no_cpp:
            pros = self.prosody.bypass(t_mel, dtype=aligned.t_lip_pho.dtype,
                                       device=aligned.t_lip_pho.device)
        else:
            pros = self.prosody(inputs.faces, aligned.t_lip_pho)
        feats = torch.cat([aligned.t_lip_pho, pros.features], dim=1)
        masked_mel = inputs.masked_mel
        if ablation.no_cad_context:
            masked_mel = torch.zeros_like(masked_mel)
        refined, coarse = self.decoder(feats, masked_mel)
        return ModelOutput(mel_refined=refined, mel_coarse=coarse,
                           energy=pros.energy, pitch=pros.pitch,
                           aligned=aligned, prosody=pros)


def _context_zero_masks(sel: SelectedContext) -> tuple[torch.Tensor, torch.Tensor]:
    pho = torch.ones(sel.t_p, dtype=torch.bool)
    vid = torch.ones(sel.t_v, dtype=torch.bool)
    ps, pe = sel.bounds.phoneme[1]
    vs, ve = sel.bounds.video[1]
    pho[ps:pe] = False
    vid[vs:ve] = False
    return pho, vid


def normalized_targets(sel: SelectedContext, stats: NormStats
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mel, energy, log-pitch) targets on the normalized training scale."""
    mel = (sel.mel_gt - stats.mel_mean) / stats.mel_std
    energy = (sel.energy_gt - stats.energy_mean) / stats.energy_std
    voiced = sel.voiced_gt.astype(bool)
    pitch = np.zeros_like(sel.pitch_gt)
    if voiced.any():
        pitch[voiced] = (np.log(sel.pitch_gt[voiced]) - stats.pitch_log_mean) \
            / stats.pitch_log_std
    return mel, energy, pitch


def prepare_inputs(sel: SelectedContext, stats: NormStats,
                   ablation: Ablation = Ablation()) -> ModelInputs:
    """Normalize a selected context and pack it into forward-pass tensors.

    The masked context mel is built in normalized space, so the mask fill
    value 0.0 sits at the corpus mean. The current sentence's mel rows never
    reach the model input.
    """
    mel_norm, energy_norm, pitch_norm = normalized_targets(sel, stats)
    sel_norm = replace_mel(sel, mel_norm)
    masked = build_masked_mel_context(sel_norm)
    pho_mask = lip_mask = None
    if ablation.no_cda_context:
        pho_mask, lip_mask = _context_zero_masks(sel)
    return ModelInputs(
        phonemes=torch.from_numpy(np.ascontiguousarray(sel.phoneme_seq)),
        lips=torch.from_numpy(sel.lip_seq).to(DTYPE),
        faces=torch.from_numpy(sel.face_seq).to(DTYPE),
        masked_mel=torch.from_numpy(masked).to(DTYPE),
        mel_target=torch.from_numpy(mel_norm).to(DTYPE),
        energy_target=torch.from_numpy(energy_norm).to(DTYPE),
        pitch_target=torch.from_numpy(pitch_norm).to(DTYPE),
        voiced=torch.from_numpy(sel.voiced_gt.astype(bool)),
        pho_zero_mask=pho_mask,
        lip_zero_mask=lip_mask,
    )


def replace_mel(sel: SelectedContext, mel: np.ndarray) -> SelectedContext:
    return replace(sel, mel_gt=mel)


def synthesize_current(model: DubbingModel, sel: SelectedContext, stats: NormStats,
                       ablation: Ablation = Ablation()) -> np.ndarray:
    """Run the model in eval mode and return the current sentence's raw-scale mel."""
    from .decoder import extract_current

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            inputs = prepare_inputs(sel, stats, ablation)
            out = model(inputs, ablation)
    finally:
        model.train(was_training)
    full = out.mel_refined.numpy()
    raw = full * stats.mel_std + stats.mel_mean
    return np.asarray(extract_current(raw, sel.bounds.mel_current()))
