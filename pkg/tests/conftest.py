"""Shared test helpers: corpus factories, micro model config, gradient oracle."""

import math

import numpy as np
import pytest
import torch

from ctxdub.arrayio import Corpus, build_corpus
from ctxdub.frames import derive_frame_ratio
from ctxdub.model import ModelConfig
from ctxdub.synth import ShapeConfig


def frame_cfg_for(n: int):
    """16 kHz / 25 fps config whose hop size yields the requested ratio n."""
    return derive_frame_ratio(16000, 640 // n, 25)


def make_shape(vocab=12, d_lip=6, d_face=5, n_mels=10, min_ph=3, max_ph=6,
               min_fr=1, max_fr=2) -> ShapeConfig:
    return ShapeConfig(vocab=vocab, d_lip=d_lip, d_face=d_face, n_mels=n_mels,
                       min_phonemes=min_ph, max_phonemes=max_ph,
                       min_frames_per_phoneme=min_fr, max_frames_per_phoneme=max_fr)


def make_corpus(seed=0, count=3, with_context=True, n=2, val_count=0,
                shape: ShapeConfig | None = None) -> Corpus:
    shape = shape or make_shape()
    return build_corpus(seed, count, frame_cfg_for(n), shape,
                        with_context=with_context, val_count=val_count)


def micro_model_config(shape: ShapeConfig, n: int, **overrides) -> ModelConfig:
    """Gradient-audit scale: every dimension <= 16, one FFT block per stack."""
    defaults = dict(d_model=8, n_blocks=1, fft_heads=2, aligner_heads=2,
                    ffn_dim=8, ffn_kernel=3, dropout=0.1, dab_descriptors=2,
                    postnet_hidden=8, postnet_kernel=5, predictor_kernel=3,
                    predictor_dropout=0.5)
    defaults.update(overrides)
    return ModelConfig(vocab=shape.vocab, d_lip=shape.d_lip, d_face=shape.d_face,
                       n_mels=shape.n_mels, n=n, **defaults)


def micro_shape() -> ShapeConfig:
    return make_shape(vocab=11, d_lip=5, d_face=5, n_mels=6, min_ph=2, max_ph=3,
                      min_fr=1, max_fr=1)


def finite_difference_gradient(loss_fn, param: torch.nn.Parameter,
                               eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one parameter tensor.

    loss_fn must re-evaluate the loss from scratch and return a float; the
    parameter is perturbed in place and restored.
    """
    flat = param.data.view(-1)
    grad = np.zeros(flat.numel())
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        f_plus = loss_fn()
        flat[i] = orig - eps
        f_minus = loss_fn()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(tuple(param.shape))


def max_rel_err(analytic: np.ndarray, fd: np.ndarray, floor: float = 1e-5) -> float:
    """Worst-case relative disagreement, floored so near-zero grads compare absolutely."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom)) if analytic.size else 0.0


def perturb_parameters(model: torch.nn.Module, seed: int, scale: float = 0.05):
    """Shift every parameter randomly so zero-initialized layers carry gradient."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(torch.randn(param.shape, generator=gen, dtype=param.dtype)
                       * scale)


def assert_row_stochastic(weights, dim=-1, tol=1e-6):
    sums = weights.sum(dim=dim) if hasattr(weights, "sum") else np.sum(weights, axis=dim)
    arr = sums.detach().numpy() if hasattr(sums, "detach") else np.asarray(sums)
    assert np.max(np.abs(arr - 1.0)) < tol


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@pytest.fixture(autouse=True)
def _torch_single_thread():
    # keeps reductions deterministic across the whole suite
    torch.set_num_threads(1)
    yield
