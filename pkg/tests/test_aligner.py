"""Aligner contracts: encoders, cross-modal attention, mel-rate expansion."""

import math

import numpy as np
import pytest
import torch

from conftest import (assert_row_stochastic, finite_difference_gradient,
                      make_corpus, max_rel_err)

from ctxdub.aligner import (ContextDurationAligner, LipEncoder, MelUpsampler,
                            TextEncoder, TextVideoAligner, align_text_video)
from ctxdub.data import ContextConfig, ContextSample, select_context
from ctxdub.errors import DimMismatch, UnknownPhonemeId

DT = torch.float64


def _text_encoder(vocab=12, dim=16):
    torch.manual_seed(0)
    enc = TextEncoder(vocab, dim, n_blocks=1, n_heads=2, ffn_dim=16, ffn_kernel=3)
    return enc.to(DT).eval()


def _lip_encoder(d_lip=6, dim=16):
    torch.manual_seed(1)
    enc = LipEncoder(d_lip, dim, n_blocks=1, n_heads=2, ffn_dim=16, ffn_kernel=3)
    return enc.to(DT).eval()


def test_text_encoder_shape_and_determinism():
    enc = _text_encoder()
    ids = torch.tensor([3, 1, 4, 1, 5, 9, 2])
    out1 = enc(ids)
    out2 = enc(ids)
    assert out1.shape == (7, 16)
    assert torch.equal(out1, out2)


def test_text_encoder_rejects_unknown_ids():
    enc = _text_encoder(vocab=12)
    with pytest.raises(UnknownPhonemeId):
        enc(torch.tensor([0, 12]))
    with pytest.raises(UnknownPhonemeId):
        enc(torch.tensor([-1]))


def test_text_encoder_sensitive_to_permutation():
    enc = _text_encoder()
    ids = torch.tensor([3, 1, 4, 1, 5])
    swapped = torch.tensor([1, 3, 4, 1, 5])
    assert not torch.allclose(enc(ids), enc(swapped))


def test_lip_encoder_shape_and_errors():
    enc = _lip_encoder()
    feats = torch.randn(12, 6, dtype=DT)
    assert enc(feats).shape == (12, 16)
    with pytest.raises(DimMismatch):
        enc(torch.zeros(0, 6, dtype=DT))
    with pytest.raises(DimMismatch):
        enc(torch.randn(4, 7, dtype=DT))


def test_lip_encoder_is_nonlinear_in_scale():
    enc = _lip_encoder()
    x = torch.randn(5, 6, dtype=DT)
    y1, y2 = enc(x), enc(2 * x)
    assert not torch.allclose(y2, 2 * y1)
    assert not torch.allclose(y2, y1)


def brute_force_attention(h_lip, h_pho):
    """Scalar-loop softmax attention oracle."""
    t_v, d = h_lip.shape
    t_p = h_pho.shape[0]
    a = np.zeros((t_v, t_p))
    out = np.zeros((t_v, d))
    for i in range(t_v):
        logits = [sum(h_lip[i, c] * h_pho[j, c] for c in range(d)) / math.sqrt(d)
                  for j in range(t_p)]
        m = max(logits)
        exps = [math.exp(l - m) for l in logits]
        z = sum(exps)
        for j in range(t_p):
            a[i, j] = exps[j] / z
        for c in range(d):
            out[i, c] = sum(a[i, j] * h_pho[j, c] for j in range(t_p))
    return out, a


def test_cross_modal_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h_lip = torch.tensor(rng.normal(size=(5, 8)))
        h_pho = torch.tensor(rng.normal(size=(7, 8)))
        _, a = align_text_video(h_lip, h_pho)
        assert_row_stochastic(a)


def test_cross_modal_attention_single_phoneme():
    h_lip = torch.randn(6, 8, dtype=DT)
    h_pho = torch.randn(1, 8, dtype=DT)
    out, a = align_text_video(h_lip, h_pho)
    assert torch.all(a == 1.0)
    assert torch.equal(out, h_pho.expand(6, 8))


def test_cross_modal_attention_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        h_lip = rng.normal(size=(4, 6))
        h_pho = rng.normal(size=(5, 6))
        out, a = align_text_video(torch.tensor(h_lip), torch.tensor(h_pho))
        out_o, a_o = brute_force_attention(h_lip, h_pho)
        assert np.max(np.abs(a.numpy() - a_o)) < 1e-8
        assert np.max(np.abs(out.numpy() - out_o)) < 1e-8


def test_orthonormal_rows_high_temperature_is_near_identity():
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    h = torch.tensor(q * 40.0)  # logits 1600/sqrt(6) on the diagonal, 0 elsewhere
    out, a = align_text_video(h, h)
    assert np.max(np.abs(a.numpy() - np.eye(6))) < 1e-9
    _, a_o = brute_force_attention(h.numpy(), h.numpy())
    assert np.max(np.abs(a.numpy() - a_o)) < 1e-8


def test_exact_linear_identity():
    h_lip = torch.randn(9, 16, dtype=DT)
    h_pho = torch.randn(4, 16, dtype=DT)
    out, a = align_text_video(h_lip, h_pho)
    assert torch.max(torch.abs(out - a @ h_pho)) < 1e-5
    with pytest.raises(DimMismatch):
        align_text_video(h_lip, torch.randn(4, 8, dtype=DT))


def test_multi_head_aligner_per_head_rows_and_wiring():
    torch.manual_seed(3)
    aligner = TextVideoAligner(dim=16, n_heads=4).to(DT)
    h_lip = torch.randn(5, 16, dtype=DT)
    h_pho = torch.randn(7, 16, dtype=DT)
    out, a = aligner(h_lip, h_pho)
    assert a.shape == (4, 5, 7)
    assert_row_stochastic(a)
    # reconstruct: per-head attention output, concatenated, projected
    parts = [a[h] @ h_pho[:, h * 4:(h + 1) * 4] for h in range(4)]
    expected = aligner.out_proj(torch.cat(parts, dim=1))
    assert torch.allclose(out, expected)


def test_single_head_aligner_is_pure_attention():
    aligner = TextVideoAligner(dim=8, n_heads=1)
    h_lip = torch.randn(5, 8, dtype=DT)
    h_pho = torch.randn(3, 8, dtype=DT)
    out, a = aligner(h_lip, h_pho)
    ref_out, ref_a = align_text_video(h_lip, h_pho)
    assert torch.equal(out, ref_out)
    assert torch.equal(a.squeeze(0), ref_a)


@pytest.mark.parametrize("n,t_v", [(1, 7), (2, 5), (3, 4), (4, 6)])
def test_upsampler_length_contract(n, t_v):
    torch.manual_seed(4)
    up = MelUpsampler(dim=8, n=n).to(DT)
    out = up(torch.randn(t_v, 8, dtype=DT))
    assert out.shape == (n * t_v, 8)


def test_upsampler_identity_init_for_unit_ratio():
    up = MelUpsampler(dim=8, n=1).to(DT)
    up.identity_init_()
    x = torch.randn(6, 8, dtype=DT)
    assert torch.allclose(up(x), x)


def test_upsampler_gradient_matches_finite_differences():
    torch.manual_seed(5)
    up = MelUpsampler(dim=4, n=2).to(DT)
    x = torch.randn(3, 4, dtype=DT)

    def loss_fn():
        with torch.no_grad():
            return float((up(x) ** 2).sum())

    loss = (up(x) ** 2).sum()
    loss.backward()
    for name, p in up.named_parameters():
        fd = finite_difference_gradient(loss_fn, p)
        err = max_rel_err(p.grad.numpy(), fd)
        assert err < 1e-3, f"{name}: rel err {err}"


def test_full_aligner_composition_and_empty_context_reduction():
    corpus = make_corpus(seed=9, count=3, n=4)
    sample = corpus.samples[1]
    torch.manual_seed(6)
    aligner = ContextDurationAligner(vocab=12, d_lip=6, dim=16, n=4, n_blocks=1,
                                     fft_heads=2, ffn_dim=16, aligner_heads=2,
                                     ffn_kernel=3).to(DT).eval()

    sel = select_context(sample, ContextConfig(k=4))
    out = aligner(torch.from_numpy(sel.phoneme_seq),
                  torch.from_numpy(sel.lip_seq).to(DT))
    assert out.t_lip_pho.shape == (sel.t_mel, 16)
    assert out.h_lip_pho.shape == (sel.t_v, 16)
    assert_row_stochastic(out.attention)

    # disabling both contexts must equal aligning the bare current sentence
    sel_off = select_context(sample, ContextConfig(k=4, use_prev=False,
                                                   use_fol=False))
    only_cur = ContextSample(current=sample.current, frame_cfg=sample.frame_cfg)
    sel_cur = select_context(only_cur, ContextConfig(k=4))
    out_off = aligner(torch.from_numpy(sel_off.phoneme_seq),
                      torch.from_numpy(sel_off.lip_seq).to(DT))
    out_cur = aligner(torch.from_numpy(sel_cur.phoneme_seq),
                      torch.from_numpy(sel_cur.lip_seq).to(DT))
    assert torch.equal(out_off.t_lip_pho, out_cur.t_lip_pho)


def test_full_aligner_gradient_check_pinned_instance():
    # every aligner parameter on a (T_p=5, T_v=4, n=2, D=16) instance
    torch.manual_seed(11)
    aligner = ContextDurationAligner(vocab=7, d_lip=5, dim=16, n=2, n_blocks=1,
                                     fft_heads=2, ffn_dim=16, aligner_heads=2,
                                     ffn_kernel=3).to(DT).eval()
    ids = torch.tensor([1, 4, 2, 6, 3])
    lips = torch.randn(4, 5, dtype=DT)
    target = torch.randn(8, 16, dtype=DT)

    def loss():
        out = aligner(ids, lips)
        return ((out.t_lip_pho - target) ** 2).mean()

    def loss_value():
        with torch.no_grad():
            return float(loss())

    aligner.zero_grad()
    loss().backward()
    for name, p in aligner.named_parameters():
        fd = finite_difference_gradient(loss_value, p)
        err = max_rel_err(p.grad.numpy(), fd)
        assert err < 1e-3, f"{name}: rel err {err}"


def test_attention_map_sensitive_to_phoneme_order():
    corpus = make_corpus(seed=10, count=1, with_context=False)
    sample = corpus.samples[0]
    torch.manual_seed(8)
    aligner = ContextDurationAligner(vocab=12, d_lip=6, dim=16, n=2, n_blocks=1,
                                     fft_heads=2, ffn_dim=16, aligner_heads=2,
                                     ffn_kernel=3).to(DT).eval()
    sel = select_context(sample, ContextConfig(k=4))
    ids = torch.from_numpy(sel.phoneme_seq.copy())
    lips = torch.from_numpy(sel.lip_seq).to(DT)
    # find two positions with distinct ids and swap them
    i, j = 0, next(k for k in range(1, len(ids)) if ids[k] != ids[0])
    swapped = ids.clone()
    swapped[i], swapped[j] = ids[j], ids[i]
    a1 = aligner(ids, lips).attention
    a2 = aligner(swapped, lips).attention
    assert not torch.allclose(a1, a2)


def test_length_law_over_randomized_sizes():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.choice([1, 2, 4]))
        t_v = int(rng.integers(1, 20))
        up = MelUpsampler(dim=6, n=n).to(DT)
        assert up(torch.randn(t_v, 6, dtype=DT)).shape[0] == n * t_v
