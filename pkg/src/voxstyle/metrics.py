"""Evaluation readouts: reconstruction, voicing, f0 proxy, orthogonality,
codebook utilization, and cross-style transfer checks.

Forward passes here run without a tape (no gradients). Pitch is read
from reconstructed mel as a proxy: argmax over the low 20 mel bins,
mapped to the filter center frequency, valid because the synthetic
corpus keeps content signatures out of the low band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audiofeat import mel_bin_centers
from .styleenc import EncodeOptions
from .synthdata import SynthSample, SynthSpec, mel_denormalize, mel_normalize, vuv_from_mel
from .tensor import Tensor
from .toymodel import LOW_BAND_BINS, ToyModel


@dataclass
class Metrics:
    recon_l1: float
    vuv_f1: float
    rmse_f0_proxy: float
    orthogonality: float
    utilization: list[float]
    quant_err: float
    oracle_vuv_f1: float
    oracle_rmse_f0: float

    def as_dict(self) -> dict:
        return {
            "recon_l1": self.recon_l1,
            "vuv_f1": self.vuv_f1,
            "rmse_f0_proxy": self.rmse_f0_proxy,
            "orthogonality": self.orthogonality,
            "utilization": list(self.utilization),
            "quant_err": self.quant_err,
            "oracle_vuv_f1": self.oracle_vuv_f1,
            "oracle_rmse_f0": self.oracle_rmse_f0,
        }


def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def decode_f0_proxy(mel_raw: np.ndarray, sample_rate: int) -> np.ndarray:
    """Low-band argmax bin center (Hz) per frame."""
    centers = mel_bin_centers(sample_rate)[:LOW_BAND_BINS]
    idx = np.argmax(np.asarray(mel_raw)[:, :LOW_BAND_BINS], axis=1)
    return centers[idx]


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)))


def row_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)


def orthogonality_score(content: np.ndarray, style: np.ndarray) -> float:
    """|Chat @ Shat^T|_F^2 / T^2 with row-normalized embeddings."""
    c = row_normalize(content)
    s = row_normalize(style)
    gram = c @ s.T
    t = c.shape[0]
    return float(np.sum(gram * gram) / (t * t))


def reconstruct_raw(model: ToyModel, sample: SynthSample, opts: EncodeOptions):
    """Denormalized reconstruction plus the forward pass details."""
    mel_norm = mel_normalize(sample.mel)
    out = model.forward(Tensor(mel_norm), sample.vuv, sample.content_ids, opts)
    return mel_denormalize(out.mel_hat.data), out


def transfer_raw(
    model: ToyModel, content_from: SynthSample, style_from: SynthSample, opts: EncodeOptions
) -> np.ndarray:
    """Decode content A with the style stream of sample B."""
    mel_norm = mel_normalize(style_from.mel)
    content = model.content_encoder.forward(content_from.content_ids)
    style, _ = model.style_encoder.encode(Tensor(mel_norm), style_from.vuv, content, opts)
    global_emb = model.global_embedding(style.aligned)
    mel_hat = model.decode(content, style.aligned, global_emb)
    return mel_denormalize(mel_hat.data)


def evaluate(
    model: ToyModel | None,
    samples: list[SynthSample],
    indices: list[int],
    spec: SynthSpec,
    opts: EncodeOptions = EncodeOptions(),
) -> Metrics:
    """Aggregate metrics over a sample subset.

    With model=None the readout is the oracle bound: ground-truth mel
    stands in for the reconstruction.
    """
    recon_vals, f1_vals, rmse_vals, ortho_vals = [], [], [], []
    oracle_f1_vals, oracle_rmse_vals, quant_errs = [], [], []
    used: list[set] = []
    k = None
    for i in indices:
        s = samples[i]
        voiced = s.vuv
        gt_f0 = s.f0[voiced]
        oracle_f1_vals.append(f1_score(vuv_from_mel(s.mel), s.vuv))
        oracle_rmse_vals.append(
            rmse(decode_f0_proxy(s.mel, spec.sample_rate)[voiced], gt_f0)
        )
        if model is None:
            continue
        mel_raw, out = reconstruct_raw(model, s, opts)
        recon_vals.append(float(np.mean(np.abs(mel_normalize(mel_raw) - mel_normalize(s.mel)))))
        f1_vals.append(f1_score(vuv_from_mel(mel_raw), s.vuv))
        rmse_vals.append(rmse(decode_f0_proxy(mel_raw, spec.sample_rate)[voiced], gt_f0))
        ortho_vals.append(
            orthogonality_score(out.content.data, out.style.aligned.data)
        )
        depth = out.quant.indices.shape[1] if out.quant.indices.size else len(
            model.style_encoder.rvq.layers
        )
        if k is None:
            k = model.style_encoder.rvq.layers[0].size
            used = [set() for _ in range(depth)]
        for layer in range(out.quant.indices.shape[1]):
            used[layer].update(np.unique(out.quant.indices[:, layer]).tolist())
        frames = out.quant.indices.shape[0]
        if frames:
            quant_errs.append(out.quant.residual_norms[-1] / np.sqrt(frames))
    if model is None:
        return Metrics(
            recon_l1=0.0,
            vuv_f1=float(np.mean(oracle_f1_vals)),
            rmse_f0_proxy=float(np.mean(oracle_rmse_vals)),
            orthogonality=0.0,
            utilization=[],
            quant_err=0.0,
            oracle_vuv_f1=float(np.mean(oracle_f1_vals)),
            oracle_rmse_f0=float(np.mean(oracle_rmse_vals)),
        )
    return Metrics(
        recon_l1=float(np.mean(recon_vals)),
        vuv_f1=float(np.mean(f1_vals)),
        rmse_f0_proxy=float(np.mean(rmse_vals)),
        orthogonality=float(np.mean(ortho_vals)),
        utilization=[len(u) / k for u in used] if k else [],
        quant_err=float(np.mean(quant_errs)) if quant_errs else 0.0,
        oracle_vuv_f1=float(np.mean(oracle_f1_vals)),
        oracle_rmse_f0=float(np.mean(oracle_rmse_vals)),
    )


def transfer_success_rate(
    model: ToyModel,
    samples: list[SynthSample],
    eval_idx: list[int],
    spec: SynthSpec,
    opts: EncodeOptions = EncodeOptions(),
) -> tuple[float, int]:
    """Fraction of ordered cross-style eval pairs whose transferred
    low-band f0 contour lands closer (L2, at the content sample's
    voiced frames) to the style donor's base contour than to the
    content sample's own base contour."""
    wins = 0
    total = 0
    for ia in eval_idx:
        for ib in eval_idx:
            a, b = samples[ia], samples[ib]
            if a.style_id == b.style_id:
                continue
            mel_t = transfer_raw(model, a, b, opts)
            voiced = a.vuv
            if not voiced.any():
                continue
            dec = decode_f0_proxy(mel_t, spec.sample_rate)[voiced]
            base_a = np.full(dec.size, spec.f0_bases[a.style_id])
            base_b = np.full(dec.size, spec.f0_bases[b.style_id])
            if np.linalg.norm(dec - base_b) < np.linalg.norm(dec - base_a):
                wins += 1
            total += 1
    return (wins / total if total else 0.0), total
