"""Style encoder: conv frontend, voiced-only RVQ, filler attention, alignment.

Voiced frames are quantized through the residual stack; unvoiced
positions are filled with a learned mask embedding, and the filler
blocks (ConvNeXt mix + biased self-attention) let voiced evidence
propagate into those filled slots. Attention logits are reweighted per
key: multiplicative beta = 0.02 at mask positions by default, with "bm"
(hard zero), "plain" (no reweighting) and an additive large-negative
variant exposed for ablations. A final scaled dot-product attention
aligns the style sequence to content frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantizer import QuantizeOutput, RvqStack, rvq_forward
from .tensor import (
    DimensionError,
    Tensor,
    add,
    bias_add,
    broadcast_rows,
    concat_cols,
    constant,
    conv1d,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mul,
    scale,
    scatter_rows_filled,
    slice_cols,
    softmax_lastdim,
    transpose,
)

ATTENTION_KINDS = ("biased", "bm", "plain", "additive")
ADDITIVE_MASK_VALUE = -1e9


@dataclass(frozen=True)
class StyleEncoderConfig:
    dim: int = 256
    mel_bins: int = 80
    conv_blocks: int = 4
    uf_blocks: int = 3
    attention_heads: int = 1
    conv_expand: int = 2
    rvq_depth: int = 4
    codebook_size: int = 128
    commitment_weight: float = 0.25
    beta_mask: float = 0.02
    mask_init_range: float = 0.1

    def __post_init__(self):
        if self.dim % self.attention_heads:
            raise DimensionError(
                f"dim {self.dim} not divisible by attention_heads {self.attention_heads}"
            )


@dataclass(frozen=True)
class EncodeOptions:
    """Ablation switches for a single encode pass."""

    quantizer: str = "rt"  # "rt" | "ste"
    use_uf: bool = True  # run the filler blocks
    use_ve: bool = True  # quantize voiced frames only
    attention: str = "biased"


@dataclass
class StyleEmbedding:
    aligned: Tensor  # T_content x D, after alignment attention
    sequence: Tensor  # T x D style sequence before alignment


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    data = rng.normal(0.0, std, size=shape if shape is not None else (fan_in, fan_out))
    return Tensor(data.astype(np.float32), requires_grad=True)


class ConvNeXtBlock:
    """depthwise-7 conv, layer norm, pointwise expand, GELU, pointwise, +x."""

    def __init__(self, dim: int, expand: int, rng: np.random.Generator):
        hidden = expand * dim
        self.depthwise = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(7.0), size=(7, dim)).astype(np.float32),
            requires_grad=True,
        )
        self.ln_gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.pw_up = glorot(rng, dim, hidden)
        self.pw_up_bias = Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True)
        self.pw_down = glorot(rng, hidden, dim)
        self.pw_down_bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.depthwise": self.depthwise,
            f"{prefix}.ln_gain": self.ln_gain,
            f"{prefix}.ln_bias": self.ln_bias,
            f"{prefix}.pw_up": self.pw_up,
            f"{prefix}.pw_up_bias": self.pw_up_bias,
            f"{prefix}.pw_down": self.pw_down,
            f"{prefix}.pw_down_bias": self.pw_down_bias,
        }

    def forward(self, x: Tensor) -> Tensor:
        h = conv1d(x, self.depthwise, "depthwise_k7")
        h = layer_norm(h, self.ln_gain, self.ln_bias)
        h = gelu(bias_add(matmul(h, self.pw_up), self.pw_up_bias))
        h = bias_add(matmul(h, self.pw_down), self.pw_down_bias)
        return add(h, x)


class ConvFrontend:
    """Pointwise mel projection followed by residual conv blocks."""

    def __init__(self, config: StyleEncoderConfig, rng: np.random.Generator):
        self.proj = glorot(rng, config.mel_bins, config.dim)
        self.proj_bias = Tensor(np.zeros(config.dim, dtype=np.float32), requires_grad=True)
        self.blocks = [
            ConvNeXtBlock(config.dim, config.conv_expand, rng) for _ in range(config.conv_blocks)
        ]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.proj": self.proj, f"{prefix}.proj_bias": self.proj_bias}
        for i, block in enumerate(self.blocks):
            params.update(block.parameters(f"{prefix}.block{i}"))
        return params

    def forward(self, mel: Tensor) -> Tensor:
        h = bias_add(matmul(mel, self.proj), self.proj_bias)
        for block in self.blocks:
            h = block.forward(h)
        return h


def key_bias(vuv: np.ndarray, kind: str, beta: float) -> tuple[np.ndarray | None, str | None]:
    """Per-key logit adjustment for one attention pass.

    Returns (row, how): multiplicative factors ("mul"), additive offsets
    ("add"), or (None, None) when logits pass through untouched. Voiced
    keys are never adjusted.
    """
    vuv = np.asarray(vuv, dtype=bool)
    if kind == "plain":
        return None, None
    if kind == "biased":
        return np.where(vuv, 1.0, beta).astype(np.float64), "mul"
    if kind == "bm":
        return np.where(vuv, 1.0, 0.0).astype(np.float64), "mul"
    if kind == "additive":
        return np.where(vuv, 0.0, ADDITIVE_MASK_VALUE).astype(np.float64), "add"
    raise DimensionError(f"unknown attention kind {kind!r}")


class BiasedSelfAttention:
    """Self-attention whose logits are reweighted at unvoiced keys."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.heads = heads
        self.wq = glorot(rng, dim, dim)
        self.wk = glorot(rng, dim, dim)
        self.wv = glorot(rng, dim, dim)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk, f"{prefix}.wv": self.wv}

    def forward(self, x: Tensor, vuv: np.ndarray, kind: str, beta: float) -> Tensor:
        t = x.shape[0]
        if len(vuv) != t:
            raise DimensionError(f"attention: {len(vuv)} flags for {t} frames")
        q = matmul(x, self.wq)
        k = matmul(x, self.wk)
        v = matmul(x, self.wv)
        dh = self.dim // self.heads
        row, how = key_bias(vuv, kind, beta)
        # keep the adjustment in x's dtype so logits are not promoted
        adjust = (
            None
            if row is None
            else constant(np.repeat(row[None, :], t, axis=0).astype(x.data.dtype))
        )
        outputs = []
        for h in range(self.heads):
            lo, hi = h * dh, (h + 1) * dh
            qh, kh, vh = (slice_cols(m, lo, hi) for m in (q, k, v))
            logits = scale(matmul(qh, transpose(kh)), 1.0 / np.sqrt(dh))
            if how == "mul":
                logits = mul(logits, adjust)
            elif how == "add":
                logits = add(logits, adjust)
            outputs.append(matmul(softmax_lastdim(logits), vh))
        ctx = outputs[0] if self.heads == 1 else concat_cols(outputs)
        return add(ctx, x)


class FillerBlock:
    """One unvoiced-filler stage: ConvNeXt mix, then biased attention."""

    def __init__(self, config: StyleEncoderConfig, rng: np.random.Generator):
        self.mix = ConvNeXtBlock(config.dim, config.conv_expand, rng)
        self.attn = BiasedSelfAttention(config.dim, config.attention_heads, rng)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = self.mix.parameters(f"{prefix}.mix")
        params.update(self.attn.parameters(f"{prefix}.attn"))
        return params

    def forward(self, x: Tensor, vuv: np.ndarray, kind: str, beta: float) -> Tensor:
        return self.attn.forward(self.mix.forward(x), vuv, kind, beta)


class AlignAttention:
    """Scaled dot-product attention from content queries to style keys."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.wq = glorot(rng, dim, dim)
        self.wk = glorot(rng, dim, dim)
        self.wv = glorot(rng, dim, dim)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk, f"{prefix}.wv": self.wv}

    def forward(self, content: Tensor, style: Tensor) -> Tensor:
        q = matmul(content, self.wq)
        k = matmul(style, self.wk)
        v = matmul(style, self.wv)
        logits = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(self.dim))
        return matmul(softmax_lastdim(logits), v)


def extract_voiced(x: Tensor, vuv: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Rows of x at voiced positions, plus the index map back."""
    vuv = np.asarray(vuv, dtype=bool)
    if x.shape[0] != vuv.size:
        raise DimensionError(f"extract_voiced: {vuv.size} flags for {x.shape[0]} rows")
    index_map = np.flatnonzero(vuv)
    return gather_rows(x, index_map), index_map


class StyleEncoder:
    def __init__(self, config: StyleEncoderConfig, rng: np.random.Generator):
        self.config = config
        self.frontend = ConvFrontend(config, rng)
        self.rvq = RvqStack.create(
            config.codebook_size,
            config.dim,
            rng,
            depth=config.rvq_depth,
            commitment_weight=config.commitment_weight,
        )
        self.mask_embedding = Tensor(
            rng.uniform(-config.mask_init_range, config.mask_init_range, size=config.dim).astype(
                np.float32
            ),
            requires_grad=True,
        )
        self.fillers = [FillerBlock(config, rng) for _ in range(config.uf_blocks)]
        self.align = AlignAttention(config.dim, rng)

    def parameters(self, prefix: str = "styleenc") -> dict[str, Tensor]:
        params = self.frontend.parameters(f"{prefix}.frontend")
        params.update(self.rvq.parameters(f"{prefix}.rvq"))
        params[f"{prefix}.mask_embedding"] = self.mask_embedding
        for i, filler in enumerate(self.fillers):
            params.update(filler.parameters(f"{prefix}.filler{i}"))
        params.update(self.align.parameters(f"{prefix}.align"))
        return params

    def _empty_quant(self) -> QuantizeOutput:
        depth = self.config.rvq_depth
        zero = constant(np.zeros((), dtype=np.float32))
        return QuantizeOutput(
            quantized=Tensor(np.zeros((0, self.config.dim), dtype=np.float32)),
            indices=np.zeros((0, depth), dtype=np.int64),
            residual_norms=[0.0] * (depth + 1),
            commitment_loss=zero,
            codebook_loss=constant(np.zeros((), dtype=np.float32)),
            commitment_weight=self.config.commitment_weight,
        )

    def encode(
        self,
        mel: Tensor,
        vuv: np.ndarray,
        content: Tensor,
        opts: EncodeOptions = EncodeOptions(),
    ) -> tuple[StyleEmbedding, QuantizeOutput]:
        """Map normalized mel frames to an aligned style embedding.

        `content` supplies the query rows for the final alignment, so
        the aligned output always has content's row count. With use_ve,
        an all-unvoiced input skips quantization entirely and the whole
        sequence is mask embedding.
        """
        vuv = np.asarray(vuv, dtype=bool)
        t = mel.shape[0]
        if vuv.size != t:
            raise DimensionError(f"encode: {vuv.size} voicing flags for {t} frames")
        h = self.frontend.forward(mel)
        if opts.use_ve:
            voiced, index_map = extract_voiced(h, vuv)
            if index_map.size == 0:
                quant = self._empty_quant()
                seq = broadcast_rows(self.mask_embedding, t)
            else:
                quant = rvq_forward(self.rvq, voiced, opts.quantizer)
                seq = scatter_rows_filled(quant.quantized, index_map, self.mask_embedding, t)
        else:
            quant = rvq_forward(self.rvq, h, opts.quantizer)
            seq = quant.quantized
        if opts.use_uf:
            for filler in self.fillers:
                seq = filler.forward(seq, vuv, opts.attention, self.config.beta_mask)
        aligned = self.align.forward(content, seq)
        return StyleEmbedding(aligned=aligned, sequence=seq), quant
