"""Toy reconstruction model wrapping the style encoder.

Content is an embedding table plus one pointwise layer; a global head
mean-pools the aligned style sequence; the decoder sums content, aligned
style, and the broadcast global embedding, then maps through residual
conv blocks to standardized mel. Everything operates in the normalized
mel domain; callers denormalize for energy or pitch readouts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .objectives import MlpHead
from .styleenc import (
    ConvNeXtBlock,
    EncodeOptions,
    StyleEmbedding,
    StyleEncoder,
    StyleEncoderConfig,
    glorot,
)
from .quantizer import QuantizeOutput
from .tensor import (
    Tensor,
    add,
    bias_add,
    broadcast_rows,
    gather_rows,
    matmul,
    mean_rows,
)
from . import tensorio

LOW_BAND_BINS = 20
STYLE_HEAD_OUT = 32


@dataclass(frozen=True)
class ToyModelConfig:
    n_symbols: int = 10
    decoder_blocks: int = 3
    head_hidden: int = 64
    encoder: StyleEncoderConfig = field(default_factory=StyleEncoderConfig)


@dataclass
class ModelOutput:
    mel_hat: Tensor  # (T, 80) standardized domain
    content: Tensor  # (T, D)
    style: StyleEmbedding
    quant: QuantizeOutput


class ContentEncoder:
    def __init__(self, config: ToyModelConfig, rng: np.random.Generator):
        d = config.encoder.dim
        self.table = Tensor(
            rng.normal(0.0, 0.5, size=(config.n_symbols, d)).astype(np.float32),
            requires_grad=True,
        )
        self.mix = glorot(rng, d, d)
        self.mix_bias = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.table": self.table,
            f"{prefix}.mix": self.mix,
            f"{prefix}.mix_bias": self.mix_bias,
        }

    def forward(self, content_ids: np.ndarray) -> Tensor:
        rows = gather_rows(self.table, np.asarray(content_ids, dtype=np.int64))
        return bias_add(matmul(rows, self.mix), self.mix_bias)


class Decoder:
    def __init__(self, config: ToyModelConfig, rng: np.random.Generator):
        enc = config.encoder
        self.blocks = [
            ConvNeXtBlock(enc.dim, enc.conv_expand, rng) for _ in range(config.decoder_blocks)
        ]
        self.out = glorot(rng, enc.dim, enc.mel_bins)
        self.out_bias = Tensor(np.zeros(enc.mel_bins, dtype=np.float32), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.out": self.out, f"{prefix}.out_bias": self.out_bias}
        for i, block in enumerate(self.blocks):
            params.update(block.parameters(f"{prefix}.block{i}"))
        return params

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block.forward(x)
        return bias_add(matmul(x, self.out), self.out_bias)


class ToyModel:
    """Reconstruction lab model; all parameters reachable by stable names."""

    def __init__(self, config: ToyModelConfig, rng: np.random.Generator):
        self.config = config
        d = config.encoder.dim
        self.content_encoder = ContentEncoder(config, rng)
        self.style_encoder = StyleEncoder(config.encoder, rng)
        self.global_head = glorot(rng, d, d)
        self.global_bias = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
        self.decoder = Decoder(config, rng)
        self.style_head = MlpHead(d, STYLE_HEAD_OUT, rng, hidden=config.head_hidden)
        self.prosody_head = MlpHead(LOW_BAND_BINS, STYLE_HEAD_OUT, rng, hidden=config.head_hidden)

    def parameters(self) -> dict[str, Tensor]:
        params = self.content_encoder.parameters("content")
        params.update(self.style_encoder.parameters("styleenc"))
        params["global.head"] = self.global_head
        params["global.bias"] = self.global_bias
        params.update(self.decoder.parameters("decoder"))
        params.update(self.style_head.parameters("style_head"))
        params.update(self.prosody_head.parameters("prosody_head"))
        return params

    def global_embedding(self, aligned: Tensor) -> Tensor:
        return bias_add(matmul(mean_rows(aligned), self.global_head), self.global_bias)

    def decode(self, content: Tensor, aligned: Tensor, global_emb: Tensor) -> Tensor:
        t = content.shape[0]
        mix = add(add(content, aligned), broadcast_rows(global_emb, t))
        return self.decoder.forward(mix)

    def forward(
        self,
        mel_norm: Tensor,
        vuv: np.ndarray,
        content_ids: np.ndarray,
        opts: EncodeOptions = EncodeOptions(),
    ) -> ModelOutput:
        content = self.content_encoder.forward(content_ids)
        style, quant = self.style_encoder.encode(mel_norm, vuv, content, opts)
        global_emb = self.global_embedding(style.aligned)
        mel_hat = self.decode(content, style.aligned, global_emb)
        return ModelOutput(mel_hat=mel_hat, content=content, style=style, quant=quant)


def model_config_to_dict(config: ToyModelConfig) -> dict:
    return asdict(config)


def model_config_from_dict(data: dict) -> ToyModelConfig:
    data = dict(data)
    enc = data.pop("encoder", {})
    return ToyModelConfig(encoder=StyleEncoderConfig(**enc), **data)


def save_model(directory, model: ToyModel, extra: dict | None = None) -> None:
    manifest = {"model_type": "toy", "config": model_config_to_dict(model.config)}
    if extra:
        manifest.update(extra)
    tensors = {name: p.data for name, p in model.parameters().items()}
    tensorio.save_checkpoint(directory, manifest, tensors)


def load_model(directory) -> tuple[ToyModel, dict]:
    manifest, tensors = tensorio.load_checkpoint(directory)
    if manifest.get("model_type") != "toy":
        raise tensorio.FormatError(f"not a toy model checkpoint: {manifest.get('model_type')!r}")
    config = model_config_from_dict(manifest["config"])
    model = ToyModel(config, np.random.default_rng(0))
    params = model.parameters()
    for name, p in params.items():
        if name not in tensors:
            raise tensorio.FormatError(f"checkpoint missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise tensorio.FormatError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = tensors[name].astype(np.float32)
    return model, manifest
