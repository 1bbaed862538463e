"""Training lab: ablation modes, batched steps, deterministic runs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .objectives import (
    LossReport,
    LossWeights,
    reconstruction_l1,
    sd_loss,
    sp_loss,
    total_loss,
)
from .optim import AdamWConfig, AdamWState, adamw_step
from .quantizer import rvq_loss
from .styleenc import EncodeOptions
from .synthdata import SynthSample, SynthSpec, generate_dataset, mel_normalize, train_eval_split
from .tensor import Tape, Tensor, add, backward, constant, detach, scale, zero_grad
from .toymodel import LOW_BAND_BINS, ToyModel, ToyModelConfig


@dataclass(frozen=True)
class AblationMode:
    """Which mechanisms run during a pass; names match the study table."""

    name: str
    quantizer: str = "rt"  # rotation backward vs straight-through
    use_uf: bool = True  # unvoiced-filler blocks
    use_ve: bool = True  # quantize voiced frames only
    attention: str = "biased"
    use_sp: bool = True  # style-prosody cosine loss in the total
    use_sd: bool = True  # style-direction loss in the total

    def encode_options(self) -> EncodeOptions:
        return EncodeOptions(
            quantizer=self.quantizer,
            use_uf=self.use_uf,
            use_ve=self.use_ve,
            attention=self.attention,
        )


MODES: dict[str, AblationMode] = {
    "full": AblationMode("full"),
    "no_rt": AblationMode("no_rt", quantizer="ste"),
    "no_rt_uf": AblationMode("no_rt_uf", quantizer="ste", use_uf=False),
    "no_rt_uf_ve": AblationMode("no_rt_uf_ve", quantizer="ste", use_uf=False, use_ve=False),
    "no_sp": AblationMode("no_sp", use_sp=False),
    "no_sp_sd": AblationMode("no_sp_sd", use_sp=False, use_sd=False),
    "bm_attention": AblationMode("bm_attention", attention="bm"),
    "plain_attention": AblationMode("plain_attention", attention="plain"),
}


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 4
    seed: int = 7
    mode: str = "full"
    out_dir: str = "runs/train"
    optimizer: AdamWConfig = field(default_factory=lambda: AdamWConfig(lr=3e-4))
    weights: LossWeights = field(default_factory=LossWeights)
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    data: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class TrainResult:
    model: ToyModel
    history: list[dict]
    samples: list[SynthSample]
    train_idx: list[int]
    eval_idx: list[int]
    config: TrainConfig


def sample_losses(
    model: ToyModel, sample: SynthSample, mode: AblationMode, weights: LossWeights
) -> tuple[Tensor, LossReport]:
    """Forward one sample and assemble its weighted loss on the tape.

    Disabled sd/sp terms are still evaluated for the report, but on
    detached inputs and with zero weight, so they neither steer nor
    appear in the total.
    """
    mel_norm = mel_normalize(sample.mel)
    out = model.forward(Tensor(mel_norm), sample.vuv, sample.content_ids, mode.encode_options())
    recon = reconstruction_l1(out.mel_hat, constant(mel_norm))
    rvq = rvq_loss(out.quant)
    lowband = constant(mel_norm[:, :LOW_BAND_BINS])
    effective = weights
    if mode.use_sd:
        sd = sd_loss(out.content, out.style.aligned)
    else:
        sd = sd_loss(out.content, detach(out.style.aligned))
        effective = replace(effective, lambda_sd=0.0)
    if mode.use_sp:
        sp = sp_loss(out.style.aligned, lowband, model.style_head, model.prosody_head)
    else:
        sp = sp_loss(detach(out.style.aligned), lowband, model.style_head, model.prosody_head)
        effective = replace(effective, lambda_sp=0.0)
    return total_loss(recon, rvq, sd, sp, effective)


def train_step(
    model: ToyModel,
    batch: list[SynthSample],
    mode: AblationMode,
    weights: LossWeights,
    params: dict[str, Tensor],
    opt_state: AdamWState,
) -> LossReport:
    """One optimizer update on the mean loss over a batch."""
    reports = []
    with Tape():
        acc = None
        for sample in batch:
            loss, report = sample_losses(model, sample, mode, weights)
            reports.append(report)
            acc = loss if acc is None else add(acc, loss)
        backward(scale(acc, 1.0 / len(batch)))
    adamw_step(params, opt_state)
    zero_grad(params)
    fields = ("recon", "rvq", "adv", "sd", "sp", "total")
    means = {f: float(np.mean([getattr(r, f) for r in reports])) for f in fields}
    return LossReport(**means)


def run_training(
    config: TrainConfig,
    samples: list[SynthSample] | None = None,
    hook=None,
    hook_steps: tuple[int, ...] = (),
) -> TrainResult:
    """Train from scratch; bit-deterministic in config.

    `hook(step, model, result_so_far)` fires after initialization
    (step 0) and after each step listed in hook_steps, letting callers
    probe intermediate states without re-running prefixes.
    """
    mode = MODES[config.mode] if isinstance(config.mode, str) else config.mode
    if samples is None:
        samples = generate_dataset(config.data)
    train_idx, eval_idx = train_eval_split(samples, config.data)
    model = ToyModel(config.model, np.random.default_rng(config.seed))
    params = model.parameters()
    opt_state = AdamWState(config=config.optimizer)
    batch_rng = np.random.default_rng(config.seed + 1)
    history: list[dict] = []
    result = TrainResult(
        model=model,
        history=history,
        samples=samples,
        train_idx=train_idx,
        eval_idx=eval_idx,
        config=config,
    )
    if hook is not None:
        hook(0, model, result)
    for step in range(1, config.steps + 1):
        chosen = batch_rng.choice(
            train_idx, size=min(config.batch_size, len(train_idx)), replace=False
        )
        batch = [samples[i] for i in chosen]
        report = train_step(model, batch, mode, config.weights, params, opt_state)
        history.append({"step": step, **report.as_dict()})
        if hook is not None and step in hook_steps:
            hook(step, model, result)
    return result
