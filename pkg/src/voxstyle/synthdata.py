"""Deterministic synthetic corpus for the toy training lab.

Each sample is a parallel-grid (style, content) pair: content templates
are shared across styles. A style fixes the f0 base, vibrato, and
spectral tilt; a content template is a sequence of held symbols, some
voiced (harmonic stacks plus mid-band formant signatures at or above
1 kHz) and some unvoiced (rising high-band noise). Low mel bins
therefore carry style only, which is what the energy-ratio voicing and
low-band f0 proxy metrics rely on. Spectra are pushed through the real
mel filterbank so bin geometry matches the feature pipeline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audiofeat import LOG_FLOOR, N_FFT, mel_filterbank
from .tensorio import read_feature_file, write_feature_file

MEL_MEAN = -6.0
MEL_STD = 3.0


@dataclass(frozen=True)
class SynthSpec:
    n_styles: int = 4
    f0_bases: tuple = (120.0, 180.0, 240.0, 300.0)
    vibrato_depths: tuple = (0.02, 0.05, 0.03, 0.06)
    vibrato_rates: tuple = (4.5, 5.5, 3.5, 6.5)
    tilts: tuple = (0.8, 1.4, 1.1, 1.7)
    n_contents: int = 10
    n_symbols: int = 10
    unvoiced_symbols: tuple = (7, 8, 9)
    frames_min: int = 40
    frames_max: int = 80
    min_voiced_fraction: float = 0.3
    min_unvoiced_fraction: float = 0.2
    sample_rate: int = 22050
    hop_length: int = 256
    seed: int = 0

    def __post_init__(self):
        for name in ("f0_bases", "vibrato_depths", "vibrato_rates", "tilts"):
            if len(getattr(self, name)) < self.n_styles:
                raise ValueError(f"SynthSpec.{name} shorter than n_styles")


@dataclass
class SynthSample:
    mel: np.ndarray  # (T, 80) float32 raw log-mel
    vuv: np.ndarray  # (T,) bool
    content_ids: np.ndarray  # (T,) int64
    f0: np.ndarray  # (T,) float64, 0 where unvoiced
    style_id: int
    content_id: int


def mel_normalize(mel: np.ndarray) -> np.ndarray:
    """Fixed standardization applied before the encoder."""
    return ((np.asarray(mel, dtype=np.float64) - MEL_MEAN) / MEL_STD).astype(np.float32)


def mel_denormalize(mel: np.ndarray) -> np.ndarray:
    return (np.asarray(mel, dtype=np.float64) * MEL_STD + MEL_MEAN).astype(np.float32)


def _content_templates(spec: SynthSpec, rng: np.random.Generator) -> list[np.ndarray]:
    templates = []
    unvoiced = np.asarray(spec.unvoiced_symbols)
    for _ in range(spec.n_contents):
        while True:
            length = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            ids: list[int] = []
            while len(ids) < length:
                sym = int(rng.integers(0, spec.n_symbols))
                dur = int(rng.integers(3, 9))
                ids.extend([sym] * dur)
            arr = np.asarray(ids[:length], dtype=np.int64)
            voiced_frac = float(np.mean(~np.isin(arr, unvoiced)))
            if (
                voiced_frac >= spec.min_voiced_fraction
                and 1.0 - voiced_frac >= spec.min_unvoiced_fraction
            ):
                templates.append(arr)
                break
    return templates


def _voiced_formants(sym: int) -> tuple[tuple[float, float], ...]:
    # Signatures live at >= 1 kHz so the low band stays style-only.
    return (
        (1000.0 + 170.0 * sym, 0.25),
        (2400.0 + 230.0 * sym, 0.18),
    )


def _frame_spectrum(
    spec: SynthSpec,
    rng: np.random.Generator,
    sym: int,
    voiced: bool,
    f0: float,
    tilt: float,
    freqs: np.ndarray,
    bins: np.ndarray,
) -> np.ndarray:
    bin_hz = spec.sample_rate / N_FFT
    if voiced:
        frame = 1e-4 * (0.5 + rng.uniform(0.0, 1.0, freqs.size))
        h = 1
        limit = 0.45 * spec.sample_rate
        while h * f0 < limit:
            center = h * f0 / bin_hz
            frame += 1.5 * h ** (-tilt) * np.exp(-0.5 * (bins - center) ** 2)
            h += 1
        for fc, amp in _voiced_formants(sym):
            frame += amp * np.exp(-0.5 * ((bins - fc / bin_hz) / 3.0) ** 2)
        return frame
    shape = 0.01 + 0.8 * (freqs / (spec.sample_rate / 2.0)) ** 2
    frame = shape * rng.uniform(0.4, 1.0, freqs.size)
    fc = 4000.0 + 600.0 * (sym - 7)
    frame += 0.3 * rng.uniform(0.7, 1.0) * np.exp(-0.5 * ((bins - fc / bin_hz) / 4.0) ** 2)
    return frame


def generate_dataset(spec: SynthSpec) -> list[SynthSample]:
    """All n_styles x n_contents samples, bit-deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    templates = _content_templates(spec, rng)
    fb = mel_filterbank(spec.sample_rate)
    freqs = np.arange(N_FFT // 2 + 1, dtype=np.float64) * spec.sample_rate / N_FFT
    bins = np.arange(freqs.size, dtype=np.float64)
    unvoiced = np.asarray(spec.unvoiced_symbols)
    frame_dt = spec.hop_length / spec.sample_rate
    samples = []
    for style in range(spec.n_styles):
        base = spec.f0_bases[style]
        depth = spec.vibrato_depths[style]
        rate = spec.vibrato_rates[style]
        tilt = spec.tilts[style]
        for content in range(spec.n_contents):
            ids = templates[content]
            t = ids.size
            vuv = ~np.isin(ids, unvoiced)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            drift = rng.uniform(0.97, 1.03)
            f0 = np.zeros(t, dtype=np.float64)
            linear = np.zeros((t, freqs.size), dtype=np.float64)
            for i in range(t):
                if vuv[i]:
                    f0[i] = base * drift * (
                        1.0 + depth * np.sin(2.0 * np.pi * rate * i * frame_dt + phase)
                    )
                linear[i] = _frame_spectrum(
                    spec, rng, int(ids[i]), bool(vuv[i]), f0[i], tilt, freqs, bins
                )
            mel = np.log(np.maximum(linear @ fb.T, LOG_FLOOR)).astype(np.float32)
            samples.append(
                SynthSample(
                    mel=mel,
                    vuv=vuv,
                    content_ids=ids.copy(),
                    f0=f0,
                    style_id=style,
                    content_id=content,
                )
            )
    return samples


def train_eval_split(samples: list[SynthSample], spec: SynthSpec) -> tuple[list[int], list[int]]:
    """80/20 split by content id, so eval content is unseen in training."""
    cut = int(np.floor(0.8 * spec.n_contents))
    train = [i for i, s in enumerate(samples) if s.content_id < cut]
    evalset = [i for i, s in enumerate(samples) if s.content_id >= cut]
    return train, evalset


def vuv_from_mel(mel: np.ndarray, threshold: float = 1.0, low_bins: int = 20) -> np.ndarray:
    """Voicing re-estimate: mean per-bin linear energy, low band over high."""
    energy = np.exp(np.asarray(mel, dtype=np.float64))
    low = np.mean(energy[:, :low_bins], axis=1)
    high = np.mean(energy[:, low_bins:], axis=1)
    return low / (high + 1e-12) >= threshold


def save_dataset(directory, samples: list[SynthSample], spec: SynthSpec) -> None:
    """Feature-file cache plus an index; reload with load_dataset."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"spec": asdict(spec), "samples": []}
    for n, s in enumerate(samples):
        stem = f"sample{n:03d}"
        write_feature_file(directory / f"{stem}.mel.sftr", s.mel)
        write_feature_file(directory / f"{stem}.vuv.sftr", s.vuv.astype(np.float32)[:, None])
        write_feature_file(directory / f"{stem}.f0.sftr", s.f0.astype(np.float32)[:, None])
        write_feature_file(
            directory / f"{stem}.content.sftr", s.content_ids.astype(np.float32)[:, None]
        )
        index["samples"].append(
            {"stem": stem, "style_id": s.style_id, "content_id": s.content_id}
        )
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=2)
        fh.write("\n")


def load_dataset(directory) -> tuple[list[SynthSample], SynthSpec]:
    directory = Path(directory)
    with open(directory / "index.json") as fh:
        index = json.load(fh)
    spec_dict = index["spec"]
    for key in ("f0_bases", "vibrato_depths", "vibrato_rates", "tilts", "unvoiced_symbols"):
        spec_dict[key] = tuple(spec_dict[key])
    spec = SynthSpec(**spec_dict)
    samples = []
    for entry in index["samples"]:
        stem = entry["stem"]
        mel = read_feature_file(directory / f"{stem}.mel.sftr")
        vuv = read_feature_file(directory / f"{stem}.vuv.sftr")[:, 0] >= 0.5
        f0 = read_feature_file(directory / f"{stem}.f0.sftr")[:, 0].astype(np.float64)
        ids = read_feature_file(directory / f"{stem}.content.sftr")[:, 0].astype(np.int64)
        samples.append(
            SynthSample(
                mel=mel,
                vuv=vuv,
                content_ids=ids,
                f0=f0,
                style_id=int(entry["style_id"]),
                content_id=int(entry["content_id"]),
            )
        )
    return samples, spec
