"""Command line entry points.

Subcommands: featurize (WAV to feature files), gradcheck (print the
verification suite), train (JSON config), eval (checkpoint + dataset
cache), ablate (the 8-mode comparison matrix). Exit codes: 0 success,
1 failed checks or aborted training, 2 usage/config/input errors.
The SPOTLIGHT_SEED environment variable overrides the configured seed
for train and ablate.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import audiofeat, tensorio
from .metrics import evaluate
from .objectives import LossWeights, TrainingAbort
from .optim import AdamWConfig
from .styleenc import StyleEncoderConfig
from .synthdata import SynthSpec, generate_dataset, load_dataset, save_dataset, train_eval_split
from .toymodel import ToyModelConfig, load_model, save_model
from .training import MODES, TrainConfig, run_training
from .verification import run_suite, sd_content_gradient_is_zero

GRAD_TOLERANCE = 1e-3


class ConfigError(ValueError):
    """Bad run configuration; maps to exit code 2."""


_NESTED = {
    "optimizer": AdamWConfig,
    "weights": LossWeights,
    "model": ToyModelConfig,
    "encoder": StyleEncoderConfig,
    "data": SynthSpec,
}


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}{key}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _from_dict(_NESTED[key], value, f"{path}{key}.")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config section {path or '<root>'}: {exc}") from exc


def build_train_config(data: dict) -> TrainConfig:
    config = _from_dict(TrainConfig, data, "")
    if config.mode not in MODES:
        raise ConfigError(f"unknown mode {config.mode!r}; choose from {sorted(MODES)}")
    return config


def _apply_seed_env(config: TrainConfig) -> TrainConfig:
    env = os.environ.get("SPOTLIGHT_SEED")
    if env is None:
        return config
    try:
        seed = int(env)
    except ValueError as exc:
        raise ConfigError(f"SPOTLIGHT_SEED must be an integer, got {env!r}") from exc
    return dataclasses.replace(config, seed=seed)


def cmd_featurize(args) -> int:
    wav = audiofeat.load_wav(args.wav)
    mel = audiofeat.mel_spectrogram(wav)
    f0, vuv = audiofeat.estimate_f0_vuv(wav)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_feature_file(out / "mel.sftr", mel.frames)
    tensorio.write_feature_file(out / "lowband.sftr", audiofeat.low_band(mel.frames))
    tensorio.write_feature_file(out / "f0.sftr", f0.astype(np.float32)[:, None])
    tensorio.write_feature_file(out / "vuv.sftr", vuv.astype(np.float32)[:, None])
    sidecar = {
        "sample_rate": wav.sample_rate,
        "frames": int(mel.frames.shape[0]),
        "hop_length": audiofeat.HOP_LENGTH,
        "win_length": audiofeat.WIN_LENGTH,
        "n_fft": audiofeat.N_FFT,
        "files": {
            "mel": "mel.sftr",
            "lowband": "lowband.sftr",
            "f0": "f0.sftr",
            "vuv": "vuv.sftr",
        },
    }
    with open(out / "features.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"featurized {args.wav}: {mel.frames.shape[0]} frames -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, corrupt=args.corrupt)
    failed = []
    for name, err in results.items():
        ok = err < GRAD_TOLERANCE
        print(f"{name:32s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    zero_ok = sd_content_gradient_is_zero(args.seed)
    print(f"{'sd_content_grad_zero':32s} {'ok' if zero_ok else 'FAIL'}")
    if not zero_ok:
        failed.append("sd_content_grad_zero")
    if failed:
        print(f"{len(failed)} gradient check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _eval_opts(mode_name: str):
    return MODES[mode_name].encode_options()


def cmd_train(args) -> int:
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    config = _apply_seed_env(build_train_config(raw))
    out = Path(args.out if args.out else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(config.data)
    save_dataset(out / "data", samples, config.data)

    def progress(step, model, result):
        if result.history:
            last = result.history[-1]
            print(f"step {step:5d} total={last['total']:.4f} recon={last['recon']:.4f}")

    hook_steps = tuple(range(50, config.steps + 1, 50))
    result = run_training(config, samples=samples, hook=progress, hook_steps=hook_steps)
    with open(out / "losses.ndjson", "w") as fh:
        for row in result.history:
            fh.write(json.dumps(row) + "\n")
    save_model(out / "model", result.model, extra={"mode": config.mode, "seed": config.seed})
    mode_opts = _eval_opts(config.mode)
    m = evaluate(result.model, samples, result.eval_idx, config.data, mode_opts)
    report = {
        "mode": config.mode,
        "seed": config.seed,
        "steps": config.steps,
        "final_losses": result.history[-1] if result.history else {},
        "eval": m.as_dict(),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {config.steps} steps (mode {config.mode}); report at {out / 'report.json'}")
    return 0


def cmd_eval(args) -> int:
    samples, spec = load_dataset(args.data)
    manifest, _ = tensorio.load_checkpoint(args.model)
    _, eval_idx = train_eval_split(samples, spec)
    indices = eval_idx if not args.all_samples else list(range(len(samples)))
    if manifest.get("model_type") == "oracle":
        m = evaluate(None, samples, indices, spec)
    else:
        model, manifest = load_model(args.model)
        m = evaluate(model, samples, indices, spec, _eval_opts(manifest.get("mode", "full")))
    print(json.dumps(m.as_dict(), indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    base = TrainConfig(steps=args.steps, seed=args.seed)
    base = _apply_seed_env(base)
    samples = generate_dataset(base.data)
    rows = []
    for name in MODES:
        config = dataclasses.replace(base, mode=name)
        result = run_training(config, samples=samples)
        m = evaluate(result.model, samples, result.eval_idx, config.data, _eval_opts(name))
        final = result.history[-1]
        rows.append({"mode": name, "final_losses": final, "eval": m.as_dict()})
        print(f"finished mode {name:16s} total={final['total']:.4f}")
    report = {"seed": base.seed, "steps": base.steps, "modes": rows}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _print_ablation_table(rows)
    print(f"report at {out}")
    return 0


def _print_ablation_table(rows: list[dict]) -> None:
    header = (
        f"{'mode':16s} {'total':>8s} {'recon':>8s} {'rvq':>8s} {'sd':>8s} {'sp':>8s} "
        f"{'recon_l1':>9s} {'vuv_f1':>7s} {'rmse_f0':>8s} {'ortho':>8s} {'quant':>8s} {'util':>6s}"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        losses = row["final_losses"]
        ev = row["eval"]
        util = min(ev["utilization"]) if ev["utilization"] else 0.0
        print(
            f"{row['mode']:16s} {losses['total']:8.4f} {losses['recon']:8.4f} "
            f"{losses['rvq']:8.4f} {losses['sd']:8.4f} {losses['sp']:8.4f} "
            f"{ev['recon_l1']:9.4f} {ev['vuv_f1']:7.3f} {ev['rmse_f0_proxy']:8.2f} "
            f"{ev['orthogonality']:8.4f} {ev['quant_err']:8.4f} {util:6.3f}"
        )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="voxstyle",
        description="Voiced-aware style quantization lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="WAV file to mel/f0/vuv feature files")
    p.add_argument("--wav", required=True, help="mono 16-bit PCM WAV input")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train the toy model from a JSON config")
    p.add_argument("--config", required=True, help="strict JSON run config")
    p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset cache")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset cache directory")
    p.add_argument("--all-samples", action="store_true", help="use every sample, not eval split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all ablation modes")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--out", default="ablation_report.json")
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, audiofeat.UnsupportedWavError, tensorio.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAbort as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
