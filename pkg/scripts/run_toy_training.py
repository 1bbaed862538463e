#!/usr/bin/env python3
"""Train the toy model once and watch the disentanglement metrics move.

Unlike `voxstyle train`, this evaluates at checkpoints along the way, so
you can see recon_l1 and the orthogonality score drop while the codebooks
fill in. With --steps 2000 it also reports the style-transfer success
rate at the end.

    python3 scripts/run_toy_training.py --steps 500 --mode full
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxstyle.metrics import evaluate, transfer_success_rate
from voxstyle.training import MODES, TrainConfig, run_training


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--mode", choices=sorted(MODES), default="full")
    parser.add_argument("--out", default=None, help="optional path for a JSON metric trace")
    args = parser.parse_args()

    checkpoints = sorted({0, args.steps // 4, args.steps // 2, args.steps} - {0} | {0})
    trace = {}
    t0 = time.time()

    def hook(step, model, result):
        opts = MODES[result.config.mode].encode_options()
        m = evaluate(model, result.samples, result.eval_idx, result.config.data, opts)
        trace[step] = m.as_dict()
        util = min(m.utilization) if m.utilization else 0.0
        print(
            f"[{time.time() - t0:6.1f}s] step {step:5d}  recon_l1={m.recon_l1:.4f}  "
            f"ortho={m.orthogonality:.2e}  util_min={util:.3f}  vuv_f1={m.vuv_f1:.3f}"
        )

    config = TrainConfig(steps=args.steps, seed=args.seed, mode=args.mode)
    result = run_training(config, hook=hook, hook_steps=tuple(c for c in checkpoints if c))

    opts = MODES[args.mode].encode_options()
    rate, total = transfer_success_rate(
        result.model, result.samples, result.eval_idx, config.data, opts
    )
    print(f"style transfer: {rate:.1%} of {total} eval cross pairs follow the donor contour")
    trace["transfer"] = {"rate": rate, "pairs": total}

    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(trace, indent=2) + "\n")
        print(f"trace at {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
