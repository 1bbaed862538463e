#!/usr/bin/env python3
"""Run all eight ablation modes and print the comparison table.

Thin wrapper over `voxstyle ablate`; see that subcommand for details.

    python3 scripts/run_ablation_matrix.py --steps 500 --out ablation_report.json
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxstyle.cli import main

if __name__ == "__main__":
    sys.exit(main(["ablate", *sys.argv[1:]]))
