#!/usr/bin/env python3
"""Run the training runs consumed by the heavyweight acceptance tests.

Each named run trains from ``configs/acceptance/<name>.cfg`` into
``out/acceptance/<name>/``. Finished runs (final checkpoint present) are
skipped, so the campaign can be resumed after interruption.

Usage:
    python scripts/acceptance_campaign.py <run-name> [<run-name> ...]
    python scripts/acceptance_campaign.py --list
    python scripts/acceptance_campaign.py --all [--threads N]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs" / "acceptance"
OUT_DIR = ROOT / "out" / "acceptance"


def available_runs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.cfg"))


def run_one(name: str, threads: int) -> None:
    import torch

    from reverie import Config, Trainer

    torch.set_num_threads(threads)
    out = OUT_DIR / name
    if (out / "ckpt" / "final.pt").exists():
        print(f"[{name}] already complete, skipping")
        return
    cfg = Config.load(str(CONFIG_DIR / f"{name}.cfg"))
    out.mkdir(parents=True, exist_ok=True)
    print(f"[{name}] training {cfg.env_steps} steps (env={cfg.env_id}, seed={cfg.seed})", flush=True)
    t0 = time.time()
    art = Trainer(cfg, out_dir=str(out)).train()
    print(
        f"[{name}] done in {(time.time() - t0) / 3600:.2f}h: "
        f"steps={art.steps} eval={art.final_eval.mean:.2f} early_stop={art.early_stopped}",
        flush=True,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("runs", nargs="*", help="run names (see --list)")
    parser.add_argument("--list", action="store_true")
    parser.add_argument("--all", action="store_true")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    if args.list:
        for name in available_runs():
            done = (OUT_DIR / name / "ckpt" / "final.pt").exists()
            print(f"{name:24s} {'done' if done else 'pending'}")
        return 0
    names = available_runs() if args.all else args.runs
    if not names:
        parser.error("no runs given (use --all or --list)")
    for name in names:
        if name not in available_runs():
            parser.error(f"unknown run {name!r}")
        run_one(name, args.threads)
    return 0


if __name__ == "__main__":
    sys.exit(main())
