"""Minimal command-line entry: train the three-stage curriculum."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .train import TrainPlan, train_curriculum


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Adapter fine-tuning over curriculum stage files.")
    parser.add_argument("--stages-dir", required=True, help="directory with stage{1,2,3}.jsonl and manifest.json")
    parser.add_argument("--out-dir", default="checkpoints")
    parser.add_argument("--backbone", default="toy")
    parser.add_argument("--rank", type=int, default=8)
    parser.add_argument("--alpha", type=float, default=16.0)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--max-seq-len", type=int, default=8192)
    parser.add_argument("--learning-rate", type=float, default=1e-4)
    parser.add_argument("--warmup-steps", type=int, default=30)
    parser.add_argument("--patience", type=int, default=3)
    parser.add_argument("--no-manifest-check", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    stages = Path(args.stages_dir)
    manifest = None if args.no_manifest_check else str(stages / "manifest.json")
    plan = TrainPlan(
        stage_files=[str(stages / f"stage{i}.jsonl") for i in (1, 2, 3)],
        manifest=manifest,
        rank=args.rank,
        alpha=args.alpha,
        batch_size=args.batch_size,
        max_seq_len=args.max_seq_len,
        learning_rate=args.learning_rate,
        warmup_steps=args.warmup_steps,
        patience=args.patience,
        out_dir=args.out_dir,
    )
    outcomes = train_curriculum(plan, backbone=args.backbone)
    for outcome in outcomes:
        print(
            f"stage {outcome.stage}: {outcome.steps} steps, "
            f"loss {outcome.initial_loss:.4f} -> {outcome.final_train_loss:.4f}, "
            f"checkpoint {outcome.checkpoint}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
