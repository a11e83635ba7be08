"""Sequential curriculum fine-tuning with a frozen backbone.

Stages run strictly 1 -> 2 -> 3; the adapters that finish stage k are
the initialization for stage k+1. Each stage minimizes next-token NLL on
completion tokens only and stops early once the held-out loss stops
improving.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import torch
from torch import nn

from . import data as data_mod
from .data import StageExample, StageFileError, holdout_split, load_manifest, load_stage_file, make_batches
from .model import (
    adapter_state_dict,
    apply_adapters,
    backbone_parameters,
    load_adapter_state,
    make_backbone,
    trainable_parameters,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainPlan:
    stage_files: list[str]  # stage1, stage2, stage3 paths, in that order
    manifest: Optional[str] = None
    rank: int = 8
    alpha: float = 16.0
    batch_size: int = 32
    max_seq_len: int = 8192
    learning_rate: float = 1e-4
    warmup_steps: int = 30
    patience: int = 3
    eval_every: int = 10
    max_steps_per_stage: int = 500
    holdout_fraction: float = 0.05
    seed: int = 0
    out_dir: str = "checkpoints"

    def __post_init__(self):
        if len(self.stage_files) != 3:
            raise ValueError("plan needs exactly three stage files (stage 1, 2, 3 in order)")
        for position, path in enumerate(self.stage_files, start=1):
            name = Path(path).name
            if f"stage{position}" not in name:
                raise ValueError(
                    f"stage files must be ordered 1 -> 2 -> 3; position {position} got {name!r}"
                )


def masked_nll(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token NLL over completion positions only. Prompt and
    padding positions contribute exactly zero loss (and zero gradient)."""
    log_probs = torch.log_softmax(logits, dim=-1)
    token_nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    masked = token_nll * mask
    denom = mask.sum()
    if denom.item() == 0:
        raise ValueError("batch has no completion tokens to learn from")
    return masked.sum() / denom


def evaluate_loss(model: nn.Module, examples: list[StageExample], plan: TrainPlan) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for input_ids, targets, mask in make_batches(examples, plan.batch_size, plan.max_seq_len):
            loss = masked_nll(model(input_ids), targets, mask)
            n = int(mask.sum().item())
            total += loss.item() * n
            count += n
    model.train()
    return total / max(count, 1)


@dataclass
class StageOutcome:
    stage: int
    steps: int
    initial_loss: float
    final_train_loss: float
    best_heldout_loss: float
    checkpoint: str


class MetricsLog:
    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, **fields) -> None:
        self._fh.write(json.dumps(fields, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _lr_at(step: int, plan: TrainPlan) -> float:
    if step < plan.warmup_steps:
        return plan.learning_rate * (step + 1) / plan.warmup_steps
    return plan.learning_rate


def _usable_examples(
    examples: list[StageExample], stage: int, max_seq_len: int
) -> list[StageExample]:
    """Drop examples whose completion is entirely cut off by truncation;
    they would contribute zero loss (or poison a whole batch)."""
    usable = []
    for ex in examples:
        _, mask = data_mod.encode_example(ex, max_seq_len)
        if bool(mask.any()):
            usable.append(ex)
    dropped = len(examples) - len(usable)
    if dropped:
        logger.warning(
            "stage %d: dropped %d example(s) whose prompt fills the whole window",
            stage, dropped,
        )
    return usable


def train_stage(
    model: nn.Module,
    stage: int,
    examples: list[StageExample],
    plan: TrainPlan,
    log: MetricsLog,
) -> StageOutcome:
    window = min(plan.max_seq_len, getattr(model, "max_len", plan.max_seq_len))
    plan = replace(plan, max_seq_len=window)
    examples = _usable_examples(examples, stage, window)
    if not examples:
        raise StageFileError(
            f"stage {stage}: every example overflows the {window}-token window"
        )
    train_examples, heldout = holdout_split(examples, plan.holdout_fraction)
    if not train_examples:
        raise StageFileError(f"stage {stage}: no training examples after the held-out split")
    eval_examples = heldout or train_examples
    optimizer = torch.optim.AdamW(trainable_parameters(model), lr=plan.learning_rate)

    initial_loss = evaluate_loss(model, train_examples, plan)
    log.write(stage=stage, step=0, split="init", loss=initial_loss)

    best_heldout = evaluate_loss(model, eval_examples, plan)
    best_state = adapter_state_dict(model)
    evals_without_improvement = 0
    step = 0
    last_train_loss = initial_loss
    stop = False
    while not stop and step < plan.max_steps_per_stage:
        for input_ids, targets, mask in make_batches(
            train_examples, plan.batch_size, plan.max_seq_len
        ):
            lr = _lr_at(step, plan)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = masked_nll(model(input_ids), targets, mask)
            loss.backward()
            optimizer.step()
            step += 1
            last_train_loss = loss.item()
            log.write(stage=stage, step=step, split="train", loss=last_train_loss)
            if step % plan.eval_every == 0:
                heldout_loss = evaluate_loss(model, eval_examples, plan)
                log.write(stage=stage, step=step, split="heldout", loss=heldout_loss)
                if heldout_loss < best_heldout - 1e-6:
                    best_heldout = heldout_loss
                    best_state = adapter_state_dict(model)
                    evals_without_improvement = 0
                else:
                    evals_without_improvement += 1
                    if evals_without_improvement >= plan.patience:
                        logger.info(
                            "stage %d: early stop at step %d (no improvement for %d evals)",
                            stage, step, plan.patience,
                        )
                        stop = True
                        break
            if step >= plan.max_steps_per_stage:
                break

    load_adapter_state(model, best_state)
    final_train_loss = evaluate_loss(model, train_examples, plan)
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / f"adapter-stage{stage}.pt"
    torch.save(best_state, checkpoint)
    return StageOutcome(
        stage=stage,
        steps=step,
        initial_loss=initial_loss,
        final_train_loss=final_train_loss,
        best_heldout_loss=best_heldout,
        checkpoint=str(checkpoint),
    )


def train_curriculum(plan: TrainPlan, backbone: str = "toy") -> list[StageOutcome]:
    """Run stages 1 -> 2 -> 3 sequentially; stage k+1 starts from the
    adapters stage k ended with. The backbone never updates."""
    torch.manual_seed(plan.seed)
    manifest = load_manifest(plan.manifest) if plan.manifest else None
    stage_examples = [
        load_stage_file(path, stage, manifest)
        for stage, path in enumerate(plan.stage_files, start=1)
    ]
    model = apply_adapters(make_backbone(backbone), plan.rank, plan.alpha)
    n_params = sum(p.numel() for p in model.parameters())
    n_trainable = sum(p.numel() for p in trainable_parameters(model))
    logger.info("backbone %s: %d params, %d trainable (adapters)", backbone, n_params, n_trainable)

    backbone_before = [p.detach().clone() for p in backbone_parameters(model)]
    log = MetricsLog(Path(plan.out_dir) / "metrics.jsonl")
    outcomes = []
    try:
        for stage, examples in enumerate(stage_examples, start=1):
            outcome = train_stage(model, stage, examples, plan, log)
            outcomes.append(outcome)
    finally:
        log.close()
    for before, after in zip(backbone_before, backbone_parameters(model)):
        if not torch.equal(before, after):
            raise RuntimeError("backbone parameters changed during training")
    return outcomes
