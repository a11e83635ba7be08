"""Curriculum stage-file loading, schema/manifest validation, byte-level
tokenization and batching.

Stage files are JSONL records {stage, prompt, completion, pair_ids}
accompanied by a manifest carrying per-stage record counts and content
hashes; training refuses to start on files that do not match their
manifest entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import torch

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
VOCAB_SIZE = 259


@dataclass
class StageExample:
    prompt: str
    completion: str
    pair_ids: list[str]


class StageFileError(ValueError):
    """Stage file missing, malformed, or inconsistent with the manifest."""


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_stage_file(path: str | Path, expected_stage: int, manifest: Optional[dict] = None) -> list[StageExample]:
    path = Path(path)
    if not path.exists():
        raise StageFileError(f"stage file not found: {path}")
    body = path.read_text(encoding="utf-8")
    examples: list[StageExample] = []
    for line_no, line in enumerate(body.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StageFileError(f"{path}:{line_no}: malformed JSON: {exc.msg}")
        for key in ("stage", "prompt", "completion", "pair_ids"):
            if key not in record:
                raise StageFileError(f"{path}:{line_no}: missing field {key!r}")
        if record["stage"] != expected_stage:
            raise StageFileError(
                f"{path}:{line_no}: record is stage {record['stage']}, expected {expected_stage}"
            )
        if not record["completion"]:
            raise StageFileError(f"{path}:{line_no}: empty completion")
        examples.append(
            StageExample(
                prompt=record["prompt"],
                completion=record["completion"],
                pair_ids=list(record["pair_ids"]),
            )
        )
    if not examples:
        raise StageFileError(f"{path}: stage file is empty")
    if manifest is not None:
        entry = manifest.get("stages", {}).get(str(expected_stage))
        if entry is None:
            raise StageFileError(f"manifest has no entry for stage {expected_stage}")
        if entry["records"] != len(examples):
            raise StageFileError(
                f"{path}: {len(examples)} records but manifest says {entry['records']}"
            )
        if entry["corpus_hash"] != _sha256(body):
            raise StageFileError(f"{path}: content hash does not match the manifest")
    return examples


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise StageFileError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def holdout_split(examples: list[StageExample], fraction: float = 0.05) -> tuple[list[StageExample], list[StageExample]]:
    """Deterministic split by hash of pair_ids; the held-out side is never
    empty when there are at least two examples."""
    if len(examples) < 2:
        return list(examples), []
    modulus = max(2, round(1.0 / fraction))
    keyed = [
        (int(_sha256(",".join(ex.pair_ids)), 16), ex) for ex in examples
    ]
    heldout = [ex for key, ex in keyed if key % modulus == 0]
    if not heldout:
        heldout = [min(keyed, key=lambda kv: kv[0])[1]]
    held_ids = {id(ex) for ex in heldout}
    train = [ex for ex in examples if id(ex) not in held_ids]
    return train, heldout


def encode_example(example: StageExample, max_seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Byte-level encoding: [BOS] prompt-bytes completion-bytes [EOS].

    Returns (ids, completion_mask) where the mask marks positions whose
    NEXT-token target belongs to the completion (prompt tokens carry no
    loss).
    """
    prompt_ids = list(example.prompt.encode("utf-8"))
    completion_ids = list(example.completion.encode("utf-8"))
    ids = [BOS_ID] + prompt_ids + completion_ids + [EOS_ID]
    # mask aligned with targets: target position i is ids[i+1]
    mask = [0] * len(prompt_ids) + [1] * (len(completion_ids) + 1)
    ids = ids[:max_seq_len]
    mask = mask[: len(ids) - 1]
    return torch.tensor(ids, dtype=torch.long), torch.tensor(mask, dtype=torch.bool)


def make_batches(
    examples: list[StageExample], batch_size: int, max_seq_len: int
) -> Iterator[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Yield (input_ids, target_ids, loss_mask) padded batches."""
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        encoded = [encode_example(ex, max_seq_len) for ex in chunk]
        width = max(len(ids) for ids, _ in encoded)
        input_ids = torch.full((len(chunk), width - 1), PAD_ID, dtype=torch.long)
        target_ids = torch.full((len(chunk), width - 1), PAD_ID, dtype=torch.long)
        loss_mask = torch.zeros((len(chunk), width - 1), dtype=torch.bool)
        for row, (ids, mask) in enumerate(encoded):
            n = len(ids)
            input_ids[row, : n - 1] = ids[:-1]
            target_ids[row, : n - 1] = ids[1:]
            loss_mask[row, : n - 1] = mask
        yield input_ids, target_ids, loss_mask
