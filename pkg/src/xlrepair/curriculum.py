"""Stage-wise training dataset emission.

Stage 1 teaches source-language repair (buggy -> fixed), stage 2 aligns
repair behavior across languages by conditioning on the full source pair
plus the target buggy program, stage 3 is target-language repair alone.
Records are serialized with role-tagged prompt sections so any trainer
can consume them; emission is deterministic for a given corpus and set
of templates.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import prompts
from .corpus import ParallelQuad, SourcePair, TargetPair

logger = logging.getLogger(__name__)

STAGE_TEMPLATES = {1: "stage1_prompt", 2: "stage2_prompt", 3: "stage3_prompt"}


@dataclass
class StageRecord:
    stage: int
    prompt: str
    completion: str
    pair_ids: list[str]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "prompt": self.prompt,
            "completion": self.completion,
            "pair_ids": self.pair_ids,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StageRecord":
        return cls(
            stage=data["stage"],
            prompt=data["prompt"],
            completion=data["completion"],
            pair_ids=list(data["pair_ids"]),
        )


@dataclass
class CurriculumCorpus:
    """What emission needs: every transferable source pair, and the
    verified quads."""

    transferable_sources: list[SourcePair]
    quads: list[ParallelQuad]


def _record_for(
    stage: int, src: SourcePair, tgt: Optional[TargetPair], template: str
) -> StageRecord:
    if stage == 1:
        prompt = prompts.render(template, {"src_buggy": src.buggy, "src_lang": src.lang})
        return StageRecord(stage=1, prompt=prompt, completion=src.fixed, pair_ids=[src.id])
    assert tgt is not None
    if stage == 2:
        prompt = prompts.render(
            template,
            {
                "src_buggy": src.buggy,
                "src_fixed": src.fixed,
                "tgt_buggy": tgt.buggy,
                "src_lang": src.lang,
                "tgt_lang": tgt.lang,
            },
        )
        return StageRecord(
            stage=2, prompt=prompt, completion=tgt.fixed, pair_ids=[src.id, tgt.id]
        )
    if stage == 3:
        prompt = prompts.render(template, {"tgt_buggy": tgt.buggy, "tgt_lang": tgt.lang})
        return StageRecord(
            stage=3, prompt=prompt, completion=tgt.fixed, pair_ids=[src.id, tgt.id]
        )
    raise ValueError(f"unknown stage {stage}")


def build_stage_records(
    stage: int, corpus: CurriculumCorpus, template_dir: Optional[str | Path] = None
) -> list[StageRecord]:
    template = prompts.load_template(STAGE_TEMPLATES[stage], template_dir)
    records: list[StageRecord] = []
    if stage == 1:
        for src in sorted(corpus.transferable_sources, key=lambda p: p.id):
            records.append(_record_for(1, src, None, template))
    else:
        for quad in sorted(corpus.quads, key=lambda q: q.src.id):
            records.append(_record_for(stage, quad.src, quad.tgt, template))
    return records


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def emit_stage(
    stage: int,
    corpus: CurriculumCorpus,
    out_dir: str | Path,
    template_dir: Optional[str | Path] = None,
) -> tuple[Path, dict]:
    """Write stage<N>.jsonl plus its manifest entry.

    Stage 1 needs at least one transferable source pair; stages 2 and 3
    need at least one verified quad.
    """
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    records = build_stage_records(stage, corpus, template_dir)
    if not records:
        needed = "transferable source pairs" if stage == 1 else "verified parallel quads"
        raise ValueError(f"stage {stage} has no eligible records: no {needed}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"stage{stage}.jsonl"
    body = "".join(
        json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in records
    )
    path.write_text(body, encoding="utf-8")
    template_text = prompts.load_template(STAGE_TEMPLATES[stage], template_dir)
    manifest_entry = {
        "stage": stage,
        "file": path.name,
        "records": len(records),
        "corpus_hash": _sha256(body),
        "template_hash": _sha256(template_text),
    }
    return path, manifest_entry


def emit_all(
    corpus: CurriculumCorpus,
    out_dir: str | Path,
    template_dir: Optional[str | Path] = None,
) -> dict:
    """Emit all three stages plus manifest.json; returns the manifest."""
    out_dir = Path(out_dir)
    entries = {}
    for stage in (1, 2, 3):
        _, entry = emit_stage(stage, corpus, out_dir, template_dir)
        entries[str(stage)] = entry
    manifest = {"stages": entries}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def read_stage_file(path: str | Path) -> list[StageRecord]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        return [StageRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
