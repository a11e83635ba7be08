import hashlib
import json
from pathlib import Path

import pytest


def _record(stage: int, i: int) -> dict:
    # repetitive repair-shaped data a toy model can actually learn
    buggy = f"int f{i}() {{ return {i} + 1; }}"
    fixed = f"int f{i}() {{ return {i}; }}"
    tgt_buggy = f"def f{i}():\n    return {i} + 1"
    tgt_fixed = f"def f{i}():\n    return {i}"
    if stage == 1:
        prompt = f"Fix the bug.\n### Buggy (cpp)\n{buggy}\n### Fixed (cpp)\n"
        completion = fixed
        pair_ids = [f"s{i}"]
    elif stage == 2:
        prompt = (
            f"Fix the bug using the demonstration.\n### Buggy (cpp)\n{buggy}\n"
            f"### Fixed (cpp)\n{fixed}\n### Buggy (python)\n{tgt_buggy}\n### Fixed (python)\n"
        )
        completion = tgt_fixed
        pair_ids = [f"s{i}", f"t{i}"]
    else:
        prompt = f"Fix the bug.\n### Buggy (python)\n{tgt_buggy}\n### Fixed (python)\n"
        completion = tgt_fixed
        pair_ids = [f"s{i}", f"t{i}"]
    return {"stage": stage, "prompt": prompt, "completion": completion, "pair_ids": pair_ids}


def write_stage_fixtures(out_dir: Path, counts=(24, 16, 16)) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"stages": {}}
    for stage, count in zip((1, 2, 3), counts):
        body = "".join(
            json.dumps(_record(stage, i), sort_keys=True) + "\n" for i in range(count)
        )
        path = out_dir / f"stage{stage}.jsonl"
        path.write_text(body, encoding="utf-8")
        manifest["stages"][str(stage)] = {
            "stage": stage,
            "file": path.name,
            "records": count,
            "corpus_hash": hashlib.sha256(body.encode("utf-8")).hexdigest(),
            "template_hash": hashlib.sha256(b"fixture").hexdigest(),
        }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


@pytest.fixture
def stage_dir(tmp_path):
    return write_stage_fixtures(tmp_path / "stages")
