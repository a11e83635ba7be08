"""Repair-experiment metrics: Pass@k, compilation rates, style-violation
density, and text similarity.

Pass@k uses the unbiased combinatorial estimator; the compilation rates
split top-1 patches into target-valid (CR_T) and the interference bucket
of target-invalid-but-source-valid (CR_S), which are disjoint by
construction.
"""

from __future__ import annotations

import json
import logging
import math
import re
import subprocess
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .sandbox import Sandbox

logger = logging.getLogger(__name__)


@dataclass
class PatchSet:
    task_id: str
    patches: list[str]
    n: int = 0
    c: Optional[int] = None  # test-passing candidates, when already known

    def __post_init__(self):
        if self.n == 0:
            self.n = len(self.patches)
        if len(self.patches) != self.n:
            raise ValueError(f"task {self.task_id}: |patches| != n")


@dataclass
class MetricReport:
    pass_at: dict[int, float] = field(default_factory=dict)
    cr_target: Optional[float] = None
    cr_source: Optional[float] = None
    svd: Optional[float] = None
    bleu4: Optional[float] = None
    rouge1: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "pass_at": {str(k): v for k, v in self.pass_at.items()},
            "cr_target": self.cr_target,
            "cr_source": self.cr_source,
            "svd": self.svd,
            "bleu4": self.bleu4,
            "rouge1": self.rouge1,
        }


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k)/C(n, k).

    Computed as a running product of ratios so no intermediate ever
    overflows or underflows for realistic n.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    prob_none = 1.0
    for i in range(k):
        prob_none *= (n - c - i) / (n - i)
    return 1.0 - prob_none


def mean_pass_at_k(results: Sequence[tuple[int, int]], k: int) -> float:
    """Aggregate over tasks: mean of per-task pass_at_k(n, c, k)."""
    if not results:
        raise ValueError("no tasks")
    return sum(pass_at_k(n, c, k) for n, c in results) / len(results)


def compilation_rates(
    sets: Sequence[PatchSet], sandbox: Sandbox, target_lang: str, source_lang: str
) -> tuple[float, float]:
    """(CR_T, CR_S) over top-1 patches, as percentages.

    CR_T counts top-1 patches valid in the target toolchain. CR_S counts
    the syntactic-interference cases: invalid in the target toolchain but
    valid in the source one. A patch valid in both counts only toward
    CR_T, so the two numerators never overlap.
    """
    if not sets:
        raise ValueError("no patch sets")
    for patch_set in sets:
        if not patch_set.patches:
            raise ValueError(f"task {patch_set.task_id}: empty patch list")
    target_ok = 0
    source_only = 0
    for patch_set in sets:
        top1 = patch_set.patches[0]
        if sandbox.syntax_check(top1, target_lang).ok:
            target_ok += 1
        elif sandbox.syntax_check(top1, source_lang).ok:
            source_only += 1
    total = len(sets)
    return 100.0 * target_ok / total, 100.0 * source_only / total


def _count_violations(output: str) -> Optional[int]:
    """Pull a violation count out of linter JSON output.

    Understands rubocop-style {"summary": {"offense_count": N}} /
    {"files": [{"offenses": [...]}]} and a bare {"violations": N}.
    """
    try:
        data = json.loads(output)
    except json.JSONDecodeError:
        return None
    if isinstance(data, dict):
        summary = data.get("summary")
        if isinstance(summary, dict) and isinstance(summary.get("offense_count"), int):
            return summary["offense_count"]
        files = data.get("files")
        if isinstance(files, list):
            total = 0
            for entry in files:
                offenses = entry.get("offenses", []) if isinstance(entry, dict) else []
                total += len(offenses)
            return total
        if isinstance(data.get("violations"), int):
            return data["violations"]
    return None


def non_blank_loc(text: str) -> int:
    return sum(1 for line in text.split("\n") if line.strip())


def svd(patches: Sequence[str], linter_cmd: str, file_ext: str = ".rb") -> Optional[float]:
    """Style violations per thousand non-blank lines of code.

    Returns None (metric absent, not zero) when the linter is not
    available or never produces parseable output.
    """
    if not patches:
        raise ValueError("no code to lint")
    total_violations = 0
    total_loc = 0
    saw_output = False
    for patch in patches:
        total_loc += non_blank_loc(patch)
        with tempfile.NamedTemporaryFile("w", suffix=file_ext, delete=False) as fh:
            fh.write(patch)
            patch_path = fh.name
        try:
            cmd = [part.replace("{file}", patch_path) for part in linter_cmd.split()]
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True, timeout=60)
            except (FileNotFoundError, subprocess.TimeoutExpired):
                return None
            count = _count_violations(proc.stdout)
            if count is None:
                continue
            saw_output = True
            total_violations += count
        finally:
            Path(patch_path).unlink(missing_ok=True)
    if not saw_output or total_loc == 0:
        return None
    return total_violations / total_loc * 1000.0


_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")


def tokenize(text: str) -> list[str]:
    """Case-sensitive split on whitespace and punctuation boundaries;
    each punctuation character is its own token."""
    return _TOKEN_RE.findall(text)


def _ngrams(tokens: Sequence[str], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def bleu4(candidate_tokens: Sequence[str], reference_tokens: Sequence[str]) -> float:
    """BLEU-4 with uniform 1..4-gram weights and brevity penalty, scaled
    to [0, 100]. Orders with a zero match count are smoothed add-one so
    short or disjoint candidates score near zero instead of erroring."""
    log_sum = 0.0
    for order in range(1, 5):
        cand_counts = _ngrams(candidate_tokens, order)
        ref_counts = _ngrams(reference_tokens, order)
        possible = max(0, len(candidate_tokens) - order + 1)
        matches = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        if matches == 0:
            precision = 1.0 / (possible + 1)
        else:
            precision = matches / possible
        log_sum += 0.25 * math.log(precision)
    geo_mean = math.exp(log_sum)
    cand_len, ref_len = len(candidate_tokens), len(reference_tokens)
    if cand_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / cand_len)
    return 100.0 * geo_mean * bp


def rouge1(candidate_tokens: Sequence[str], reference_tokens: Sequence[str]) -> float:
    """ROUGE-1 F1 on unigrams with clipped counts, scaled to [0, 100]."""
    cand_counts = Counter(candidate_tokens)
    ref_counts = Counter(reference_tokens)
    overlap = sum(min(count, ref_counts[tok]) for tok, count in cand_counts.items())
    if overlap == 0:
        return 0.0
    precision = overlap / len(candidate_tokens)
    recall = overlap / len(reference_tokens)
    return 100.0 * 2 * precision * recall / (precision + recall)


def text_similarity(candidate: str, reference: str) -> tuple[float, float]:
    """(BLEU-4, ROUGE-1) between a generated patch and its reference."""
    cand_tokens = tokenize(candidate)
    ref_tokens = tokenize(reference)
    if not cand_tokens or not ref_tokens:
        raise ValueError("both texts must be non-empty after tokenization")
    return bleu4(cand_tokens, ref_tokens), rouge1(cand_tokens, ref_tokens)


def read_patch_sets(path: str | Path) -> list[PatchSet]:
    """Input: JSONL of {task_id, patches, c?, tests?}."""
    sets = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            sets.append(
                PatchSet(
                    task_id=str(record["task_id"]),
                    patches=list(record["patches"]),
                    c=record.get("c"),
                )
            )
    return sets


def evaluate_patch_file(
    path: str | Path,
    sandbox: Sandbox,
    target_lang: str,
    source_lang: str,
    ks: Sequence[int] = (1, 3, 5),
    linter_cmd: Optional[str] = None,
    references: Optional[dict[str, str]] = None,
) -> MetricReport:
    """Full Table-style report for a patch file.

    Pass@k is computed only for tasks that carry a pre-computed correct
    count `c`; compilation rates always run through the sandbox.
    """
    sets = read_patch_sets(path)
    if not sets:
        raise ValueError(f"no patch sets in {path}")
    report = MetricReport()
    scored = [(s.n, s.c) for s in sets if s.c is not None]
    if scored:
        for k in ks:
            usable = [(n, c) for n, c in scored if k <= n]
            if usable:
                report.pass_at[k] = 100.0 * mean_pass_at_k(usable, k)
    report.cr_target, report.cr_source = compilation_rates(
        sets, sandbox, target_lang, source_lang
    )
    if linter_cmd:
        report.svd = svd([s.patches[0] for s in sets], linter_cmd)
    if references:
        bleus, rouges = [], []
        for s in sets:
            ref = references.get(s.task_id)
            if ref:
                b, r = text_similarity(s.patches[0], ref)
                bleus.append(b)
                rouges.append(r)
        if bleus:
            report.bleu4 = sum(bleus) / len(bleus)
            report.rouge1 = sum(rouges) / len(rouges)
    return report


def render_table(report: MetricReport, target_lang: str) -> str:
    """Aligned text table with the P@1 / P@3 / P@5 / CR_T / CR_S layout."""
    headers = ["Lang", "P@1", "P@3", "P@5", "CR_T", "CR_S"]
    def fmt(value: Optional[float]) -> str:
        return f"{value:.2f}" if value is not None else "-"

    row = [
        target_lang,
        fmt(report.pass_at.get(1)),
        fmt(report.pass_at.get(3)),
        fmt(report.pass_at.get(5)),
        fmt(report.cr_target),
        fmt(report.cr_source),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
        "  ".join(v.ljust(w) for v, w in zip(row, widths)),
    ]
    extra = []
    if report.svd is not None:
        extra.append(f"SVD: {report.svd:.2f}")
    if report.bleu4 is not None:
        extra.append(f"BLEU-4: {report.bleu4:.2f}")
    if report.rouge1 is not None:
        extra.append(f"ROUGE-1: {report.rouge1:.2f}")
    if extra:
        lines.append("")
        lines.append("  ".join(extra))
    return "\n".join(lines)
