"""Structure-constrained translation of the fixed source program.

Candidates are generated lazily one attempt at a time and validated
against the full oracle suite; the first all-pass candidate wins, so no
attempt is ever requested after a success. The prompt pins the
defect-controlling anchors (the diff hunks) that must survive
translation while leaving the rest of the program free to be idiomatic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import diffs, llm as llm_mod
from .corpus import SourcePair
from .descriptor import DefectDescriptor
from .llm import CompletionRequest, LLMClient
from .sandbox import Sandbox
from .testgen import TestSuite

logger = logging.getLogger(__name__)

DEFAULT_ATTEMPTS = 5


@dataclass
class TranslationAttempt:
    attempt_index: int
    candidate: Optional[str]
    passed: bool
    failures: list[dict] = field(default_factory=list)
    note: str = ""

    def summary(self) -> dict:
        return {
            "attempt_index": self.attempt_index,
            "passed": self.passed,
            "failures": self.failures,
            "note": self.note,
        }


@dataclass
class TranslationResult:
    tgt_fixed: str
    attempt_index: int
    attempts: list[TranslationAttempt]


@dataclass
class TranslationFailed:
    attempts: list[TranslationAttempt]


def _validate_candidate(
    candidate: str, target_lang: str, suite: TestSuite, sandbox: Sandbox
) -> list[dict]:
    """Run the candidate on every suite case; returns a failure record
    per non-passing case."""
    check = sandbox.syntax_check(candidate, target_lang)
    if not check.ok:
        return [{"case": -1, "category": "compile_error", "detail": check.diagnostics[:500]}]
    failures = []
    for case_no, case in enumerate(suite.cases):
        outcome = sandbox.execute(candidate, target_lang, case.input, expected=case.expected)
        if outcome.category != "pass":
            failures.append({"case": case_no, "category": outcome.category})
    return failures


def translate_fixed(
    pair: SourcePair,
    desc: DefectDescriptor,
    target_lang: str,
    suite: TestSuite,
    llm: LLMClient,
    sandbox: Sandbox,
    attempts: int = DEFAULT_ATTEMPTS,
    temperature: float = 1.0,
    max_tokens: int = 4096,
) -> TranslationResult | TranslationFailed:
    """Generate up to `attempts` translation candidates, returning the
    first one that passes the whole oracle suite."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    if not suite.cases:
        raise ValueError("oracle suite must be non-empty")
    bindings = {
        "fixed_src": pair.fixed,
        "diff_hunks": diffs.render_hunks(desc.diff),
        "defect_type": desc.defect_type,
        "root_cause": desc.root_cause,
        "source_lang": pair.lang,
        "target_lang": target_lang,
    }
    tried: list[TranslationAttempt] = []
    for j in range(1, attempts + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="translate",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=j,
            )
        )
        candidate = llm_mod.extract_code(reply)
        if candidate is None or not candidate.strip():
            tried.append(
                TranslationAttempt(j, None, passed=False, note="no code block in reply")
            )
            continue
        failures = _validate_candidate(candidate, target_lang, suite, sandbox)
        attempt = TranslationAttempt(j, candidate, passed=not failures, failures=failures)
        tried.append(attempt)
        if attempt.passed:
            return TranslationResult(tgt_fixed=candidate, attempt_index=j, attempts=tried)
    return TranslationFailed(attempts=tried)
