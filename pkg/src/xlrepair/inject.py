"""Defect injection into the translated program.

The source pair is executed differentially to split probe inputs into
bug-triggering and regression sets; candidates are then scored by how
faithfully they reproduce the source defect's failure category on
trigger inputs (defect consistency) and how much correct behavior they
preserve on regression inputs (regression consistency). Selection is a
lexicographic argmax over those two counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import diffs, llm as llm_mod
from .corpus import SourcePair
from .descriptor import DefectDescriptor
from .llm import CompletionRequest, LLMClient
from .sandbox import CATEGORIES, Sandbox, normalize_output

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = 5
DEFAULT_INPUT_BUDGET = 10

_CATEGORY_ALIASES = {
    "incorrect output": "wrong_output",
    "incorrect_output": "wrong_output",
    "wrong output": "wrong_output",
    "wrong_answer": "wrong_output",
    "runtime error": "exception",
    "runtime_error": "exception",
    "error": "exception",
    "segfault": "crash",
    "abort": "crash",
    "hang": "timeout",
    "infinite loop": "timeout",
    "infinite_loop": "timeout",
}


def map_failure_category(text: str) -> Optional[str]:
    """Map free-form failure wording onto a sandbox category."""
    lowered = text.strip().lower()
    if lowered in CATEGORIES:
        return lowered
    if lowered in _CATEGORY_ALIASES:
        return _CATEGORY_ALIASES[lowered]
    for category in CATEGORIES:
        if category in lowered:
            return category
    for alias, category in _CATEGORY_ALIASES.items():
        if alias in lowered:
            return category
    return None


@dataclass
class BehaviorSpec:
    trigger_condition: str
    expected_failure_category: str
    expected_failure: str

    def __post_init__(self):
        if not self.trigger_condition.strip() or not self.expected_failure.strip():
            raise ValueError("trigger_condition and expected_failure must be non-empty")
        if self.expected_failure_category not in CATEGORIES:
            raise ValueError(f"unknown failure category {self.expected_failure_category!r}")


@dataclass
class SourceProbe:
    """One input executed on both source programs, with the observed
    behaviors, so the trigger/regression classification can be re-checked
    from the journal."""

    input: str
    fixed_category: str
    fixed_stdout: str
    buggy_category: str
    buggy_stdout: str
    classification: str  # "trigger" | "regression"
    trigger_category: str = ""  # buggy behavior relative to fixed, for scoring

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "fixed_category": self.fixed_category,
            "fixed_stdout": self.fixed_stdout,
            "buggy_category": self.buggy_category,
            "buggy_stdout": self.buggy_stdout,
            "classification": self.classification,
            "trigger_category": self.trigger_category,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SourceProbe":
        return cls(**data)


@dataclass
class InputSets:
    trigger: list[str]
    regression: list[str]
    probes: list[SourceProbe] = field(default_factory=list)

    def __post_init__(self):
        if set(self.trigger) & set(self.regression):
            raise ValueError("trigger and regression sets must be disjoint")

    def trigger_outcomes(self) -> dict[str, str]:
        """input -> source-buggy failure category relative to source-fixed."""
        return {
            p.input: p.trigger_category for p in self.probes if p.classification == "trigger"
        }


@dataclass
class Discard:
    reason: str


@dataclass
class Candidate:
    index: int
    text: Optional[str]
    valid: bool
    invalid_reason: str = ""


@dataclass
class CandidateScore:
    candidate_index: int
    n_defect: int
    n_reg: int

    def to_dict(self) -> dict:
        return {
            "candidate_index": self.candidate_index,
            "n_defect": self.n_defect,
            "n_reg": self.n_reg,
        }


def describe_behavior(
    desc: DefectDescriptor,
    llm: LLMClient,
    temperature: float = 1.0,
    max_tokens: int = 512,
    parse_retries: int = 2,
) -> BehaviorSpec:
    """Derive the trigger-condition / expected-failure behavior spec.

    Failure wording that cannot be mapped onto a sandbox category falls
    back to wrong_output with a warning; most competitive-programming
    defects manifest as wrong output.
    """
    bindings = {
        "defect_type": desc.defect_type,
        "root_cause": desc.root_cause,
        "diff": diffs.render_hunks(desc.diff),
    }
    data = None
    for attempt in range(parse_retries + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="behavior",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=attempt,
            )
        )
        data = llm_mod.extract_json(reply)
        if data and str(data.get("trigger_condition", "")).strip():
            break
    if not data or not str(data.get("trigger_condition", "")).strip():
        raise ValueError("behavior spec reply unparseable after retries")
    failure_text = str(data.get("expected_failure", "")).strip() or "incorrect output"
    category = map_failure_category(str(data.get("expected_failure_category", failure_text)))
    if category is None:
        logger.warning(
            "behavior spec category %r unmappable; defaulting to wrong_output", failure_text
        )
        category = "wrong_output"
    return BehaviorSpec(
        trigger_condition=str(data["trigger_condition"]).strip(),
        expected_failure_category=category,
        expected_failure=failure_text,
    )


def _derive_trigger_category(
    fixed_category: str, fixed_stdout: str, buggy_category: str, buggy_stdout: str
) -> str:
    """Source-buggy behavior expressed relative to source-fixed: when both
    terminate normally but print different text, that is wrong_output."""
    if fixed_category == "pass" and buggy_category == "pass":
        return "wrong_output"
    return buggy_category


def propose_trigger_inputs(
    pair: SourcePair,
    spec: BehaviorSpec,
    llm: LLMClient,
    budget: int,
    temperature: float = 1.0,
    max_tokens: int = 2048,
    parse_retries: int = 2,
) -> list[str]:
    """Inputs likely to activate (and a few unlikely to activate) the
    defect, one per fenced block."""
    bindings = {
        "buggy": pair.buggy,
        "fixed": pair.fixed,
        "trigger_condition": spec.trigger_condition,
        "expected_failure": spec.expected_failure,
        "count": str(budget),
    }
    for attempt in range(parse_retries + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="inject_inputs",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=attempt,
            )
        )
        blocks = llm_mod.fenced_blocks(reply)
        seen: set[str] = set()
        inputs = []
        for block in blocks:
            if block not in seen:
                seen.add(block)
                inputs.append(block)
        if inputs:
            return inputs[:budget]
    return []


def construct_input_sets(
    pair: SourcePair,
    spec: BehaviorSpec,
    suite_inputs: list[str],
    llm: LLMClient,
    sandbox: Sandbox,
    budget: int = DEFAULT_INPUT_BUDGET,
    temperature: float = 1.0,
    max_tokens: int = 2048,
) -> InputSets | Discard:
    """Execute every probe input on both source programs and classify.

    Trigger inputs are those where the two versions' observable behavior
    (failure category, normalized stdout) differs; identical behavior is
    a regression input. No trigger inputs means the pair is discarded.
    """
    buggy_check = sandbox.syntax_check(pair.buggy, pair.lang)
    if not buggy_check.ok:
        return Discard(reason="source buggy program does not compile")
    proposed = propose_trigger_inputs(
        pair, spec, llm, budget, temperature=temperature, max_tokens=max_tokens
    )
    probe_inputs: list[str] = []
    seen: set[str] = set()
    for input_text in list(suite_inputs) + proposed:
        if input_text not in seen:
            seen.add(input_text)
            probe_inputs.append(input_text)
    probes: list[SourceProbe] = []
    trigger: list[str] = []
    regression: list[str] = []
    for input_text in probe_inputs:
        fixed_out = sandbox.execute(pair.fixed, pair.lang, input_text)
        buggy_out = sandbox.execute(pair.buggy, pair.lang, input_text)
        fixed_stdout = normalize_output(fixed_out.stdout)
        buggy_stdout = normalize_output(buggy_out.stdout)
        same = (
            fixed_out.category == buggy_out.category and fixed_stdout == buggy_stdout
        )
        classification = "regression" if same else "trigger"
        probe = SourceProbe(
            input=input_text,
            fixed_category=fixed_out.category,
            fixed_stdout=fixed_stdout,
            buggy_category=buggy_out.category,
            buggy_stdout=buggy_stdout,
            classification=classification,
            trigger_category=""
            if same
            else _derive_trigger_category(
                fixed_out.category, fixed_stdout, buggy_out.category, buggy_stdout
            ),
        )
        probes.append(probe)
        (regression if same else trigger).append(input_text)
    if not trigger:
        return Discard(reason="no trigger inputs")
    return InputSets(trigger=trigger, regression=regression, probes=probes)


def generate_candidates(
    tgt_fixed: str,
    desc: DefectDescriptor,
    spec: BehaviorSpec,
    llm: LLMClient,
    sandbox: Sandbox,
    target_lang: str,
    n: int = DEFAULT_CANDIDATES,
    temperature: float = 1.0,
    max_tokens: int = 4096,
) -> list[Candidate]:
    """Generate n injection candidates with distinct sample indices.

    Candidates that fail the target syntax check are retained but marked,
    scoring zero on both consistencies; exact duplicates of the fixed
    program are marked invalid because nothing was injected.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bindings = {
        "tgt_fixed": tgt_fixed,
        "defect_type": desc.defect_type,
        "root_cause": desc.root_cause,
        "diff_hunks": diffs.render_hunks(desc.diff),
        "trigger_condition": spec.trigger_condition,
        "expected_failure": spec.expected_failure,
        "target_lang": target_lang,
    }
    candidates: list[Candidate] = []
    for i in range(1, n + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="inject_candidates",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=i,
            )
        )
        text = llm_mod.extract_code(reply)
        if text is None or not text.strip():
            candidates.append(Candidate(i, None, valid=False, invalid_reason="no code block"))
            continue
        if text.strip() == tgt_fixed.strip():
            candidates.append(
                Candidate(i, text, valid=False, invalid_reason="identical to fixed program")
            )
            continue
        check = sandbox.syntax_check(text, target_lang)
        if not check.ok:
            candidates.append(
                Candidate(i, text, valid=False, invalid_reason="syntax error")
            )
            continue
        candidates.append(Candidate(i, text, valid=True))
    return candidates


def execute_target_fixed(
    tgt_fixed: str, sets: InputSets, sandbox: Sandbox, target_lang: str
) -> dict[str, dict]:
    """Run the verified translation on every probe input once; its
    outputs are the reference for candidate scoring."""
    outcomes: dict[str, dict] = {}
    for input_text in sets.trigger + sets.regression:
        outcome = sandbox.execute(tgt_fixed, target_lang, input_text)
        outcomes[input_text] = {
            "category": outcome.category,
            "stdout": normalize_output(outcome.stdout),
        }
    return outcomes


def score_candidate(
    candidate: Candidate,
    tgt_fixed: str,
    sets: InputSets,
    src_trigger_outcomes: dict[str, str],
    tgt_fixed_outcomes: dict[str, dict],
    sandbox: Sandbox,
    target_lang: str,
) -> tuple[CandidateScore, dict[str, str]]:
    """Count defect and regression consistency for one candidate.

    Defect consistency on a trigger input means the candidate's failure
    category equals the source buggy program's (category relative to its
    own fixed version): a wrong_output match only requires the candidate
    to print something other than the target fixed program's output, not
    to byte-match the source language. Regression consistency means the
    candidate passes with output identical to the target fixed program.

    Returns the score plus the candidate's per-trigger-input categories
    (used by the final observability verification).
    """
    if not sets.trigger:
        raise ValueError("trigger set must be non-empty")
    missing = [t for t in sets.trigger if t not in src_trigger_outcomes]
    if missing:
        raise ValueError(f"missing source buggy outcomes for {len(missing)} trigger inputs")
    if not candidate.valid or candidate.text is None:
        return CandidateScore(candidate.index, 0, 0), {}
    trigger_categories: dict[str, str] = {}
    n_defect = 0
    for input_text in sets.trigger:
        ref = tgt_fixed_outcomes[input_text]
        expected = ref["stdout"] if ref["category"] == "pass" else None
        outcome = sandbox.execute(candidate.text, target_lang, input_text, expected=expected)
        trigger_categories[input_text] = outcome.category
        if outcome.category == src_trigger_outcomes[input_text]:
            n_defect += 1
    n_reg = 0
    for input_text in sets.regression:
        ref = tgt_fixed_outcomes[input_text]
        if ref["category"] != "pass":
            continue
        outcome = sandbox.execute(
            candidate.text, target_lang, input_text, expected=ref["stdout"]
        )
        if outcome.category == "pass":
            n_reg += 1
    return CandidateScore(candidate.index, n_defect, n_reg), trigger_categories


@dataclass
class InjectionFailed:
    reason: str
    scores: list[CandidateScore] = field(default_factory=list)


def select_buggy(
    scores: list[CandidateScore], candidates: list[Candidate]
) -> Candidate | InjectionFailed:
    """Lexicographic argmax over (n_defect, n_reg); ties break to the
    lowest candidate index. A best score with zero defect consistency is
    a failure: the candidate never reproduces the defect."""
    if not scores:
        raise ValueError("scores must be non-empty")
    by_index = {c.index: c for c in candidates}
    best = None
    for score in scores:
        if best is None:
            best = score
            continue
        key = (score.n_defect, score.n_reg, -score.candidate_index)
        best_key = (best.n_defect, best.n_reg, -best.candidate_index)
        if key > best_key:
            best = score
    assert best is not None
    if best.n_defect == 0:
        return InjectionFailed(reason="no candidate reproduces the defect behavior", scores=scores)
    return by_index[best.candidate_index]
