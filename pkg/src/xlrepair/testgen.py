"""Oracle test-suite generation for fixed source programs.

Inputs are proposed by the model, outputs are recorded from the fixed
program itself, and the suite is only admitted once cumulative line AND
branch coverage clear the configured threshold. The admitted suite is
the oracle every later stage validates against.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import llm as llm_mod
from .corpus import SourcePair
from .errors import StageFailure
from .llm import CompletionRequest, LLMClient
from .sandbox import CoverageReport, Sandbox, normalize_output

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.90


@dataclass
class TestCase:
    input: str
    expected: str


@dataclass
class TestSuite:
    cases: list[TestCase]
    coverage: CoverageReport
    tau: float = DEFAULT_TAU

    def inputs(self) -> list[str]:
        return [c.input for c in self.cases]

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "coverage": {"line_pct": self.coverage.line_pct, "branch_pct": self.coverage.branch_pct},
            "cases": [{"input": c.input, "expected": c.expected} for c in self.cases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestSuite":
        return cls(
            cases=[TestCase(c["input"], c["expected"]) for c in data["cases"]],
            coverage=CoverageReport(
                line_pct=data["coverage"]["line_pct"], branch_pct=data["coverage"]["branch_pct"]
            ),
            tau=data["tau"],
        )


@dataclass
class GateFailure:
    """The suite ran but did not clear the coverage gate; carries the
    cases so another round can extend them."""

    coverage: CoverageReport
    cases: list[TestCase]
    tau: float
    discarded: list[str] = field(default_factory=list)


def coverage_gate(coverage: CoverageReport, tau: float) -> bool:
    """Both line and branch coverage must reach tau (inclusive)."""
    threshold = tau * 100.0
    return coverage.line_pct >= threshold and coverage.branch_pct >= threshold


def propose_inputs(
    pair: SourcePair,
    llm: LLMClient,
    count: int,
    temperature: float = 1.0,
    max_tokens: int = 2048,
    sample_index: int = 0,
    parse_retries: int = 2,
) -> list[str]:
    """Ask the model for up to `count` diverse stdin inputs.

    Each fenced block in the reply is one raw stdin text; exact
    duplicates are removed preserving order.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    bindings = {"fixed": pair.fixed, "lang": pair.lang, "count": str(count)}
    for attempt in range(parse_retries + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="testgen_inputs",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=sample_index + attempt,
            )
        )
        blocks = llm_mod.fenced_blocks(reply)
        inputs: list[str] = []
        seen: set[str] = set()
        for block in blocks:
            if block not in seen:
                seen.add(block)
                inputs.append(block)
        if inputs:
            return inputs[:count]
    raise StageFailure(pair.id, "tests_generated", "no parseable inputs after retries")


def build_oracle_suite(
    pair: SourcePair,
    inputs: Sequence[str],
    sandbox: Sandbox,
    tau: float = DEFAULT_TAU,
    prior_cases: Optional[list[TestCase]] = None,
) -> TestSuite | GateFailure:
    """Execute the fixed program on each input and record its output.

    Inputs on which the fixed program fails or behaves nondeterministically
    (two runs disagree) are discarded with a diagnostic. Cumulative
    coverage over all retained cases decides admission.
    """
    if not inputs:
        raise ValueError("inputs must be non-empty")
    check = sandbox.syntax_check(pair.fixed, pair.lang)
    if not check.ok:
        raise StageFailure(
            pair.id, "tests_generated", f"fixed source program does not compile: {check.diagnostics[:500]}"
        )
    cases: list[TestCase] = list(prior_cases or [])
    known_inputs = {c.input for c in cases}
    discarded: list[str] = []
    for input_text in inputs:
        if input_text in known_inputs:
            continue
        first = sandbox.execute(pair.fixed, pair.lang, input_text)
        if first.category != "pass":
            discarded.append(
                f"input discarded: fixed program ended with {first.category}"
            )
            continue
        second = sandbox.execute(pair.fixed, pair.lang, input_text)
        if normalize_output(second.stdout) != normalize_output(first.stdout):
            discarded.append("input discarded: nondeterministic output")
            continue
        known_inputs.add(input_text)
        cases.append(TestCase(input=input_text, expected=normalize_output(first.stdout)))
    if not cases:
        return GateFailure(
            coverage=CoverageReport(line_pct=0.0, branch_pct=0.0),
            cases=[],
            tau=tau,
            discarded=discarded,
        )
    coverage = sandbox.measure_coverage(pair.fixed, pair.lang, [c.input for c in cases])
    if coverage_gate(coverage, tau):
        return TestSuite(cases=cases, coverage=coverage, tau=tau)
    return GateFailure(coverage=coverage, cases=cases, tau=tau, discarded=discarded)


def write_suite_file(suite: TestSuite, path: str | Path) -> None:
    """Suite file: a coverage header record followed by one case per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "header": True,
            "tau": suite.tau,
            "line_pct": suite.coverage.line_pct,
            "branch_pct": suite.coverage.branch_pct,
            "cases": len(suite.cases),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for case in suite.cases:
            fh.write(json.dumps({"input": case.input, "expected": case.expected}, sort_keys=True) + "\n")


def read_suite_file(path: str | Path) -> TestSuite:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or not lines[0].get("header"):
        raise ValueError(f"suite file {path} is missing its header record")
    header = lines[0]
    cases = [TestCase(rec["input"], rec["expected"]) for rec in lines[1:]]
    return TestSuite(
        cases=cases,
        coverage=CoverageReport(line_pct=header["line_pct"], branch_pct=header["branch_pct"]),
        tau=header["tau"],
    )
