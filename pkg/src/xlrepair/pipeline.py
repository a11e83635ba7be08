"""End-to-end orchestration: drive every source pair through descriptor,
transferability, oracle-suite, translation, injection and verification,
journaling each decision so an interrupted run resumes exactly where it
stopped.

Environment errors (missing binaries, broken scratch dirs) are NOT
journaled: the pair stays at its last stage and a rerun retries it.
Pipeline-semantic failures land in their terminal stages.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import inject as inject_mod
from . import testgen as testgen_mod
from . import translate as translate_mod
from .config import Config
from .corpus import (
    Journal,
    PairState,
    ParallelQuad,
    SourcePair,
    Stage,
    TargetPair,
    ingest,
)
from .curriculum import CurriculumCorpus
from .descriptor import DefectDescriptor, assess_transferability, build_descriptor
from .errors import ReplayMissError, SandboxEnvironmentError, StageFailure
from .llm import LLMClient
from .sandbox import Sandbox

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    ingested: int = 0
    transferable: int = 0
    suites_admitted: int = 0
    translated: int = 0
    quads: int = 0
    diagnostics: list[str] = field(default_factory=list)
    environment_errors: list[str] = field(default_factory=list)
    processed: int = 0

    def funnel_lines(self) -> list[str]:
        return [
            f"ingested:         {self.ingested}",
            f"transferable:     {self.transferable}",
            f"suites admitted:  {self.suites_admitted}",
            f"translated:       {self.translated}",
            f"quads verified:   {self.quads}",
        ]


def _counter_clock():
    """Deterministic logical clock for replay runs."""
    state = {"t": 0}

    def _tick() -> float:
        state["t"] += 1
        return float(state["t"])

    return _tick


class Pipeline:
    def __init__(
        self,
        cfg: Config,
        journal: Journal,
        llm: LLMClient,
        sandbox: Sandbox,
        target_lang: str,
    ):
        if target_lang not in cfg.target_langs:
            raise ValueError(f"target language {target_lang!r} not declared in config")
        self.cfg = cfg
        self.journal = journal
        self.llm = llm
        self.sandbox = sandbox
        self.target_lang = target_lang

    # -- per-stage drivers ------------------------------------------------

    def _stage_descriptor(self, pair: SourcePair) -> Optional[DefectDescriptor]:
        settings = self.cfg.llm
        try:
            desc = build_descriptor(
                pair,
                self.llm,
                context_radius=self.cfg.pipeline.context_radius,
                temperature=settings.stage_temperature("descriptor"),
                max_tokens=settings.stage_max_tokens("descriptor"),
                parse_retries=settings.parse_retries,
            )
        except StageFailure as exc:
            self.journal.append(pair.id, Stage.FILTERED_OUT, {"reason": exc.reason})
            return None
        self.journal.append(pair.id, Stage.DESCRIPTOR_BUILT, desc.to_dict())
        return desc

    def _stage_transferability(self, pair: SourcePair, desc: DefectDescriptor) -> bool:
        settings = self.cfg.llm
        verdict = assess_transferability(
            desc,
            self.target_lang,
            self.llm,
            temperature=settings.stage_temperature("transferability"),
            max_tokens=settings.stage_max_tokens("transferability"),
            parse_retries=settings.parse_retries,
        )
        if not verdict.transferable:
            self.journal.append(
                pair.id,
                Stage.FILTERED_OUT,
                {"reason": "not transferable", "rationale": verdict.rationale},
            )
            return False
        self.journal.append(pair.id, Stage.TRANSFERABLE, {"rationale": verdict.rationale})
        return True

    def _stage_testgen(self, pair: SourcePair) -> Optional[testgen_mod.TestSuite]:
        settings = self.cfg.llm
        pcfg = self.cfg.pipeline
        cases: list[testgen_mod.TestCase] = []
        last_gate: Optional[testgen_mod.GateFailure] = None
        for round_no in range(pcfg.testgen_rounds):
            base_index = round_no * (settings.parse_retries + 1)
            try:
                inputs = testgen_mod.propose_inputs(
                    pair,
                    self.llm,
                    count=pcfg.testgen_inputs_per_round,
                    temperature=settings.stage_temperature("testgen_inputs"),
                    max_tokens=settings.stage_max_tokens("testgen_inputs"),
                    sample_index=base_index,
                    parse_retries=settings.parse_retries,
                )
            except StageFailure as exc:
                self.journal.append(pair.id, Stage.FILTERED_OUT, {"reason": exc.reason})
                return None
            result = testgen_mod.build_oracle_suite(
                pair, inputs, self.sandbox, tau=pcfg.tau, prior_cases=cases
            )
            if isinstance(result, testgen_mod.TestSuite):
                self.journal.append(pair.id, Stage.TESTS_GENERATED, result.to_dict())
                self._write_suite(pair, result)
                return result
            last_gate = result
            cases = result.cases
        assert last_gate is not None
        self.journal.append(
            pair.id,
            Stage.FILTERED_OUT,
            {
                "reason": "coverage gate not met",
                "line_pct": last_gate.coverage.line_pct,
                "branch_pct": last_gate.coverage.branch_pct,
                "tau": pcfg.tau,
            },
        )
        return None

    def _write_suite(self, pair: SourcePair, suite: testgen_mod.TestSuite) -> None:
        out_dir = Path(self.cfg.paths.output_dir) / "suites"
        testgen_mod.write_suite_file(suite, out_dir / f"{pair.id}.jsonl")

    def _stage_translate(
        self, pair: SourcePair, desc: DefectDescriptor, suite: testgen_mod.TestSuite
    ) -> Optional[str]:
        settings = self.cfg.llm
        result = translate_mod.translate_fixed(
            pair,
            desc,
            self.target_lang,
            suite,
            self.llm,
            self.sandbox,
            attempts=self.cfg.pipeline.translation_attempts,
            temperature=settings.stage_temperature("translate"),
            max_tokens=settings.stage_max_tokens("translate"),
        )
        if isinstance(result, translate_mod.TranslationFailed):
            self.journal.append(
                pair.id,
                Stage.TRANSLATION_FAILED,
                {"attempts": [a.summary() for a in result.attempts]},
            )
            return None
        self.journal.append(
            pair.id,
            Stage.TRANSLATED,
            {
                "tgt_fixed": result.tgt_fixed,
                "target_lang": self.target_lang,
                "attempt_index": result.attempt_index,
                "attempts": [a.summary() for a in result.attempts],
            },
        )
        return result.tgt_fixed

    def _stage_inject(
        self,
        pair: SourcePair,
        desc: DefectDescriptor,
        suite: testgen_mod.TestSuite,
        tgt_fixed: str,
    ) -> bool:
        settings = self.cfg.llm
        pcfg = self.cfg.pipeline
        try:
            spec = inject_mod.describe_behavior(
                desc,
                self.llm,
                temperature=settings.stage_temperature("behavior"),
                max_tokens=settings.stage_max_tokens("behavior"),
                parse_retries=settings.parse_retries,
            )
        except ValueError as exc:
            self.journal.append(pair.id, Stage.INJECTION_FAILED, {"reason": str(exc)})
            return False
        sets = inject_mod.construct_input_sets(
            pair,
            spec,
            [c.input for c in suite.cases],
            self.llm,
            self.sandbox,
            budget=pcfg.injection_input_budget,
            temperature=settings.stage_temperature("inject_inputs"),
            max_tokens=settings.stage_max_tokens("inject_inputs"),
        )
        if isinstance(sets, inject_mod.Discard):
            self.journal.append(pair.id, Stage.INJECTION_FAILED, {"reason": sets.reason})
            return False
        candidates = inject_mod.generate_candidates(
            tgt_fixed,
            desc,
            spec,
            self.llm,
            self.sandbox,
            self.target_lang,
            n=pcfg.injection_candidates,
            temperature=settings.stage_temperature("inject_candidates"),
            max_tokens=settings.stage_max_tokens("inject_candidates"),
        )
        if all(c.text is None for c in candidates):
            self.journal.append(
                pair.id, Stage.INJECTION_FAILED, {"reason": "no candidate could be extracted"}
            )
            return False
        tgt_fixed_outcomes = inject_mod.execute_target_fixed(
            tgt_fixed, sets, self.sandbox, self.target_lang
        )
        src_trigger_outcomes = sets.trigger_outcomes()
        scores: list[inject_mod.CandidateScore] = []
        for candidate in candidates:
            score, _ = inject_mod.score_candidate(
                candidate,
                tgt_fixed,
                sets,
                src_trigger_outcomes,
                tgt_fixed_outcomes,
                self.sandbox,
                self.target_lang,
            )
            scores.append(score)
        selected = inject_mod.select_buggy(scores, candidates)
        base_payload = {
            "behavior": {
                "trigger_condition": spec.trigger_condition,
                "expected_failure_category": spec.expected_failure_category,
                "expected_failure": spec.expected_failure,
            },
            "probes": [p.to_dict() for p in sets.probes],
            "scores": [s.to_dict() for s in scores],
            "candidates": [
                {"index": c.index, "valid": c.valid, "invalid_reason": c.invalid_reason}
                for c in candidates
            ],
        }
        if isinstance(selected, inject_mod.InjectionFailed):
            self.journal.append(
                pair.id, Stage.INJECTION_FAILED, {"reason": selected.reason, **base_payload}
            )
            return False
        assert selected.text is not None
        injected_payload = {
            "tgt_buggy": selected.text,
            "candidate_index": selected.index,
            **base_payload,
        }
        self.journal.append(pair.id, Stage.INJECTED, injected_payload)
        return self._stage_verify(pair, tgt_fixed, injected_payload)

    def _stage_verify(self, pair: SourcePair, tgt_fixed: str, injected: dict) -> bool:
        """Final observability check: the selected buggy program must fail
        at least one trigger input against the target oracle expectation
        derived from the translated fixed program. Runs from the injected
        payload alone, so a crash between INJECTED and the terminal record
        resumes here."""
        tgt_buggy = injected["tgt_buggy"]
        trigger_inputs = [
            p["input"] for p in injected["probes"] if p["classification"] == "trigger"
        ]
        cats: dict[str, str] = {}
        for input_text in trigger_inputs:
            ref = self.sandbox.execute(tgt_fixed, self.target_lang, input_text)
            expected = ref.stdout if ref.category == "pass" else None
            outcome = self.sandbox.execute(
                tgt_buggy, self.target_lang, input_text, expected=expected
            )
            cats[input_text] = outcome.category
        if not any(cat != "pass" for cat in cats.values()):
            self.journal.append(
                pair.id,
                Stage.INJECTION_FAILED,
                {"reason": "selected candidate shows no observable defect in the target language"},
            )
            return False
        tgt = TargetPair(
            source_id=pair.id,
            lang=self.target_lang,
            buggy=tgt_buggy,
            fixed=tgt_fixed,
            provenance={"candidate_index": injected["candidate_index"]},
        )
        self.journal.append(
            pair.id,
            Stage.QUAD_VERIFIED,
            {
                "source_id": pair.id,
                "target_lang": self.target_lang,
                "tgt_buggy": tgt.buggy,
                "tgt_fixed": tgt.fixed,
                "tgt_id": tgt.id,
                "provenance": {
                    "candidate_index": injected["candidate_index"],
                    "trigger_categories": cats,
                },
            },
        )
        return True

    # -- pair driver ------------------------------------------------------

    def process_pair(self, pair: SourcePair) -> None:
        """Advance one pair from its journaled stage to a terminal state."""
        state = self.journal.state().get(pair.id)
        if state is None:
            self.journal.append(
                pair.id,
                Stage.INGESTED,
                {"lang": pair.lang, "buggy": pair.buggy, "fixed": pair.fixed, "meta": pair.problem_meta},
            )
            state = self.journal.state()[pair.id]
        if state.terminal:
            return
        history = state.history

        desc: Optional[DefectDescriptor] = None
        if "descriptor_built" in history:
            desc = DefectDescriptor.from_dict(history["descriptor_built"])
        else:
            desc = self._stage_descriptor(pair)
            if desc is None:
                return

        if "transferable" not in history:
            if not self._stage_transferability(pair, desc):
                return

        suite: Optional[testgen_mod.TestSuite] = None
        if "tests_generated" in history:
            suite = testgen_mod.TestSuite.from_dict(history["tests_generated"])
        else:
            suite = self._stage_testgen(pair)
            if suite is None:
                return

        tgt_fixed: Optional[str] = None
        if "translated" in history:
            tgt_fixed = history["translated"]["tgt_fixed"]
        else:
            tgt_fixed = self._stage_translate(pair, desc, suite)
            if tgt_fixed is None:
                return

        if "injected" in history:
            # crashed between selection and the terminal record: only the
            # final verification is left to redo
            self._stage_verify(pair, tgt_fixed, history["injected"])
            return
        self._stage_inject(pair, desc, suite, tgt_fixed)

    # -- run --------------------------------------------------------------

    def run(self, seeds_path: str | Path) -> RunSummary:
        summary = RunSummary()
        pairs, diagnostics = ingest(seeds_path, self.cfg.source_lang)
        summary.diagnostics = [f"line {d.line_no}: {d.reason}" for d in diagnostics]
        state = self.journal.state()
        # pairs already journaled but absent from this seeds file still
        # get finished: rebuild them from their ingested payloads
        known_ids = {p.id for p in pairs}
        for pair_id, pair_state in state.items():
            if pair_id in known_ids or "ingested" not in pair_state.history:
                continue
            payload = pair_state.history["ingested"]
            pairs.append(
                SourcePair(
                    id=pair_id,
                    lang=payload["lang"],
                    buggy=payload["buggy"],
                    fixed=payload["fixed"],
                    problem_meta=payload.get("meta", {}),
                )
            )
        snapshot = self.journal.state()
        todo = [
            p
            for p in pairs
            if p.id not in snapshot or not snapshot[p.id].terminal
        ]
        summary.processed = len(todo)

        def _safe(pair: SourcePair) -> Optional[str]:
            try:
                self.process_pair(pair)
                return None
            except ReplayMissError:
                raise  # an incomplete cache invalidates the whole run
            except SandboxEnvironmentError as exc:
                logger.error("environment error on %s: %s", pair.id, exc)
                return f"{pair.id}: {exc}"
            except Exception as exc:  # noqa: BLE001 - one pair must not kill the run
                logger.exception("unexpected error on %s", pair.id)
                return f"{pair.id}: internal error: {exc}"

        workers = self.cfg.pipeline.workers
        if workers <= 1:
            results = [_safe(p) for p in todo]
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_safe, todo))
        summary.environment_errors.extend(r for r in results if r)
        final = self.journal.state()
        summary.ingested = len(final)
        summary.transferable = sum(1 for s in final.values() if "transferable" in s.history)
        summary.suites_admitted = sum(
            1 for s in final.values() if "tests_generated" in s.history
        )
        summary.translated = sum(1 for s in final.values() if "translated" in s.history)
        summary.quads = sum(1 for s in final.values() if s.stage == Stage.QUAD_VERIFIED)
        self.write_corpus(final)
        return summary

    def write_corpus(self, state: dict[str, PairState]) -> Path:
        """Write the verified quads deterministically (sorted by pair id)."""
        out_dir = Path(self.cfg.paths.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "quads.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for pair_id in sorted(state):
                pair_state = state[pair_id]
                if pair_state.stage != Stage.QUAD_VERIFIED:
                    continue
                ingested = pair_state.history["ingested"]
                verified = pair_state.history["quad_verified"]
                fh.write(
                    json.dumps(
                        {
                            "src": {
                                "id": pair_id,
                                "lang": ingested["lang"],
                                "buggy": ingested["buggy"],
                                "fixed": ingested["fixed"],
                            },
                            "tgt": {
                                "source_id": pair_id,
                                "lang": verified["target_lang"],
                                "buggy": verified["tgt_buggy"],
                                "fixed": verified["tgt_fixed"],
                                "provenance": verified["provenance"],
                            },
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        return path


def corpus_from_state(state: dict[str, PairState]) -> CurriculumCorpus:
    """Rebuild the curriculum-eligible corpus from journal state."""
    transferable: list[SourcePair] = []
    quads: list[ParallelQuad] = []
    for pair_id in sorted(state):
        pair_state = state[pair_id]
        if "ingested" not in pair_state.history:
            continue
        ingested = pair_state.history["ingested"]
        src = SourcePair(
            id=pair_id,
            lang=ingested["lang"],
            buggy=ingested["buggy"],
            fixed=ingested["fixed"],
            problem_meta=ingested.get("meta", {}),
        )
        if "transferable" in pair_state.history:
            transferable.append(src)
        if pair_state.stage == Stage.QUAD_VERIFIED:
            verified = pair_state.history["quad_verified"]
            tgt = TargetPair(
                source_id=pair_id,
                lang=verified["target_lang"],
                buggy=verified["tgt_buggy"],
                fixed=verified["tgt_fixed"],
                provenance=verified.get("provenance", {}),
            )
            quads.append(ParallelQuad(src=src, tgt=tgt))
    return CurriculumCorpus(transferable_sources=transferable, quads=quads)


def replay_clock():
    return _counter_clock()
