"""End-to-end replay tests over the committed fixture cache.

Everything here runs in replay mode: no network, no scripted transport,
just the recorded transcripts. The heavyweight double run is shared
module-wide.
"""

import json
import shutil
from pathlib import Path

import pytest

import e2e_fixture
from conftest import HAVE_GCC
from xlrepair.config import load_config
from xlrepair.corpus import Journal, Stage, resume
from xlrepair.curriculum import emit_all, read_stage_file
from xlrepair.llm import LLMClient, ReplayCache
from xlrepair.pipeline import Pipeline, corpus_from_state, replay_clock
from xlrepair.sandbox import Sandbox
from xlrepair.testgen import read_suite_file

pytestmark = pytest.mark.skipif(not HAVE_GCC, reason="g++/gcov not installed")


def replay_run(workdir: Path, journal_name: str = "journal.jsonl"):
    """One full pipeline run in replay mode; returns (summary, paths)."""
    workdir.mkdir(parents=True, exist_ok=True)
    config_path = workdir / "config.toml"
    out_dir = workdir / "out"
    config_path.write_text(e2e_fixture.config_text(str(out_dir)))
    cfg = load_config(config_path)
    client = LLMClient(mode="replay", cache=ReplayCache(e2e_fixture.CACHE_PATH))
    journal_path = workdir / journal_name
    journal = Journal(journal_path, clock=replay_clock())
    sandbox = Sandbox(cfg.toolchains, work_root=workdir / "sb")
    try:
        pipeline = Pipeline(cfg, journal, client, sandbox, "python")
        summary = pipeline.run(e2e_fixture.SEEDS_PATH)
    finally:
        sandbox.close()
    return summary, journal_path, out_dir


@pytest.fixture(scope="module")
def double_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("e2e")
    first = replay_run(base / "run1")
    second = replay_run(base / "run2")
    return first, second


class TestReplayRun:
    def test_funnel_counts(self, double_run):
        (summary, _, _), _ = double_run
        assert summary.ingested == 6
        assert summary.transferable == 5
        assert summary.suites_admitted == 5
        assert summary.translated == 5
        assert summary.quads == 4
        assert not summary.environment_errors

    def test_byte_identical_journals(self, double_run):
        (_, journal1, _), (_, journal2, _) = double_run
        assert journal1.read_bytes() == journal2.read_bytes()

    def test_byte_identical_corpora(self, double_run):
        (_, _, out1), (_, _, out2) = double_run
        assert (out1 / "quads.jsonl").read_bytes() == (out2 / "quads.jsonl").read_bytes()

    def test_quads_verified_and_invariants_hold(self, double_run):
        (_, journal_path, out_dir), _ = double_run
        state = resume(journal_path)
        quads = [json.loads(line) for line in (out_dir / "quads.jsonl").read_text().splitlines()]
        assert len(quads) == 4
        for quad in quads:
            assert state[quad["src"]["id"]].stage == Stage.QUAD_VERIFIED
            assert quad["tgt"]["buggy"] != quad["tgt"]["fixed"]
            assert quad["tgt"]["lang"] != quad["src"]["lang"]
            assert quad["tgt"]["source_id"] == quad["src"]["id"]

    def test_translated_fixed_passes_stored_suite(self, double_run):
        (_, _, out_dir), _ = double_run
        from conftest import python_profile

        quads = [json.loads(line) for line in (out_dir / "quads.jsonl").read_text().splitlines()]
        sandbox = Sandbox({"python": python_profile()})
        try:
            for quad in quads:
                suite = read_suite_file(out_dir / "suites" / f"{quad['src']['id']}.jsonl")
                for case in suite.cases:
                    outcome = sandbox.execute(
                        quad["tgt"]["fixed"], "python", case.input, expected=case.expected
                    )
                    assert outcome.category == "pass"
        finally:
            sandbox.close()

    def test_selected_buggy_has_defect_consistency(self, double_run):
        (_, journal_path, _), _ = double_run
        state = resume(journal_path)
        for pair_state in state.values():
            if pair_state.stage != Stage.QUAD_VERIFIED:
                continue
            injected = pair_state.history["injected"]
            winner = injected["candidate_index"]
            score = next(
                s for s in injected["scores"] if s["candidate_index"] == winner
            )
            assert score["n_defect"] >= 1

    def test_terminal_failures_carry_reasons(self, double_run):
        (_, journal_path, _), _ = double_run
        state = resume(journal_path)
        filtered = [s for s in state.values() if s.stage == Stage.FILTERED_OUT]
        failed = [s for s in state.values() if s.stage == Stage.INJECTION_FAILED]
        assert len(filtered) == 1  # the pointer-arithmetic pair
        assert "pointer" in filtered[0].payload["rationale"]
        assert len(failed) == 1  # the crash-category pair
        assert "reproduce" in failed[0].payload["reason"]

    def test_gate_soundness_no_filtered_pair_progresses(self, double_run):
        (_, journal_path, _), _ = double_run
        state = resume(journal_path)
        later = {"tests_generated", "translated", "injected", "quad_verified"}
        for pair_state in state.values():
            if pair_state.stage == Stage.FILTERED_OUT:
                assert not later & set(pair_state.history)

    def test_lazy_translation_one_request_for_first_pass(self):
        cache = ReplayCache(e2e_fixture.CACHE_PATH)
        requests = cache.requests_for_template("translate")
        by_task = {}
        for req in requests:
            marker = next(
                line for line in req["bindings"]["fixed_src"].splitlines() if "task:" in line
            )
            by_task.setdefault(marker.split()[-1], []).append(req["sample_index"])
        assert sorted(by_task["sum1n"]) == [1]
        assert sorted(by_task["maxneg"]) == [1, 2]

    def test_rerun_with_same_journal_does_nothing(self, double_run):
        (_, journal_path, out_dir), _ = double_run
        workdir = journal_path.parent
        summary, _, _ = replay_run(workdir)
        assert summary.processed == 0
        assert summary.quads == 4

    def test_resume_after_interruption_reaches_same_state(self, double_run, tmp_path):
        (_, journal_path, _), _ = double_run
        full_state = resume(journal_path)
        # simulate a crash: keep only the first 9 records
        workdir = tmp_path / "resumed"
        workdir.mkdir()
        lines = journal_path.read_text().splitlines(keepends=True)
        partial = workdir / "journal.jsonl"
        partial.write_text("".join(lines[:9]))
        summary, partial_path, _ = replay_run(workdir)
        resumed_state = resume(partial_path)
        assert set(resumed_state) == set(full_state)
        for pair_id, pair_state in full_state.items():
            assert resumed_state[pair_id].stage == pair_state.stage
            assert resumed_state[pair_id].payload == pair_state.payload
        assert not summary.environment_errors


class TestCurriculumFromJournal:
    def test_stage_counts_match_funnel(self, double_run, tmp_path):
        (_, journal_path, _), _ = double_run
        corpus = corpus_from_state(resume(journal_path))
        manifest = emit_all(corpus, tmp_path / "stages")
        assert manifest["stages"]["1"]["records"] == 5
        assert manifest["stages"]["2"]["records"] == 4
        assert manifest["stages"]["3"]["records"] == 4

    def test_stage2_references_only_verified_quads(self, double_run, tmp_path):
        (_, journal_path, _), _ = double_run
        state = resume(journal_path)
        corpus = corpus_from_state(state)
        emit_all(corpus, tmp_path / "stages")
        records = read_stage_file(tmp_path / "stages" / "stage2.jsonl")
        for record in records:
            assert state[record.pair_ids[0]].stage == Stage.QUAD_VERIFIED

    def test_stage1_has_no_target_language_programs(self, double_run, tmp_path):
        (_, journal_path, _), _ = double_run
        state = resume(journal_path)
        corpus = corpus_from_state(state)
        emit_all(corpus, tmp_path / "stages")
        tgt_ids = set()
        for pair_state in state.values():
            if pair_state.stage == Stage.QUAD_VERIFIED:
                tgt_ids.add(pair_state.history["quad_verified"]["tgt_id"])
        for record in read_stage_file(tmp_path / "stages" / "stage1.jsonl"):
            assert not tgt_ids & set(record.pair_ids)

    def test_emission_deterministic_across_runs(self, double_run, tmp_path):
        (_, journal1, _), (_, journal2, _) = double_run
        emit_all(corpus_from_state(resume(journal1)), tmp_path / "a")
        emit_all(corpus_from_state(resume(journal2)), tmp_path / "b")
        for stage in (1, 2, 3):
            assert (tmp_path / f"a/stage{stage}.jsonl").read_bytes() == (
                tmp_path / f"b/stage{stage}.jsonl"
            ).read_bytes()


class TestWorkerPool:
    def test_parallel_workers_reach_same_final_state(self, double_run, tmp_path):
        (_, reference_journal, _), _ = double_run
        reference = resume(reference_journal)

        workdir = tmp_path / "parallel"
        workdir.mkdir()
        config_path = workdir / "config.toml"
        config_path.write_text(
            e2e_fixture.config_text(str(workdir / "out")).replace(
                "workers = 1", "workers = 3"
            )
        )
        cfg = load_config(config_path)
        client = LLMClient(mode="replay", cache=ReplayCache(e2e_fixture.CACHE_PATH))
        journal = Journal(workdir / "journal.jsonl", clock=replay_clock())
        sandbox = Sandbox(cfg.toolchains, work_root=workdir / "sb")
        try:
            summary = Pipeline(cfg, journal, client, sandbox, "python").run(
                e2e_fixture.SEEDS_PATH
            )
        finally:
            sandbox.close()
        assert summary.quads == 4
        assert not summary.environment_errors
        parallel = resume(workdir / "journal.jsonl")
        assert set(parallel) == set(reference)
        for pair_id, pair_state in reference.items():
            assert parallel[pair_id].stage == pair_state.stage
            assert parallel[pair_id].payload == pair_state.payload


def test_resume_from_injected_record_completes_verification(double_run, tmp_path):
    """A crash after the selection record but before the terminal one must
    resume at the verification step, not retry the whole injection."""
    (_, reference_journal, _), _ = double_run
    full_state = resume(reference_journal)
    lines = reference_journal.read_text().splitlines(keepends=True)
    injected_at = next(
        i for i, line in enumerate(lines) if '"stage":"injected"' in line.replace(" ", "")
    )
    workdir = tmp_path / "mid-inject"
    workdir.mkdir()
    (workdir / "journal.jsonl").write_text("".join(lines[: injected_at + 1]))
    summary, journal_path, _ = replay_run(workdir)
    assert not summary.environment_errors
    resumed = resume(journal_path)
    assert set(resumed) == set(full_state)
    for pair_id, pair_state in full_state.items():
        assert resumed[pair_id].stage == pair_state.stage
        assert resumed[pair_id].payload == pair_state.payload
