import json
import random

import pytest

from conftest import scripted_client
from xlrepair.corpus import SourcePair
from xlrepair.descriptor import DefectDescriptor
from xlrepair.diffs import compute_diff
from xlrepair.inject import (
    BehaviorSpec,
    Candidate,
    CandidateScore,
    Discard,
    InjectionFailed,
    InputSets,
    construct_input_sets,
    describe_behavior,
    execute_target_fixed,
    generate_candidates,
    map_failure_category,
    score_candidate,
    select_buggy,
)

# source pair (python for fast unit tests): sum 1..n, buggy misses n
SRC = SourcePair(
    id="src1",
    lang="python",
    buggy=(
        "import sys\n"
        "n = int(sys.stdin.read())\n"
        "total = 0\n"
        "for i in range(1, n):\n"
        "    total += i\n"
        "print(total)\n"
    ),
    fixed=(
        "import sys\n"
        "n = int(sys.stdin.read())\n"
        "total = 0\n"
        "for i in range(1, n + 1):\n"
        "    total += i\n"
        "print(total)\n"
    ),
)

TGT_FIXED = (
    "import sys\n"
    "n = int(sys.stdin.read())\n"
    "print(sum(range(1, n + 1)))\n"
)
TGT_BUGGY_GOOD = (
    "import sys\n"
    "n = int(sys.stdin.read())\n"
    "print(sum(range(1, n)))\n"
)
TGT_BUGGY_PARTIAL = (  # wrong only for n >= 3
    "import sys\n"
    "n = int(sys.stdin.read())\n"
    "print(sum(range(1, n)) if n >= 3 else sum(range(1, n + 1)))\n"
)

TRIGGERS = ["1", "2", "5"]
REGRESSIONS = ["0", "-3", "-10"]


def make_descriptor():
    return DefectDescriptor(
        defect_type="Off-by-one",
        root_cause="loop excludes the final term",
        diff=compute_diff(SRC.buggy, SRC.fixed),
    )


def make_spec():
    return BehaviorSpec(
        trigger_condition="any n >= 1",
        expected_failure_category="wrong_output",
        expected_failure="sum short by n",
    )


def blocks_reply(inputs):
    fenced = []
    for text in inputs:
        if not text.endswith("\n"):
            text += "\n"
        fenced.append(f"```\n{text}```")
    return "\n".join(fenced)


def json_reply(payload):
    return "```json\n" + json.dumps(payload) + "\n```\n"


class TestFailureCategoryMapping:
    def test_exact_names(self):
        for name in ("wrong_output", "crash", "exception", "timeout"):
            assert map_failure_category(name) == name

    def test_aliases(self):
        assert map_failure_category("incorrect output") == "wrong_output"
        assert map_failure_category("Runtime Error") == "exception"
        assert map_failure_category("segfault") == "crash"

    def test_unmappable_is_none(self):
        assert map_failure_category("the vibes are off") is None


class TestDescribeBehavior:
    def test_pass_through_with_category_mapping(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda p, r: json_reply(
                {
                    "trigger_condition": "arrays at boundary length",
                    "expected_failure_category": "incorrect output",
                    "expected_failure": "last element missing",
                }
            ),
        )
        spec = describe_behavior(make_descriptor(), client)
        assert spec.trigger_condition == "arrays at boundary length"
        assert spec.expected_failure_category == "wrong_output"

    def test_crash_style_category(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda p, r: json_reply(
                {
                    "trigger_condition": "null list",
                    "expected_failure_category": "crash",
                    "expected_failure": "dereference of missing value",
                }
            ),
        )
        spec = describe_behavior(make_descriptor(), client)
        assert spec.expected_failure_category in ("crash", "exception")

    def test_unmappable_defaults_to_wrong_output(self, tmp_path, caplog):
        client = scripted_client(
            tmp_path,
            lambda p, r: json_reply(
                {
                    "trigger_condition": "whenever",
                    "expected_failure_category": "the vibes are off",
                    "expected_failure": "the vibes are off",
                }
            ),
        )
        with caplog.at_level("WARNING"):
            spec = describe_behavior(make_descriptor(), client)
        assert spec.expected_failure_category == "wrong_output"
        assert any("unmappable" in r.message for r in caplog.records)


class TestConstructInputSets:
    def test_partitions_trigger_and_regression(self, tmp_path, py_sandbox):
        client = scripted_client(
            tmp_path, lambda p, r: blocks_reply(TRIGGERS + REGRESSIONS)
        )
        sets = construct_input_sets(SRC, make_spec(), [], client, py_sandbox, budget=10)
        assert isinstance(sets, InputSets)
        assert sorted(sets.trigger) == sorted(t + "\n" for t in TRIGGERS)
        assert sorted(sets.regression) == sorted(t + "\n" for t in REGRESSIONS)
        assert not set(sets.trigger) & set(sets.regression)

    def test_discard_when_no_trigger_inputs(self, tmp_path, py_sandbox):
        client = scripted_client(tmp_path, lambda p, r: blocks_reply(REGRESSIONS))
        result = construct_input_sets(SRC, make_spec(), [], client, py_sandbox, budget=10)
        assert isinstance(result, Discard)
        assert result.reason == "no trigger inputs"

    def test_suite_inputs_are_unioned(self, tmp_path, py_sandbox):
        client = scripted_client(tmp_path, lambda p, r: blocks_reply(["5"]))
        sets = construct_input_sets(
            SRC, make_spec(), ["0\n"], client, py_sandbox, budget=10
        )
        assert isinstance(sets, InputSets)
        assert "0\n" in sets.regression
        assert "5\n" in sets.trigger

    def test_uncompilable_buggy_source_discards(self, tmp_path, py_sandbox):
        broken = SourcePair(id="x", lang="python", buggy="def broken(:\n", fixed=SRC.fixed)
        client = scripted_client(tmp_path, lambda p, r: blocks_reply(TRIGGERS))
        result = construct_input_sets(broken, make_spec(), [], client, py_sandbox)
        assert isinstance(result, Discard)
        assert "compile" in result.reason

    def test_probes_reverify_from_stored_outcomes(self, tmp_path, py_sandbox):
        client = scripted_client(
            tmp_path, lambda p, r: blocks_reply(TRIGGERS + REGRESSIONS)
        )
        sets = construct_input_sets(SRC, make_spec(), [], client, py_sandbox, budget=10)
        assert isinstance(sets, InputSets)
        from xlrepair.sandbox import normalize_output

        for probe in sets.probes:
            fixed_again = py_sandbox.execute(SRC.fixed, "python", probe.input)
            buggy_again = py_sandbox.execute(SRC.buggy, "python", probe.input)
            same = (
                fixed_again.category == buggy_again.category
                and normalize_output(fixed_again.stdout) == normalize_output(buggy_again.stdout)
            )
            assert probe.classification == ("regression" if same else "trigger")


class TestGenerateCandidates:
    def scripted_candidates(self, tmp_path, replies):
        def transport(prompt, req):
            return replies[req.sample_index]

        return scripted_client(tmp_path, transport)

    def test_distinct_candidates_returned(self, tmp_path, py_sandbox):
        replies = {
            i: f"```python\n{TGT_BUGGY_GOOD}# variant {i}\n```" for i in range(1, 6)
        }
        client = self.scripted_candidates(tmp_path, replies)
        candidates = generate_candidates(
            TGT_FIXED, make_descriptor(), make_spec(), client, py_sandbox, "python", n=5
        )
        assert len(candidates) == 5
        assert all(c.valid for c in candidates)
        assert [c.index for c in candidates] == [1, 2, 3, 4, 5]

    def test_identical_to_fixed_marked_invalid(self, tmp_path, py_sandbox):
        replies = {1: f"```python\n{TGT_FIXED}```"}
        client = self.scripted_candidates(tmp_path, replies)
        candidates = generate_candidates(
            TGT_FIXED, make_descriptor(), make_spec(), client, py_sandbox, "python", n=1
        )
        assert not candidates[0].valid
        assert "identical" in candidates[0].invalid_reason

    def test_syntax_error_retained_but_marked(self, tmp_path, py_sandbox):
        replies = {1: "```python\ndef broken(:\n```"}
        client = self.scripted_candidates(tmp_path, replies)
        candidates = generate_candidates(
            TGT_FIXED, make_descriptor(), make_spec(), client, py_sandbox, "python", n=1
        )
        assert len(candidates) == 1
        assert not candidates[0].valid
        assert candidates[0].invalid_reason == "syntax error"
        assert candidates[0].text is not None


def build_sets(tmp_path, py_sandbox):
    client = scripted_client(tmp_path, lambda p, r: blocks_reply(TRIGGERS + REGRESSIONS))
    sets = construct_input_sets(SRC, make_spec(), [], client, py_sandbox, budget=10)
    assert isinstance(sets, InputSets)
    return sets


class TestScoreCandidate:
    def test_perfect_reproduction(self, tmp_path, py_sandbox):
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        candidate = Candidate(index=1, text=TGT_BUGGY_GOOD, valid=True)
        score, cats = score_candidate(
            candidate, TGT_FIXED, sets, sets.trigger_outcomes(), tgt_outcomes,
            py_sandbox, "python",
        )
        assert score.n_defect == 3
        assert score.n_reg == 3
        assert all(cat == "wrong_output" for cat in cats.values())

    def test_fixed_semantics_scores_zero_defect(self, tmp_path, py_sandbox):
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        candidate = Candidate(index=1, text=TGT_FIXED + "# cosmetic\n", valid=True)
        score, _ = score_candidate(
            candidate, TGT_FIXED, sets, sets.trigger_outcomes(), tgt_outcomes,
            py_sandbox, "python",
        )
        assert score.n_defect == 0
        assert score.n_reg == 3

    def test_partial_reproduction(self, tmp_path, py_sandbox):
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        candidate = Candidate(index=2, text=TGT_BUGGY_PARTIAL, valid=True)
        score, _ = score_candidate(
            candidate, TGT_FIXED, sets, sets.trigger_outcomes(), tgt_outcomes,
            py_sandbox, "python",
        )
        # wrong only for n >= 3: trigger inputs 1 and 2 pass, 5 is wrong
        assert score.n_defect == 1
        assert score.n_reg == 3

    def test_invalid_candidate_scores_zero(self, tmp_path, py_sandbox):
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        candidate = Candidate(index=3, text="def broken(:\n", valid=False, invalid_reason="syntax error")
        score, _ = score_candidate(
            candidate, TGT_FIXED, sets, sets.trigger_outcomes(), tgt_outcomes,
            py_sandbox, "python",
        )
        assert (score.n_defect, score.n_reg) == (0, 0)

    def test_category_equivalence_not_byte_equality(self, tmp_path, py_sandbox):
        # source buggy prints 10 for n=5; a candidate printing 999 still
        # counts: both are wrong_output relative to their own fixed program
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        wild = "import sys\nsys.stdin.read()\nprint(999)\n"
        candidate = Candidate(index=1, text=wild, valid=True)
        score, _ = score_candidate(
            candidate, TGT_FIXED, sets, sets.trigger_outcomes(), tgt_outcomes,
            py_sandbox, "python",
        )
        assert score.n_defect == 3  # wrong_output on every trigger input
        assert score.n_reg == 0  # and it breaks every regression input

    def test_missing_trigger_outcomes_rejected(self, tmp_path, py_sandbox):
        sets = build_sets(tmp_path, py_sandbox)
        tgt_outcomes = execute_target_fixed(TGT_FIXED, sets, py_sandbox, "python")
        candidate = Candidate(index=1, text=TGT_BUGGY_GOOD, valid=True)
        with pytest.raises(ValueError):
            score_candidate(
                candidate, TGT_FIXED, sets, {}, tgt_outcomes, py_sandbox, "python"
            )


class TestSelectBuggy:
    def make(self, scores):
        candidates = [Candidate(index=i + 1, text=f"prog{i + 1}", valid=True) for i in range(len(scores))]
        score_objs = [
            CandidateScore(candidate_index=i + 1, n_defect=d, n_reg=r)
            for i, (d, r) in enumerate(scores)
        ]
        return score_objs, candidates

    def test_lexicographic_order(self):
        scores, candidates = self.make([(3, 5), (3, 7), (2, 9)])
        selected = select_buggy(scores, candidates)
        assert isinstance(selected, Candidate)
        assert selected.index == 2

    def test_zero_defect_rejected(self):
        scores, candidates = self.make([(0, 9), (0, 10)])
        assert isinstance(select_buggy(scores, candidates), InjectionFailed)

    def test_tie_break_lowest_index(self):
        scores, candidates = self.make([(2, 4), (2, 4)])
        selected = select_buggy(scores, candidates)
        assert selected.index == 1

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            select_buggy([], [])

    def test_permutation_invariance_and_oracle(self):
        rng = random.Random(7)
        for _ in range(200):
            n = rng.randint(1, 8)
            raw = [(rng.randint(0, 4), rng.randint(0, 5)) for _ in range(n)]
            scores, candidates = self.make(raw)

            def oracle(raw_scores):
                best_i, best = None, None
                for i, (d, r) in enumerate(raw_scores):
                    key = (d, r)
                    if best is None or key > best:
                        best, best_i = key, i
                return best_i, best

            best_i, best = oracle(raw)
            selected = select_buggy(scores, candidates)
            if best[0] == 0:
                assert isinstance(selected, InjectionFailed)
            else:
                assert isinstance(selected, Candidate)
                assert selected.index == best_i + 1
            # permutation invariance up to the index tie-break
            shuffled = list(zip(scores, candidates))
            rng.shuffle(shuffled)
            selected2 = select_buggy([s for s, _ in shuffled], [c for _, c in shuffled])
            if isinstance(selected, Candidate):
                assert isinstance(selected2, Candidate)
                assert selected2.index == selected.index

    def test_dominated_candidate_never_changes_winner(self):
        scores, candidates = self.make([(3, 5), (2, 9)])
        first = select_buggy(scores, candidates)
        more_scores, more_candidates = self.make([(3, 5), (2, 9), (1, 1)])
        second = select_buggy(more_scores, more_candidates)
        assert isinstance(first, Candidate) and isinstance(second, Candidate)
        assert first.index == second.index
