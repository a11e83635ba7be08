import json

import pytest

from conftest import scripted_client
from xlrepair.corpus import SourcePair
from xlrepair.descriptor import DefectDescriptor, assess_transferability, build_descriptor
from xlrepair.diffs import compute_diff
from xlrepair.errors import StageFailure

PAIR = SourcePair(
    id="p1",
    lang="cpp",
    buggy="int main() {\n  for (int i = 1; i <= n; i++) s += i;\n}",
    fixed="int main() {\n  for (int i = 1; i < n; i++) s += i;\n}",
)


def json_reply(payload) -> str:
    return "analysis...\n```json\n" + json.dumps(payload) + "\n```\n"


class TestBuildDescriptor:
    def test_fields_come_from_llm_verbatim(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda prompt, req: json_reply(
                {"defect_type": "Off-by-one", "root_cause": "Incorrect relational operator '<='"}
            ),
        )
        desc = build_descriptor(PAIR, client)
        assert desc.defect_type == "Off-by-one"
        assert desc.root_cause == "Incorrect relational operator '<='"

    def test_diff_is_locally_computed(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda prompt, req: json_reply(
                {"defect_type": "t", "root_cause": "r", "diff": "LLM LIES"}
            ),
        )
        desc = build_descriptor(PAIR, client)
        local = compute_diff(PAIR.buggy, PAIR.fixed)
        assert desc.diff.to_dict() == local.to_dict()

    def test_prompt_carries_programs_and_diff(self, tmp_path):
        prompts_seen = []

        def transport(prompt, req):
            prompts_seen.append(prompt)
            return json_reply({"defect_type": "t", "root_cause": "r"})

        build_descriptor(PAIR, scripted_client(tmp_path, transport))
        prompt = prompts_seen[0]
        assert PAIR.buggy in prompt
        assert PAIR.fixed in prompt
        assert "i <= n" in prompt  # hunk text

    def test_retry_within_budget_succeeds(self, tmp_path):
        replies = iter(["garbage", "still garbage", json_reply({"defect_type": "t", "root_cause": "r"})])
        client = scripted_client(tmp_path, lambda prompt, req: next(replies))
        desc = build_descriptor(PAIR, client, parse_retries=2)
        assert desc.defect_type == "t"

    def test_unparseable_after_retries_is_stage_failure(self, tmp_path):
        client = scripted_client(tmp_path, lambda prompt, req: "never valid")
        with pytest.raises(StageFailure):
            build_descriptor(PAIR, client, parse_retries=2)

    def test_empty_fields_rejected(self):
        diff = compute_diff(PAIR.buggy, PAIR.fixed)
        with pytest.raises(ValueError):
            DefectDescriptor(defect_type="", root_cause="r", diff=diff)


class TestTransferability:
    def make_descriptor(self):
        return DefectDescriptor(
            defect_type="Off-by-one",
            root_cause="bad bound",
            diff=compute_diff(PAIR.buggy, PAIR.fixed),
        )

    def test_transferable_true(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda prompt, req: json_reply({"transferable": True, "rationale": "pure logic"}),
        )
        verdict = assess_transferability(self.make_descriptor(), "python", client)
        assert verdict.transferable
        assert verdict.target_lang == "python"

    def test_non_transferable_pointer_defect(self, tmp_path):
        client = scripted_client(
            tmp_path,
            lambda prompt, req: json_reply(
                {"transferable": False, "rationale": "relies on pointer arithmetic"}
            ),
        )
        verdict = assess_transferability(self.make_descriptor(), "python", client)
        assert not verdict.transferable
        assert "pointer" in verdict.rationale

    def test_unparseable_defaults_to_non_transferable(self, tmp_path):
        client = scripted_client(tmp_path, lambda prompt, req: "no structure here")
        verdict = assess_transferability(self.make_descriptor(), "python", client, parse_retries=1)
        assert not verdict.transferable
        assert verdict.rationale == "verdict unparseable"

    def test_negative_verdict_requires_rationale(self, tmp_path):
        # a bare {"transferable": false} is treated as unparseable and retried
        replies = iter(
            [
                json_reply({"transferable": False}),
                json_reply({"transferable": False, "rationale": "why"}),
            ]
        )
        client = scripted_client(tmp_path, lambda prompt, req: next(replies))
        verdict = assess_transferability(self.make_descriptor(), "python", client, parse_retries=1)
        assert verdict.rationale == "why"
