"""Defect descriptor extraction and the transferability gate.

The descriptor couples two provenances: defect_type/root_cause come from
the model, the patch itself is always the locally computed diff. The
transferability verdict decides whether a defect's mechanism exists in
the target language at all; anything unparseable defaults to dropping
the pair, because every downstream stage is expensive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import diffs, llm as llm_mod
from .corpus import SourcePair
from .errors import StageFailure
from .llm import CompletionRequest, LLMClient

logger = logging.getLogger(__name__)


@dataclass
class DefectDescriptor:
    defect_type: str
    root_cause: str
    diff: diffs.PatchDiff

    def __post_init__(self):
        if not self.defect_type.strip() or not self.root_cause.strip():
            raise ValueError("defect_type and root_cause must be non-empty")
        if not self.diff.hunks:
            raise ValueError("descriptor diff must have at least one hunk")

    def to_dict(self) -> dict:
        return {
            "defect_type": self.defect_type,
            "root_cause": self.root_cause,
            "diff": self.diff.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DefectDescriptor":
        return cls(
            defect_type=data["defect_type"],
            root_cause=data["root_cause"],
            diff=diffs.PatchDiff.from_dict(data["diff"]),
        )


@dataclass
class TransferabilityVerdict:
    transferable: bool
    rationale: str
    target_lang: str

    def __post_init__(self):
        if not self.transferable and not self.rationale.strip():
            raise ValueError("a negative verdict needs a rationale")


def build_descriptor(
    pair: SourcePair,
    llm: LLMClient,
    context_radius: int = diffs.DEFAULT_CONTEXT_RADIUS,
    temperature: float = 1.0,
    max_tokens: int = 1024,
    parse_retries: int = 2,
) -> DefectDescriptor:
    """Diff locally, then ask the model to label the defect.

    The model sees both programs and the diff; its reply must carry a
    fenced JSON object with defect_type and root_cause. The diff field of
    the result is the local computation, never model output.
    """
    diff = diffs.compute_diff(pair.buggy, pair.fixed, context_radius)
    bindings = {
        "buggy": pair.buggy,
        "fixed": pair.fixed,
        "diff": diffs.render_hunks(diff),
        "lang": pair.lang,
    }
    for attempt in range(parse_retries + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="descriptor",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=attempt,
            )
        )
        data = llm_mod.extract_json(reply)
        if data is None:
            continue
        defect_type = str(data.get("defect_type", "")).strip()
        root_cause = str(data.get("root_cause", "")).strip()
        if defect_type and root_cause:
            return DefectDescriptor(defect_type=defect_type, root_cause=root_cause, diff=diff)
    raise StageFailure(pair.id, "descriptor_built", "descriptor reply unparseable after retries")


def assess_transferability(
    desc: DefectDescriptor,
    target_lang: str,
    llm: LLMClient,
    temperature: float = 1.0,
    max_tokens: int = 512,
    parse_retries: int = 2,
) -> TransferabilityVerdict:
    """Judge whether the defect mechanism exists in the target language.

    Unparseable replies after the retry budget yield a conservative
    non-transferable verdict instead of an error.
    """
    bindings = {
        "defect_type": desc.defect_type,
        "root_cause": desc.root_cause,
        "diff": diffs.render_hunks(desc.diff),
        "target_lang": target_lang,
    }
    for attempt in range(parse_retries + 1):
        reply = llm.complete(
            CompletionRequest(
                template_id="transferability",
                bindings=bindings,
                temperature=temperature,
                max_tokens=max_tokens,
                sample_index=attempt,
            )
        )
        data = llm_mod.extract_json(reply)
        if data is None or not isinstance(data.get("transferable"), bool):
            continue
        rationale = str(data.get("rationale", "")).strip()
        if not data["transferable"] and not rationale:
            continue
        return TransferabilityVerdict(
            transferable=data["transferable"],
            rationale=rationale or "transferable",
            target_lang=target_lang,
        )
    logger.warning("transferability verdict unparseable; dropping conservatively")
    return TransferabilityVerdict(
        transferable=False, rationale="verdict unparseable", target_lang=target_lang
    )
