"""Line-level diffing between buggy and fixed programs.

The diff is the ground truth a defect descriptor is built around: hunks
carry the removed/added lines plus a few lines of context so they can be
embedded in prompts, and applying the hunks to the buggy text must
reproduce the fixed text exactly.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass

DEFAULT_CONTEXT_RADIUS = 3


@dataclass(frozen=True)
class Hunk:
    """One contiguous edit: lines [buggy_start, buggy_start+len(removed))
    of the buggy text are replaced by `added`. Line numbers are 0-based."""

    buggy_start: int
    fixed_start: int
    removed: tuple[str, ...]
    added: tuple[str, ...]
    context_before: tuple[str, ...] = ()
    context_after: tuple[str, ...] = ()


@dataclass
class PatchDiff:
    hunks: list[Hunk]
    context_radius: int = DEFAULT_CONTEXT_RADIUS

    def to_dict(self) -> dict:
        return {
            "context_radius": self.context_radius,
            "hunks": [
                {
                    "buggy_start": h.buggy_start,
                    "fixed_start": h.fixed_start,
                    "removed": list(h.removed),
                    "added": list(h.added),
                    "context_before": list(h.context_before),
                    "context_after": list(h.context_after),
                }
                for h in self.hunks
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PatchDiff":
        hunks = [
            Hunk(
                buggy_start=h["buggy_start"],
                fixed_start=h["fixed_start"],
                removed=tuple(h["removed"]),
                added=tuple(h["added"]),
                context_before=tuple(h.get("context_before", ())),
                context_after=tuple(h.get("context_after", ())),
            )
            for h in data["hunks"]
        ]
        return cls(hunks=hunks, context_radius=data.get("context_radius", DEFAULT_CONTEXT_RADIUS))


class EmptyDiffError(ValueError):
    """buggy and fixed texts are identical."""


def _lines(text: str) -> list[str]:
    # split (not splitlines) so "\n".join round-trips byte-exactly,
    # including a missing trailing newline
    return text.split("\n")


def compute_diff(buggy: str, fixed: str, context_radius: int = DEFAULT_CONTEXT_RADIUS) -> PatchDiff:
    """Minimal line-based longest-common-subsequence diff.

    Raises EmptyDiffError when the texts are identical, ValueError when
    either text is empty.
    """
    if not buggy or not fixed:
        raise ValueError("both texts must be non-empty")
    if buggy == fixed:
        raise EmptyDiffError("empty diff: buggy and fixed are identical")

    a = _lines(buggy)
    b = _lines(fixed)
    matcher = difflib.SequenceMatcher(a=a, b=b, autojunk=False)
    hunks: list[Hunk] = []
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            continue
        ctx_lo = max(0, i1 - context_radius)
        ctx_hi = min(len(a), i2 + context_radius)
        hunks.append(
            Hunk(
                buggy_start=i1,
                fixed_start=j1,
                removed=tuple(a[i1:i2]),
                added=tuple(b[j1:j2]),
                context_before=tuple(a[ctx_lo:i1]),
                context_after=tuple(a[i2:ctx_hi]),
            )
        )
    return PatchDiff(hunks=hunks, context_radius=context_radius)


def apply_diff(buggy: str, diff: PatchDiff) -> str:
    """Apply hunks to the buggy text, reconstructing the fixed text."""
    a = _lines(buggy)
    out: list[str] = []
    cursor = 0
    for hunk in diff.hunks:
        if hunk.buggy_start < cursor:
            raise ValueError("hunks overlap or are out of order")
        out.extend(a[cursor : hunk.buggy_start])
        expect = a[hunk.buggy_start : hunk.buggy_start + len(hunk.removed)]
        if tuple(expect) != hunk.removed:
            raise ValueError(
                f"hunk at line {hunk.buggy_start} does not match the buggy text"
            )
        out.extend(hunk.added)
        cursor = hunk.buggy_start + len(hunk.removed)
    out.extend(a[cursor:])
    return "\n".join(out)


def render_hunks(diff: PatchDiff) -> str:
    """Human/LLM-readable rendering of the hunks with context, in the
    familiar -/+ notation. Used when embedding the patch in prompts."""
    parts: list[str] = []
    for idx, hunk in enumerate(diff.hunks, start=1):
        lines = [f"@@ hunk {idx} (buggy line {hunk.buggy_start + 1}) @@"]
        lines.extend(f"  {line}" for line in hunk.context_before)
        lines.extend(f"- {line}" for line in hunk.removed)
        lines.extend(f"+ {line}" for line in hunk.added)
        lines.extend(f"  {line}" for line in hunk.context_after)
        parts.append("\n".join(lines))
    return "\n".join(parts)
