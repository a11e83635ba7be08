"""Repair-pair data model, JSONL ingestion, and the append-only journal.

The journal is the single source of truth for pipeline state: every stage
decision for a pair is one checksummed line, and replaying the file
reconstructs the exact in-memory state, so a crashed run resumes where it
stopped.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import JournalError

logger = logging.getLogger(__name__)


def normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _strip_trailing_ws(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.split("\n"))


def content_id(lang: str, buggy: str, fixed: str) -> str:
    """Stable content hash so re-ingesting the same record deduplicates."""
    h = hashlib.sha256()
    for part in (lang, buggy, fixed):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass
class SourcePair:
    id: str
    lang: str
    buggy: str
    fixed: str
    problem_meta: dict = field(default_factory=dict)


@dataclass
class TargetPair:
    source_id: str
    lang: str
    buggy: str
    fixed: str
    provenance: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return content_id(self.lang, self.buggy, self.fixed)


@dataclass
class ParallelQuad:
    src: SourcePair
    tgt: TargetPair

    def __post_init__(self):
        if self.tgt.source_id != self.src.id:
            raise ValueError("target pair does not originate from this source pair")
        if self.tgt.lang == self.src.lang:
            raise ValueError("source and target languages must differ")


class Stage(str, enum.Enum):
    INGESTED = "ingested"
    DESCRIPTOR_BUILT = "descriptor_built"
    TRANSFERABLE = "transferable"
    FILTERED_OUT = "filtered_out"
    TESTS_GENERATED = "tests_generated"
    TRANSLATED = "translated"
    TRANSLATION_FAILED = "translation_failed"
    INJECTED = "injected"
    INJECTION_FAILED = "injection_failed"
    QUAD_VERIFIED = "quad_verified"


TERMINAL_STAGES = frozenset(
    {Stage.FILTERED_OUT, Stage.TRANSLATION_FAILED, Stage.INJECTION_FAILED, Stage.QUAD_VERIFIED}
)

# Legal successors. Failures before translation funnel into FILTERED_OUT
# (with a reason in the payload); later failures get their own terminal.
_SUCCESSORS: dict[Optional[Stage], frozenset[Stage]] = {
    None: frozenset({Stage.INGESTED}),
    Stage.INGESTED: frozenset({Stage.DESCRIPTOR_BUILT, Stage.FILTERED_OUT}),
    Stage.DESCRIPTOR_BUILT: frozenset({Stage.TRANSFERABLE, Stage.FILTERED_OUT}),
    Stage.TRANSFERABLE: frozenset({Stage.TESTS_GENERATED, Stage.FILTERED_OUT}),
    Stage.TESTS_GENERATED: frozenset({Stage.TRANSLATED, Stage.TRANSLATION_FAILED}),
    Stage.TRANSLATED: frozenset({Stage.INJECTED, Stage.INJECTION_FAILED}),
    Stage.INJECTED: frozenset({Stage.QUAD_VERIFIED, Stage.INJECTION_FAILED}),
    Stage.FILTERED_OUT: frozenset(),
    Stage.TRANSLATION_FAILED: frozenset(),
    Stage.INJECTION_FAILED: frozenset(),
    Stage.QUAD_VERIFIED: frozenset(),
}


@dataclass
class PipelineRecord:
    pair_id: str
    stage: Stage
    payload: dict
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "stage": self.stage.value,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineRecord":
        return cls(
            pair_id=data["pair_id"],
            stage=Stage(data["stage"]),
            payload=data["payload"],
            timestamp=data["timestamp"],
        )


@dataclass
class IngestDiagnostic:
    line_no: int
    reason: str


def ingest(path: str | Path, lang: str) -> tuple[list[SourcePair], list[IngestDiagnostic]]:
    """Read buggy-fixed pairs from a JSONL file.

    Returns pairs in file order plus one diagnostic per rejected line, so
    that pairs + diagnostics always account for every input line.
    """
    path = Path(path)
    pairs: list[SourcePair] = []
    diagnostics: list[IngestDiagnostic] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                diagnostics.append(IngestDiagnostic(line_no, "blank line"))
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                diagnostics.append(IngestDiagnostic(line_no, f"malformed JSON: {exc.msg}"))
                continue
            if not isinstance(record, dict):
                diagnostics.append(IngestDiagnostic(line_no, "record is not an object"))
                continue
            missing = [k for k in ("buggy", "fixed") if not isinstance(record.get(k), str)]
            if missing:
                diagnostics.append(
                    IngestDiagnostic(line_no, f"missing required field(s): {', '.join(missing)}")
                )
                continue
            buggy = normalize_newlines(record["buggy"])
            fixed = normalize_newlines(record["fixed"])
            if not buggy.strip() or not fixed.strip():
                diagnostics.append(IngestDiagnostic(line_no, "empty program text"))
                continue
            if _strip_trailing_ws(buggy) == _strip_trailing_ws(fixed):
                diagnostics.append(IngestDiagnostic(line_no, "no diff"))
                continue
            pair_lang = record.get("lang", lang)
            if pair_lang != lang:
                diagnostics.append(
                    IngestDiagnostic(line_no, f"language {pair_lang!r} does not match requested {lang!r}")
                )
                continue
            pid = content_id(lang, buggy, fixed)
            if pid in seen:
                diagnostics.append(IngestDiagnostic(line_no, f"duplicate of pair {pid}"))
                continue
            seen.add(pid)
            meta = record.get("meta") or {}
            if "id" in record:
                meta = {**meta, "source_record_id": record["id"]}
            pairs.append(SourcePair(id=pid, lang=lang, buggy=buggy, fixed=fixed, problem_meta=meta))
    return pairs, diagnostics


def _record_checksum(record_json: str) -> str:
    return format(zlib.crc32(record_json.encode("utf-8")) & 0xFFFFFFFF, "08x")


@dataclass
class PairState:
    stage: Stage
    payload: dict
    # every payload this pair journaled, by stage, for lineage queries
    history: dict[str, dict] = field(default_factory=dict)

    @property
    def terminal(self) -> bool:
        return self.stage in TERMINAL_STAGES


class Journal:
    """Append-only, checksummed, line-delimited journal.

    Appends are serialized under a lock; the reconstructed state map is a
    snapshot safe to hand to workers.
    """

    def __init__(self, path: str | Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()
        self._state: dict[str, PairState] = {}
        self._records = 0
        if self.path.exists():
            self._replay_existing()

    def _replay_existing(self) -> None:
        state, records, warning = _read_journal(self.path)
        if warning:
            logger.warning("%s", warning)
            # drop the unreadable tail so subsequent appends are clean
            self._truncate_to(records)
        self._state = state
        self._records = records

    def _truncate_to(self, n_records: int) -> None:
        good: list[str] = []
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if len(good) == n_records:
                    break
                good.append(line)
        with self.path.open("w", encoding="utf-8") as fh:
            fh.writelines(good)

    def append(self, pair_id: str, stage: Stage, payload: dict) -> PipelineRecord:
        with self._lock:
            last = self._state.get(pair_id)
            last_stage = last.stage if last else None
            if stage not in _SUCCESSORS[last_stage]:
                raise JournalError(
                    f"illegal stage transition for {pair_id}: "
                    f"{last_stage.value if last_stage else '(new)'} -> {stage.value}"
                )
            record = PipelineRecord(
                pair_id=pair_id, stage=stage, payload=payload, timestamp=self._clock()
            )
            record_json = json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))
            line = json.dumps(
                {"crc": _record_checksum(record_json), "record": json.loads(record_json)},
                sort_keys=True,
                separators=(",", ":"),
            )
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
            self._apply(record)
            self._records += 1
            return record

    def _apply(self, record: PipelineRecord) -> None:
        existing = self._state.get(record.pair_id)
        history = existing.history if existing else {}
        history[record.stage.value] = record.payload
        self._state[record.pair_id] = PairState(
            stage=record.stage, payload=record.payload, history=history
        )

    def state(self) -> dict[str, PairState]:
        """Immutable-by-convention snapshot of the current state map."""
        with self._lock:
            return {
                pid: PairState(stage=s.stage, payload=s.payload, history=dict(s.history))
                for pid, s in self._state.items()
            }


def _read_journal(path: Path) -> tuple[dict[str, PairState], int, Optional[str]]:
    state: dict[str, PairState] = {}
    records = 0
    warning: Optional[str] = None
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            try:
                envelope = json.loads(stripped)
                record_json = json.dumps(
                    envelope["record"], sort_keys=True, separators=(",", ":")
                )
                if _record_checksum(record_json) != envelope["crc"]:
                    raise ValueError("checksum mismatch")
                record = PipelineRecord.from_dict(envelope["record"])
            except (ValueError, KeyError, TypeError) as exc:
                warning = (
                    f"journal {path}: unreadable record at line {line_no} ({exc}); "
                    f"state reconstructed from the {records} preceding records"
                )
                break
            existing = state.get(record.pair_id)
            history = existing.history if existing else {}
            history[record.stage.value] = record.payload
            state[record.pair_id] = PairState(
                stage=record.stage, payload=record.payload, history=history
            )
            records += 1
    return state, records, warning


def resume(path: str | Path) -> dict[str, PairState]:
    """Reconstruct pipeline state from a journal file.

    A corrupted trailing record (truncated write) is dropped with a
    warning; everything before it is kept.
    """
    path = Path(path)
    if not path.exists():
        return {}
    state, _, warning = _read_journal(path)
    if warning:
        logger.warning("%s", warning)
    return state


def iter_records(path: str | Path) -> Iterable[PipelineRecord]:
    """Yield valid records in journal order, stopping at corruption."""
    path = Path(path)
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            try:
                envelope = json.loads(stripped)
                record_json = json.dumps(
                    envelope["record"], sort_keys=True, separators=(",", ":")
                )
                if _record_checksum(record_json) != envelope["crc"]:
                    return
                yield PipelineRecord.from_dict(envelope["record"])
            except (ValueError, KeyError, TypeError):
                return
