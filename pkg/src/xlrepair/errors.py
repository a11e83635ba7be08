"""Exception taxonomy shared across the pipeline.

Errors are split by who has to act on them: configuration mistakes
(operator), replay-cache misses (operator forgot to record), environment
problems (missing toolchain binaries, broken scratch dirs), and per-pair
stage failures (journaled, pipeline continues).
"""

from __future__ import annotations


class XLRepairError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(XLRepairError):
    """Invalid configuration. Carries field-level diagnostics."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class ReplayMissError(XLRepairError):
    """A completion request was not found in the replay cache."""

    def __init__(self, fingerprint: str, template_id: str):
        self.fingerprint = fingerprint
        self.template_id = template_id
        super().__init__(
            f"replay cache miss for template {template_id!r} "
            f"(fingerprint {fingerprint})"
        )


class SandboxEnvironmentError(XLRepairError):
    """The execution environment is broken (missing binary, scratch dir
    failure). Distinct from program-level compile errors."""


class JournalError(XLRepairError):
    """Illegal stage transition or unreadable journal."""


class StageFailure(XLRepairError):
    """A pipeline stage failed for one pair; journaled, not fatal."""

    def __init__(self, pair_id: str, stage: str, reason: str):
        self.pair_id = pair_id
        self.stage = stage
        self.reason = reason
        super().__init__(f"{stage} failed for {pair_id}: {reason}")
