"""Compile and run single-file programs in isolated scratch directories.

Each configured language gets a toolchain profile (command templates,
limits, stderr classifiers). Outcomes are bucketed into the failure
categories the rest of the pipeline reasons about; classification
precedence is compile_error > timeout > crash/exception > wrong_output |
pass.
"""

from __future__ import annotations

import hashlib
import logging
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import SandboxEnvironmentError

logger = logging.getLogger(__name__)

CATEGORIES = ("pass", "wrong_output", "crash", "exception", "timeout", "compile_error")


@dataclass
class ToolchainProfile:
    lang: str
    run_cmd: str
    compile_cmd: str = ""
    check_cmd: str = ""  # parse-only check for interpreted languages
    source_ext: str = ".txt"
    compile_timeout: float = 30.0
    run_timeout: float = 10.0
    memory_limit: int = 512 * 1024 * 1024
    exception_patterns: list[str] = field(default_factory=list)
    coverage_compile_cmd: str = ""
    coverage_report_cmd: str = ""

    def __post_init__(self):
        if not self.run_cmd:
            raise ValueError(f"toolchain {self.lang!r}: run_cmd must be non-empty")
        if self.compile_timeout <= 0 or self.run_timeout <= 0:
            raise ValueError(f"toolchain {self.lang!r}: timeouts must be > 0")
        self._exception_res = [re.compile(p) for p in self.exception_patterns]

    def matches_exception(self, stderr: str) -> bool:
        return any(r.search(stderr) for r in self._exception_res)


@dataclass
class ExecutionOutcome:
    category: str
    stdout: str = ""
    stderr: str = ""
    exit_code: int = 0
    duration: float = 0.0


@dataclass
class SyntaxCheckResult:
    ok: bool
    diagnostics: str = ""


@dataclass
class CoverageReport:
    line_pct: float
    branch_pct: float
    detail: str = ""

    def __post_init__(self):
        for name, value in (("line_pct", self.line_pct), ("branch_pct", self.branch_pct)):
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"{name} out of range: {value}")


def normalize_output(text: str) -> str:
    """Trailing whitespace per line stripped, trailing blank lines dropped.

    Idempotent by construction; this is the only comparison form anywhere
    in the pipeline.
    """
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def _program_hash(lang: str, program: str) -> str:
    return hashlib.sha256(f"{lang}\x00{program}".encode("utf-8")).hexdigest()[:24]


def _render_cmd(template: str, **subs: str) -> list[str]:
    parts = shlex.split(template)
    rendered = []
    for part in parts:
        for key, value in subs.items():
            part = part.replace("{" + key + "}", value)
        rendered.append(part)
    return rendered


def _make_limiter(memory_limit: int, cpu_seconds: float):
    import resource

    def _apply():
        cpu = max(1, int(cpu_seconds) + 1)
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
        if memory_limit > 0:
            resource.setrlimit(resource.RLIMIT_AS, (memory_limit, memory_limit))

    return _apply


class Sandbox:
    def __init__(self, profiles: dict[str, ToolchainProfile], work_root: Optional[str | Path] = None):
        self.profiles = dict(profiles)
        if work_root is None:
            self._root = Path(tempfile.mkdtemp(prefix="xlrepair-sandbox-"))
            self._owns_root = True
        else:
            self._root = Path(work_root)
            self._root.mkdir(parents=True, exist_ok=True)
            self._owns_root = False
        self._bin_cache_dir = self._root / "bincache"
        self._bin_cache_dir.mkdir(exist_ok=True)
        self._compile_lock = threading.Lock()
        # hash -> binary path on success, diagnostics string on failure
        self._compile_cache: dict[str, Path | str] = {}
        self._check_cache: dict[str, SyntaxCheckResult] = {}

    def close(self) -> None:
        if self._owns_root:
            shutil.rmtree(self._root, ignore_errors=True)

    def profile(self, lang: str) -> ToolchainProfile:
        try:
            return self.profiles[lang]
        except KeyError:
            raise SandboxEnvironmentError(f"no toolchain profile registered for language {lang!r}")

    def _scratch(self) -> Path:
        return Path(tempfile.mkdtemp(dir=self._root, prefix="run-"))

    def _run(
        self,
        cmd: list[str],
        cwd: Path,
        timeout: float,
        input_text: str = "",
        memory_limit: int = 0,
    ) -> tuple[int, str, str, float, bool]:
        """Returns (exit_code, stdout, stderr, duration, timed_out)."""
        import time as _time

        if not shutil.which(cmd[0]) and not Path(cmd[0]).exists():
            raise SandboxEnvironmentError(f"toolchain binary not found: {cmd[0]}")
        start = _time.monotonic()
        try:
            proc = subprocess.Popen(
                cmd,
                cwd=str(cwd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
                preexec_fn=_make_limiter(memory_limit, timeout) if memory_limit else None,
            )
        except OSError as exc:
            raise SandboxEnvironmentError(f"failed to launch {cmd[0]}: {exc}")
        try:
            out, err = proc.communicate(input_text.encode("utf-8"), timeout=timeout)
            timed_out = False
        except subprocess.TimeoutExpired:
            import os
            import signal

            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            out, err = proc.communicate()
            timed_out = True
        duration = _time.monotonic() - start
        return (
            proc.returncode if not timed_out else -9,
            out.decode("utf-8", errors="replace"),
            err.decode("utf-8", errors="replace"),
            duration,
            timed_out,
        )

    def _compile(self, program: str, profile: ToolchainProfile, scratch: Path) -> Path | str:
        """Compile into the binary cache; returns binary path or
        diagnostics string on compile error."""
        key = _program_hash(profile.lang, program)
        with self._compile_lock:
            if key in self._compile_cache:
                return self._compile_cache[key]
        src = scratch / f"prog{profile.source_ext}"
        src.write_text(program, encoding="utf-8")
        binary = scratch / "prog.bin"
        cmd = _render_cmd(profile.compile_cmd, src=str(src), bin=str(binary))
        code, _, err, _, timed_out = self._run(cmd, scratch, profile.compile_timeout)
        if timed_out:
            result: Path | str = f"compiler timed out after {profile.compile_timeout}s"
        elif code != 0 or not binary.exists():
            result = err or f"compiler exited with code {code}"
        else:
            cached = self._bin_cache_dir / key
            shutil.copy2(binary, cached)
            cached.chmod(0o755)
            result = cached
        with self._compile_lock:
            self._compile_cache[key] = result
        return result

    def syntax_check(self, program: str, lang: str) -> SyntaxCheckResult:
        """Full compile for compiled languages, parse-only for interpreted
        ones. Cached by program content."""
        profile = self.profile(lang)
        key = _program_hash(lang, program)
        with self._compile_lock:
            cached = self._check_cache.get(key)
        if cached is not None:
            return cached
        scratch = self._scratch()
        try:
            if profile.compile_cmd:
                compiled = self._compile(program, profile, scratch)
                result = (
                    SyntaxCheckResult(ok=True)
                    if isinstance(compiled, Path)
                    else SyntaxCheckResult(ok=False, diagnostics=compiled)
                )
            elif profile.check_cmd:
                src = scratch / f"prog{profile.source_ext}"
                src.write_text(program, encoding="utf-8")
                cmd = _render_cmd(profile.check_cmd, src=str(src))
                code, _, err, _, timed_out = self._run(cmd, scratch, profile.compile_timeout)
                if timed_out:
                    result = SyntaxCheckResult(ok=False, diagnostics="syntax check timed out")
                else:
                    result = SyntaxCheckResult(ok=code == 0, diagnostics=err if code != 0 else "")
            else:
                # no static check available for this toolchain
                result = SyntaxCheckResult(ok=True)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)
        with self._compile_lock:
            self._check_cache[key] = result
        return result

    def execute(
        self,
        program: str,
        lang: str,
        input_text: str,
        expected: Optional[str] = None,
    ) -> ExecutionOutcome:
        """Run the program on stdin input in a fresh scratch directory.

        When `expected` is given, normalized stdout is compared against it
        to decide pass vs wrong_output; without it, a clean exit is a pass.
        """
        profile = self.profile(lang)
        if not profile.compile_cmd and profile.check_cmd:
            # interpreted languages: a parse failure is a compile_error,
            # not a runtime exception (the check result is cached)
            check = self.syntax_check(program, lang)
            if not check.ok:
                return ExecutionOutcome(
                    category="compile_error", stderr=check.diagnostics, exit_code=-1
                )
        scratch = self._scratch()
        try:
            if profile.compile_cmd:
                compiled = self._compile(program, profile, scratch)
                if isinstance(compiled, str):
                    return ExecutionOutcome(
                        category="compile_error", stderr=compiled, exit_code=-1
                    )
                run_target = scratch / "prog.bin"
                shutil.copy2(compiled, run_target)
                run_target.chmod(0o755)
                src = scratch / f"prog{profile.source_ext}"
                if not src.exists():
                    src.write_text(program, encoding="utf-8")
            else:
                src = scratch / f"prog{profile.source_ext}"
                src.write_text(program, encoding="utf-8")
                run_target = src
            cmd = _render_cmd(profile.run_cmd, src=str(src), bin=str(run_target))
            stdin_text = input_text
            if "{input}" in profile.run_cmd:
                input_file = scratch / "input.txt"
                input_file.write_text(input_text, encoding="utf-8")
                cmd = _render_cmd(
                    profile.run_cmd, src=str(src), bin=str(run_target), input=str(input_file)
                )
                stdin_text = ""
            code, out, err, duration, timed_out = self._run(
                cmd, scratch, profile.run_timeout, stdin_text, profile.memory_limit
            )
            return self._classify(profile, code, out, err, duration, timed_out, expected)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)

    def _classify(
        self,
        profile: ToolchainProfile,
        code: int,
        out: str,
        err: str,
        duration: float,
        timed_out: bool,
        expected: Optional[str],
    ) -> ExecutionOutcome:
        if timed_out:
            return ExecutionOutcome("timeout", out, err, code, duration)
        if code != 0:
            # structured runtime-error message wins over raw signal death
            category = "exception" if profile.matches_exception(err) else "crash"
            return ExecutionOutcome(category, out, err, code, duration)
        if expected is not None and normalize_output(out) != normalize_output(expected):
            return ExecutionOutcome("wrong_output", out, err, code, duration)
        return ExecutionOutcome("pass", out, err, code, duration)

    def measure_coverage(self, program: str, lang: str, inputs: Sequence[str]) -> CoverageReport:
        """Compile with coverage instrumentation, run every input
        cumulatively, and parse the coverage tool's summary text."""
        profile = self.profile(lang)
        if not profile.coverage_compile_cmd or not profile.coverage_report_cmd:
            raise SandboxEnvironmentError(
                f"toolchain {lang!r} has no coverage-instrumented profile"
            )
        if not inputs:
            raise ValueError("empty suite: coverage needs at least one input")
        scratch = self._scratch()
        try:
            src_name = f"prog{profile.source_ext}"
            src = scratch / src_name
            src.write_text(program, encoding="utf-8")
            # the binary must share the source stem or gcc prefixes the
            # .gcno/.gcda names with it and gcov cannot find them
            binary = scratch / "prog"
            cmd = _render_cmd(profile.coverage_compile_cmd, src=str(src), bin=str(binary))
            code, _, err, _, timed_out = self._run(cmd, scratch, profile.compile_timeout)
            if timed_out or code != 0:
                raise SandboxEnvironmentError(
                    f"coverage compile failed for {lang!r}: {err[:500]}"
                )
            run_cmd = _render_cmd(profile.run_cmd, src=str(src), bin=str(binary))
            for input_text in inputs:
                self._run(run_cmd, scratch, profile.run_timeout, input_text, profile.memory_limit)
            report_cmd = _render_cmd(
                profile.coverage_report_cmd, src=src_name, bin=str(binary)
            )
            _, report_out, report_err, _, _ = self._run(
                report_cmd, scratch, profile.compile_timeout
            )
            return parse_coverage_summary(report_out, src_name, raw_fallback=report_err)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)


_LINES_RE = re.compile(r"Lines executed:\s*([0-9.]+)%\s+of\s+(\d+)")
_BRANCHES_RE = re.compile(r"Branches executed:\s*([0-9.]+)%\s+of\s+(\d+)")
_TAKEN_RE = re.compile(r"Taken at least once:\s*([0-9.]+)%\s+of\s+(\d+)")
_NO_BRANCHES_RE = re.compile(r"No branches")


def parse_coverage_summary(text: str, src_name: str = "", raw_fallback: str = "") -> CoverageReport:
    """Parse gcov-style summary text into line/branch percentages.

    "Taken at least once" is the branch figure when present (it is the
    one that drops when only one side of a branch runs); "Branches
    executed" is the fallback for reports without it. A program with no
    branches reports 100% so a conjunctive gate stays satisfiable.
    """
    section = text
    if src_name:
        # limit parsing to the block for our source file when the tool
        # reports several files
        marker = f"File '{src_name}'"
        idx = text.find(marker)
        if idx == -1:
            for line in text.splitlines():
                if line.startswith("File ") and src_name in line:
                    idx = text.find(line)
                    break
        if idx != -1:
            rest = text[idx:]
            nxt = rest.find("File ", len(marker))
            section = rest if nxt == -1 else rest[:nxt]
    lines_m = _LINES_RE.search(section)
    if not lines_m:
        raise ValueError(
            "unparseable coverage report: no 'Lines executed' summary found\n"
            + (text or raw_fallback)[:1000]
        )
    line_pct = float(lines_m.group(1))
    taken_m = _TAKEN_RE.search(section)
    branches_m = _BRANCHES_RE.search(section)
    if taken_m and int(taken_m.group(2)) > 0:
        branch_pct = float(taken_m.group(1))
    elif branches_m and int(branches_m.group(2)) > 0:
        branch_pct = float(branches_m.group(1))
    elif _NO_BRANCHES_RE.search(section) or branches_m or taken_m:
        branch_pct = 100.0
    else:
        branch_pct = 100.0
    return CoverageReport(line_pct=line_pct, branch_pct=branch_pct, detail=section.strip())
