import shutil

import pytest

from xlrepair.llm import LLMClient, ReplayCache
from xlrepair.sandbox import Sandbox, ToolchainProfile

HAVE_GCC = shutil.which("g++") is not None and shutil.which("gcov") is not None

needs_gcc = pytest.mark.skipif(not HAVE_GCC, reason="g++/gcov not installed")


def cpp_profile(**overrides) -> ToolchainProfile:
    kwargs = dict(
        lang="cpp",
        compile_cmd="g++ -O1 -std=c++17 {src} -o {bin}",
        run_cmd="{bin}",
        source_ext=".cpp",
        compile_timeout=60.0,
        run_timeout=10.0,
        exception_patterns=[r"terminate called"],
        coverage_compile_cmd="g++ --coverage -fno-exceptions {src} -o {bin}",
        coverage_report_cmd="gcov -b {src}",
    )
    kwargs.update(overrides)
    return ToolchainProfile(**kwargs)


def python_profile(**overrides) -> ToolchainProfile:
    kwargs = dict(
        lang="python",
        run_cmd="python3 {src}",
        check_cmd="python3 -m py_compile {src}",
        source_ext=".py",
        run_timeout=10.0,
        exception_patterns=[r"Traceback \(most recent call last\)"],
    )
    kwargs.update(overrides)
    return ToolchainProfile(**kwargs)


@pytest.fixture
def py_sandbox(tmp_path):
    box = Sandbox({"python": python_profile()}, work_root=tmp_path / "sandbox")
    yield box
    box.close()


@pytest.fixture
def full_sandbox(tmp_path):
    box = Sandbox(
        {"cpp": cpp_profile(), "python": python_profile()},
        work_root=tmp_path / "sandbox",
    )
    yield box
    box.close()


def scripted_client(tmp_path, transport) -> LLMClient:
    """Real client in record mode against an in-process scripted transport."""
    return LLMClient(
        mode="record",
        cache=ReplayCache(tmp_path / "scripted-cache.jsonl"),
        transport=transport,
        sleep=lambda s: None,
    )
