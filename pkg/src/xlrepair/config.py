"""Pipeline configuration: one TOML document with [toolchains], [llm],
[pipeline], [languages] and [paths] sections.

Validation collects field-level diagnostics instead of failing on the
first problem, so an operator fixes a config in one round trip.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .sandbox import ToolchainProfile


@dataclass
class LLMSettings:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "XLREPAIR_API_KEY"
    temperature: float = 1.0
    max_tokens: int = 4096
    retries: int = 3
    parse_retries: int = 2
    requests_per_minute: int = 600
    max_inflight: int = 4
    # per-stage overrides: stage name -> {temperature, max_tokens}
    stages: dict[str, dict] = field(default_factory=dict)

    def stage_temperature(self, stage: str) -> float:
        return float(self.stages.get(stage, {}).get("temperature", self.temperature))

    def stage_max_tokens(self, stage: str) -> int:
        return int(self.stages.get(stage, {}).get("max_tokens", self.max_tokens))


@dataclass
class PipelineSettings:
    tau: float = 0.90
    translation_attempts: int = 5  # m
    injection_candidates: int = 5  # n
    testgen_inputs_per_round: int = 10
    testgen_rounds: int = 3
    injection_input_budget: int = 10
    context_radius: int = 3
    workers: int = 1


@dataclass
class PathSettings:
    output_dir: str = "out"
    template_dir: str = ""  # empty -> packaged templates


@dataclass
class Config:
    toolchains: dict[str, ToolchainProfile]
    source_lang: str
    target_langs: list[str]
    llm: LLMSettings = field(default_factory=LLMSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def template_dir(self) -> Optional[str]:
        return self.paths.template_dir or None


_TOOLCHAIN_FIELDS = {
    "compile_cmd": str,
    "run_cmd": str,
    "check_cmd": str,
    "source_ext": str,
    "compile_timeout": (int, float),
    "run_timeout": (int, float),
    "memory_limit": int,
    "exception_patterns": list,
    "coverage_compile_cmd": str,
    "coverage_report_cmd": str,
}


def _build_toolchains(raw: dict, diags: list[str]) -> dict[str, ToolchainProfile]:
    profiles: dict[str, ToolchainProfile] = {}
    for lang, section in raw.items():
        if not isinstance(section, dict):
            diags.append(f"toolchains.{lang}: expected a table")
            continue
        kwargs: dict[str, Any] = {"lang": lang}
        ok = True
        for key, value in section.items():
            if key not in _TOOLCHAIN_FIELDS:
                diags.append(f"toolchains.{lang}.{key}: unknown key")
                ok = False
                continue
            if not isinstance(value, _TOOLCHAIN_FIELDS[key]):
                diags.append(f"toolchains.{lang}.{key}: wrong type")
                ok = False
                continue
            kwargs[key] = value
        if "run_cmd" not in kwargs:
            diags.append(f"toolchains.{lang}.run_cmd: required")
            ok = False
        if ok:
            try:
                profiles[lang] = ToolchainProfile(**kwargs)
            except ValueError as exc:
                diags.append(f"toolchains.{lang}: {exc}")
    return profiles


def load_config(path: str | Path) -> Config:
    path = Path(path)
    diags: list[str] = []
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: invalid TOML: {exc}"])

    toolchains = _build_toolchains(raw.get("toolchains", {}), diags)
    if not toolchains:
        diags.append("toolchains: at least one toolchain profile is required")

    languages = raw.get("languages", {})
    source_lang = languages.get("source", "")
    target_langs = list(languages.get("targets", []))
    if not source_lang:
        diags.append("languages.source: required")
    elif source_lang not in toolchains:
        diags.append(f"languages.source: no toolchain profile for {source_lang!r}")
    else:
        profile = toolchains[source_lang]
        if not profile.coverage_compile_cmd or not profile.coverage_report_cmd:
            diags.append(
                f"toolchains.{source_lang}: source language needs coverage_compile_cmd "
                "and coverage_report_cmd"
            )
    if not target_langs:
        diags.append("languages.targets: at least one target language is required")
    for lang in target_langs:
        if lang not in toolchains:
            diags.append(f"languages.targets: no toolchain profile for {lang!r}")
        if lang == source_lang:
            diags.append("languages.targets: target language equals source language")

    llm_raw = raw.get("llm", {})
    llm = LLMSettings(
        endpoint=llm_raw.get("endpoint", ""),
        model=llm_raw.get("model", ""),
        api_key_env=llm_raw.get("api_key_env", "XLREPAIR_API_KEY"),
        temperature=float(llm_raw.get("temperature", 1.0)),
        max_tokens=int(llm_raw.get("max_tokens", 4096)),
        retries=int(llm_raw.get("retries", 3)),
        parse_retries=int(llm_raw.get("parse_retries", 2)),
        requests_per_minute=int(llm_raw.get("requests_per_minute", 600)),
        max_inflight=int(llm_raw.get("max_inflight", 4)),
        stages={k: dict(v) for k, v in llm_raw.get("stages", {}).items()},
    )

    pipe_raw = raw.get("pipeline", {})
    pipeline = PipelineSettings(
        tau=float(pipe_raw.get("tau", 0.90)),
        translation_attempts=int(pipe_raw.get("translation_attempts", 5)),
        injection_candidates=int(pipe_raw.get("injection_candidates", 5)),
        testgen_inputs_per_round=int(pipe_raw.get("testgen_inputs_per_round", 10)),
        testgen_rounds=int(pipe_raw.get("testgen_rounds", 3)),
        injection_input_budget=int(pipe_raw.get("injection_input_budget", 10)),
        context_radius=int(pipe_raw.get("context_radius", 3)),
        workers=int(pipe_raw.get("workers", 1)),
    )
    if not 0.0 < pipeline.tau <= 1.0:
        diags.append("pipeline.tau: must be in (0, 1]")
    if pipeline.translation_attempts < 1:
        diags.append("pipeline.translation_attempts: must be >= 1")
    if pipeline.injection_candidates < 1:
        diags.append("pipeline.injection_candidates: must be >= 1")
    if pipeline.workers < 1:
        diags.append("pipeline.workers: must be >= 1")

    paths_raw = raw.get("paths", {})
    paths = PathSettings(
        output_dir=paths_raw.get("output_dir", "out"),
        template_dir=paths_raw.get("template_dir", ""),
    )

    if diags:
        raise ConfigError(diags)
    return Config(
        toolchains=toolchains,
        source_lang=source_lang,
        target_langs=target_langs,
        llm=llm,
        pipeline=pipeline,
        paths=paths,
    )
