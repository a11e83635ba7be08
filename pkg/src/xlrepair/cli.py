"""Command-line entry points.

Exit codes: 0 success, 1 not-found/other, 2 config error, 3 replay-cache
miss, 4 environment error, 5 run completed with per-pair failures that a
rerun may recover.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import curriculum as curriculum_mod
from . import metrics as metrics_mod
from .config import Config, load_config
from .corpus import Journal, Stage, resume
from .errors import ConfigError, ReplayMissError, SandboxEnvironmentError
from .llm import LLMClient, ReplayCache, make_http_transport
from .pipeline import Pipeline, corpus_from_state, replay_clock
from .sandbox import Sandbox

EXIT_OK = 0
EXIT_NOT_FOUND = 1
EXIT_CONFIG = 2
EXIT_REPLAY_MISS = 3
EXIT_ENVIRONMENT = 4
EXIT_PARTIAL = 5

logger = logging.getLogger(__name__)


def _load_config_or_exit(path: str) -> Config:
    try:
        return load_config(path)
    except ConfigError as exc:
        click.echo("config error:", err=True)
        for diag in exc.diagnostics:
            click.echo(f"  {diag}", err=True)
        sys.exit(EXIT_CONFIG)


def _make_client(cfg: Config, mode: str, cache_path: str) -> LLMClient:
    cache = ReplayCache(cache_path)
    transport = None
    if mode == "record":
        if not cfg.llm.endpoint or not cfg.llm.model:
            click.echo("config error:", err=True)
            click.echo("  llm.endpoint and llm.model are required in record mode", err=True)
            sys.exit(EXIT_CONFIG)
        transport = make_http_transport(cfg.llm.endpoint, cfg.llm.model, cfg.llm.api_key_env)
    return LLMClient(
        mode=mode,
        cache=cache,
        transport=transport,
        template_dir=cfg.template_dir(),
        retries=cfg.llm.retries,
        requests_per_minute=cfg.llm.requests_per_minute,
        max_inflight=cfg.llm.max_inflight,
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Synthesize and evaluate cross-lingual buggy-fixed program pairs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--journal", "journal_path", required=True, type=click.Path())
@click.option("--input", "seeds_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["record", "replay"]), default="replay")
@click.option("--cache", "cache_path", required=True, type=click.Path())
@click.option("--target-lang", "target_lang", default="", help="Defaults to the first configured target.")
@click.option("--workers", type=int, default=0, help="Override pipeline.workers.")
def run(
    config_path: str,
    journal_path: str,
    seeds_path: str,
    mode: str,
    cache_path: str,
    target_lang: str,
    workers: int,
) -> None:
    """Run the synthesis pipeline over a JSONL file of buggy-fixed pairs."""
    cfg = _load_config_or_exit(config_path)
    if workers > 0:
        cfg.pipeline.workers = workers
    target = target_lang or cfg.target_langs[0]
    if target not in cfg.toolchains:
        click.echo("config error:", err=True)
        click.echo(f"  no toolchain profile for target language {target!r}", err=True)
        sys.exit(EXIT_CONFIG)
    client = _make_client(cfg, mode, cache_path)
    clock = replay_clock() if mode == "replay" else time.time
    journal = Journal(journal_path, clock=clock)
    sandbox = Sandbox(cfg.toolchains)
    try:
        pipeline = Pipeline(cfg, journal, client, sandbox, target)
        summary = pipeline.run(seeds_path)
    except ReplayMissError as exc:
        click.echo(f"replay miss: {exc}", err=True)
        sys.exit(EXIT_REPLAY_MISS)
    except SandboxEnvironmentError as exc:
        click.echo(f"environment error: {exc}", err=True)
        sys.exit(EXIT_ENVIRONMENT)
    finally:
        sandbox.close()
    if summary.processed == 0:
        click.echo("nothing to do (all pairs already in terminal states)")
    for line in summary.funnel_lines():
        click.echo(line)
    for diag in summary.diagnostics:
        click.echo(f"ingest diagnostic: {diag}", err=True)
    if summary.environment_errors:
        for err in summary.environment_errors:
            click.echo(f"pair error: {err}", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("emit-curriculum")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--journal", "journal_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
def emit_curriculum(config_path: str, journal_path: str, out_dir: str) -> None:
    """Emit the three stage-wise training dataset files plus manifest."""
    cfg = _load_config_or_exit(config_path)
    state = resume(journal_path)
    corpus = corpus_from_state(state)
    try:
        manifest = curriculum_mod.emit_all(corpus, out_dir, cfg.template_dir())
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NOT_FOUND)
    for stage, entry in sorted(manifest["stages"].items()):
        click.echo(f"stage {stage}: {entry['records']} records -> {entry['file']}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--patches", "patches_path", required=True, type=click.Path(exists=True))
@click.option("--target-lang", "target_lang", default="")
@click.option("--source-lang", "source_lang", default="")
@click.option("--linter-cmd", "linter_cmd", default="", help="Command template with a {file} placeholder.")
@click.option("--report", "report_path", default="", type=click.Path())
def evaluate(
    config_path: str,
    patches_path: str,
    target_lang: str,
    source_lang: str,
    linter_cmd: str,
    report_path: str,
) -> None:
    """Score a patch file: Pass@k, compilation rates, optional SVD."""
    cfg = _load_config_or_exit(config_path)
    target = target_lang or cfg.target_langs[0]
    source = source_lang or cfg.source_lang
    sandbox = Sandbox(cfg.toolchains)
    try:
        report = metrics_mod.evaluate_patch_file(
            patches_path,
            sandbox,
            target,
            source,
            linter_cmd=linter_cmd or None,
        )
    except SandboxEnvironmentError as exc:
        click.echo(f"environment error: {exc}", err=True)
        sys.exit(EXIT_ENVIRONMENT)
    finally:
        sandbox.close()
    click.echo(metrics_mod.render_table(report, target))
    if report_path:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


@main.command()
@click.option("--journal", "journal_path", required=True, type=click.Path(exists=True))
@click.argument("pair_id")
def inspect(journal_path: str, pair_id: str) -> None:
    """Print a pair's full lineage through the pipeline."""
    state = resume(journal_path)
    if pair_id not in state:
        click.echo(f"pair {pair_id} not found in journal", err=True)
        sys.exit(EXIT_NOT_FOUND)
    pair_state = state[pair_id]
    click.echo(f"pair {pair_id}: stage {pair_state.stage.value}")
    history = pair_state.history
    if "descriptor_built" in history:
        desc = history["descriptor_built"]
        click.echo(f"  defect_type: {desc['defect_type']}")
        click.echo(f"  root_cause:  {desc['root_cause']}")
        click.echo(f"  hunks:       {len(desc['diff']['hunks'])}")
    if "transferable" in history:
        click.echo(f"  transferable: yes ({history['transferable']['rationale']})")
    if "tests_generated" in history:
        suite = history["tests_generated"]
        click.echo(
            f"  suite: {len(suite['cases'])} cases, "
            f"line {suite['coverage']['line_pct']:.1f}% / "
            f"branch {suite['coverage']['branch_pct']:.1f}% (tau={suite['tau']})"
        )
    if "translated" in history:
        click.echo(f"  translated: attempt j*={history['translated']['attempt_index']}")
    if "injected" in history:
        injected = history["injected"]
        scores = ", ".join(
            f"#{s['candidate_index']}:({s['n_defect']},{s['n_reg']})"
            for s in injected["scores"]
        )
        click.echo(f"  candidate scores: {scores}")
        click.echo(f"  selected candidate: #{injected['candidate_index']}")
    if pair_state.stage in (Stage.FILTERED_OUT, Stage.TRANSLATION_FAILED, Stage.INJECTION_FAILED):
        reason = pair_state.payload.get("reason", pair_state.payload.get("rationale", ""))
        click.echo(f"  terminal reason: {reason}")
    if pair_state.stage == Stage.QUAD_VERIFIED:
        click.echo("  quad verified")


if __name__ == "__main__":
    main()
