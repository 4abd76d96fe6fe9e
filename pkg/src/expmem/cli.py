"""Command-line entry point: ``expmem {build,eval,ablate,inspect,split}``.

Exit codes: 0 success, 1 fatal configuration or I/O error, 2 run completed
but some cases failed (details in the logs).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .agent.mock import MockAgent, MockAgentScript
from .agent.prompts import render_note
from .agent.remote import HttpAgent
from .construction import ConfigError, build
from .core import (
    DuplicateId,
    ExpMemError,
    ParseError,
    Taxonomy,
    canonical_json,
    checksum,
    default_taxonomy,
    load_taxonomy,
    normalize,
    read_corpus,
    write_corpus,
)
from .embeddings import HttpEmbeddingProvider, MemoEmbedder, MockEmbeddingProvider
from .evaluation import (
    GridError,
    compute_metrics,
    load_grid,
    render_report,
    run_ablation,
    run_eval,
)
from .config import RunConfig
from .store import MemoryStore

logger = logging.getLogger("expmem")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class Fatal(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON run configuration")
    p.add_argument("--corpus")
    p.add_argument("--testset")
    p.add_argument("--store")
    p.add_argument("--taxonomy")
    p.add_argument("--logs", help="output directory for logs and reports")
    p.add_argument("--prompts", help="directory of prompt template overrides")
    p.add_argument("--tau", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--max-paths", type=int)
    p.add_argument("--single-department", action="store_const", const=False, dest="cross_department")
    p.add_argument("--rounds", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--candidates", choices=("agent", "dataset"))
    p.add_argument("--snapshot", choices=("streaming", "frozen"))
    p.add_argument("--grading", choices=("exact", "judge"))
    p.add_argument("--workers", type=int, dest="concurrency")
    p.add_argument("--mock-agent", metavar="SCRIPT", help="use the scripted mock agent")
    p.add_argument("--mock-embedder", action="store_const", const=True, help="use the seeded mock embedder")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expmem", description="Pairwise differential experience memory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="construct experience memory from a corpus")
    _common(p)

    p = sub.add_parser("eval", help="paired baseline / with-memory evaluation")
    _common(p)
    p.add_argument("--baseline-only", action="store_true")

    p = sub.add_parser("ablate", help="run an ablation grid")
    _common(p)
    p.add_argument("--grid", help="grid file (default: shipped grid)")

    p = sub.add_parser("inspect", help="print stored notes")
    _common(p)
    p.add_argument("--department")
    p.add_argument("--organ")
    p.add_argument("--label")

    p = sub.add_parser("split", help="temporal split of a corpus by published year")
    _common(p)
    p.add_argument("--boundary", type=int, default=2025, help="first year of the test split")
    p.add_argument("--out-dir", help="output directory (default: --logs)")
    return parser


OVERRIDES = (
    "corpus", "testset", "store", "taxonomy", "logs", "prompts", "tau", "top_k", "max_paths",
    "cross_department", "rounds", "trials", "candidates", "snapshot", "grading", "concurrency",
    "mock_agent", "mock_embedder",
)


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig(base_dir=str(Path.cwd()))
    return config.override(**{name: getattr(args, name, None) for name in OVERRIDES})


def _require(config: RunConfig, name: str, label: str) -> Path:
    path = config.path(name)
    if path is None or not path.exists():
        raise Fatal(f"{label} not found: {path}")
    return path


def _taxonomy(config: RunConfig) -> Taxonomy:
    if config.taxonomy is None:
        return default_taxonomy()
    return load_taxonomy(_require(config, "taxonomy", "taxonomy"))


def _agent(config: RunConfig, taxonomy: Taxonomy):
    if config.mock_agent is not None:
        script = MockAgentScript.load(_require(config, "mock_agent", "mock agent script"))
        return MockAgent(script, taxonomy)
    if config.agent_url is None:
        raise Fatal("no agent configured: set agent_url or pass --mock-agent")
    return HttpAgent(
        config.agent_url,
        identity=config.agent_model,
        token=config.agent_token,
        timeout=config.agent_timeout,
        retries=config.agent_retries,
        max_tokens=config.agent_max_tokens,
        temperature=config.agent_temperature,
        concurrency=config.concurrency,
        prompt_dir=str(config.path("prompts")) if config.prompts else None,
    )


def _provider(config: RunConfig):
    if config.mock_embedder:
        return MemoEmbedder(MockEmbeddingProvider(config.mock_dimension, config.mock_seed))
    if config.embedding_url is None:
        raise Fatal("no embedding provider configured: set embedding_url or pass --mock-embedder")
    return MemoEmbedder(
        HttpEmbeddingProvider(
            config.embedding_url,
            config.embedding_dimension,
            token=config.embedding_token,
            timeout=config.embedding_timeout,
            retries=config.embedding_retries,
        )
    )


def _logs_dir(config: RunConfig) -> Path:
    out = config.path("logs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    body = dict(doc)
    body["content_checksum"] = checksum(doc)
    path.write_text(canonical_json(body, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- commands


def cmd_build(config: RunConfig) -> int:
    corpus = read_corpus(_require(config, "corpus", "corpus"))
    taxonomy = _taxonomy(config)
    agent = _agent(config, taxonomy)
    provider = _provider(config) if config.rounds == 2 else None
    store_path = config.path("store")
    store_path.parent.mkdir(parents=True, exist_ok=True)
    log_path = _logs_dir(config) / "construction_log.jsonl"
    store, log = build(
        corpus, agent, provider, config.construction(),
        taxonomy=taxonomy, store_path=store_path, log_path=log_path,
        meta={"config": config.echo(), "agent": agent.identity},
    )
    print(f"built {len(store)} notes from {len(corpus)} cases -> {store_path}")
    print("actions: " + ", ".join(f"{k}={v}" for k, v in log.summary().items()))
    partial = any(e.error or e.action == "extraction-failed" for e in log)
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_eval(config: RunConfig, baseline_only: bool = False) -> int:
    testset = read_corpus(_require(config, "testset", "testset"))
    taxonomy = _taxonomy(config)
    agent = _agent(config, taxonomy)
    out = _logs_dir(config)
    meta = {"run_config": config.echo()}
    eval_config = config.evaluation()
    store = provider = None
    if not baseline_only:
        store = MemoryStore.load(_require(config, "store", "store"), taxonomy)
        provider = _provider(config)
    baseline = run_eval(
        testset, agent, None, None, eval_config, "baseline", config.trials,
        log_path=out / "baseline_runlog.jsonl", metadata=meta,
    )
    failures = sum(log.failures for log in baseline)
    if baseline_only:
        print(f"baseline accuracy over {len(testset)} cases written to {out / 'baseline_runlog.jsonl'}")
        return EXIT_PARTIAL if failures else EXIT_OK
    exp = run_eval(
        testset, agent, store, provider, eval_config, "with-memory", config.trials,
        log_path=out / "exp_runlog.jsonl", metadata=meta,
    )
    failures += sum(log.failures for log in exp)
    report = compute_metrics(baseline, exp)
    table = render_report(report, agent.identity)
    _write_json(out / "metrics.json", {"config": config.echo(), "agent": agent.identity, "metrics": report.to_dict()})
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_ablate(config: RunConfig, grid_path: str | None) -> int:
    grid = load_grid(grid_path)
    corpus = read_corpus(_require(config, "corpus", "corpus"))
    testset = read_corpus(_require(config, "testset", "testset"))
    taxonomy = _taxonomy(config)
    agent = _agent(config, taxonomy)
    provider = _provider(config)
    table = run_ablation(
        testset, corpus, agent, provider, grid, config.evaluation(), config.trials,
        construction=config.construction(), taxonomy=taxonomy,
    )
    out = _logs_dir(config)
    _write_json(out / "ablation.json", {"config": config.echo(), "agent": agent.identity, **table.to_dict()})
    text = table.render()
    (out / "ablation.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_inspect(config: RunConfig, department: str | None, organ: str | None, label: str | None) -> int:
    taxonomy = _taxonomy(config)
    store = MemoryStore.load(_require(config, "store", "store"), taxonomy)
    notes = store.notes()
    if department:
        notes = [n for n in notes if normalize(n.department) == normalize(department)]
    if organ:
        notes = [n for n in notes if normalize(n.organ_region) == normalize(organ)]
    if label:
        notes = [n for n in notes if label in n.differentials]
    for note in notes:
        print(render_note(note))
        print()
    print(f"{len(notes)} notes")
    return EXIT_OK


def cmd_split(config: RunConfig, boundary: int, out_dir: str | None) -> int:
    corpus = read_corpus(_require(config, "corpus", "corpus"))
    undated = [c.id for c in corpus if c.published_year is None]
    if undated:
        raise Fatal(f"case {undated[0]!r} has no published_year")
    early = [c for c in corpus if c.published_year < boundary]
    late = [c for c in corpus if c.published_year >= boundary]
    out = Path(out_dir).resolve() if out_dir else _logs_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "construction.jsonl", early)
    write_corpus(out / "test.jsonl", late)
    if not late:
        print(f"warning: no cases published in or after {boundary}; test split is empty", file=sys.stderr)
    print(f"construction: {len(early)} cases, test: {len(late)} cases -> {out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args)
        if args.command == "build":
            return cmd_build(config)
        if args.command == "eval":
            return cmd_eval(config, args.baseline_only)
        if args.command == "ablate":
            return cmd_ablate(config, args.grid)
        if args.command == "inspect":
            return cmd_inspect(config, args.department, args.organ, args.label)
        if args.command == "split":
            return cmd_split(config, args.boundary, args.out_dir)
    except (Fatal, ConfigError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (ParseError, DuplicateId, ExpMemError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except KeyboardInterrupt:
        print("interrupted; partial logs are valid and resumable", file=sys.stderr)
        return EXIT_FATAL
    parser.error(f"unknown command {args.command}")
    return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
