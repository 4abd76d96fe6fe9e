"""Run configuration: one YAML/JSON document, env-var secrets, flag overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .construction import ConfigError, ConstructionConfig
from .evaluation import EvalConfig
from .retrieval import RetrievalConfig

AGENT_TOKEN_ENV = "EXPMEM_AGENT_TOKEN"
EMBEDDING_TOKEN_ENV = "EXPMEM_EMBEDDING_TOKEN"

PATH_FIELDS = ("corpus", "testset", "store", "taxonomy", "logs", "prompts", "mock_agent")
# Scheduling knobs that never change results; kept out of the config echo.
UNECHOED = ("concurrency",)


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    testset: str | None = None
    store: str = "store.json"
    taxonomy: str | None = None
    logs: str = "logs"
    prompts: str | None = None

    agent_url: str | None = None
    agent_model: str = "remote-agent"
    agent_timeout: float = 120.0
    agent_retries: int = 3
    agent_max_tokens: int = 2048
    agent_temperature: float | None = None
    mock_agent: str | None = None

    embedding_url: str | None = None
    embedding_dimension: int = 768
    embedding_timeout: float = 30.0
    embedding_retries: int = 3
    mock_embedder: bool = False
    mock_dimension: int = 64
    mock_seed: int = 0

    tau: float = 0.9
    top_k: int = 10
    max_paths: int = 2
    cross_department: bool = True
    rounds: int = 2
    trials: int = 1
    candidates: str = "agent"
    snapshot: str = "streaming"
    grading: str = "exact"
    concurrency: int = 1

    base_dir: str = field(default=".", compare=False)

    def __post_init__(self) -> None:
        if self.rounds not in (1, 2):
            raise ConfigError(f"rounds must be 1 or 2, got {self.rounds}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.top_k < 1:
            raise ConfigError("top_k must be positive")
        if self.max_paths not in (1, 2):
            raise ConfigError("max_paths must be 1 or 2")
        if self.candidates not in ("agent", "dataset"):
            raise ConfigError(f"candidates must be 'agent' or 'dataset', got {self.candidates!r}")
        if self.snapshot not in ("streaming", "frozen"):
            raise ConfigError(f"snapshot must be 'streaming' or 'frozen', got {self.snapshot!r}")
        if self.grading not in ("exact", "judge"):
            raise ConfigError(f"grading must be 'exact' or 'judge', got {self.grading!r}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be at least 1")
        if self.mock_dimension < 2 or self.embedding_dimension < 1:
            raise ConfigError("embedding dimensions must be positive (mock: at least 2)")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_mapping(data, base_dir=str(path.parent.resolve()))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: str = ".") -> "RunConfig":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        try:
            return cls(**dict(data), base_dir=base_dir)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def override(self, **values: Any) -> "RunConfig":
        """Apply flag values; ``None`` means "not given". Paths from flags are cwd-relative."""
        given = {k: v for k, v in values.items() if v is not None}
        for name in PATH_FIELDS:
            if name in given:
                given[name] = str(Path(given[name]).resolve())
        return replace(self, **given)

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir, p)

    def echo(self) -> dict[str, Any]:
        data = asdict(self)
        for key in (*UNECHOED, "base_dir"):
            data.pop(key)
        return data

    @property
    def agent_token(self) -> str | None:
        return os.environ.get(AGENT_TOKEN_ENV)

    @property
    def embedding_token(self) -> str | None:
        return os.environ.get(EMBEDDING_TOKEN_ENV)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(self.tau, self.top_k, self.max_paths, self.cross_department)

    def construction(self) -> ConstructionConfig:
        return ConstructionConfig(
            rounds=self.rounds,
            retrieval=self.retrieval(),
            candidates=self.candidates,  # type: ignore[arg-type]
            snapshot=self.snapshot,  # type: ignore[arg-type]
            workers=self.concurrency,
        )

    def evaluation(self) -> EvalConfig:
        return EvalConfig(
            retrieval=self.retrieval(),
            candidates=self.candidates,  # type: ignore[arg-type]
            grading=self.grading,  # type: ignore[arg-type]
            workers=self.concurrency,
        )
