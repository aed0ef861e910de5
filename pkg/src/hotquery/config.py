"""Application configuration (YAML) and backend construction.

Relative paths resolve against the directory holding the config file.
Each backend capability is either a kind name (``reference``, ``scripted``,
``live``) or a mapping with a ``kind`` key plus options::

    backends:
      embedding: reference
      generation: {kind: scripted, key: title, fallback: reference}
      rerank: {kind: live, url: http://localhost:9000/rerank, timeout: 10}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backends import (
    Backends,
    Endpoint,
    HashedNgramEmbedder,
    JaccardRelationBackend,
    LiveEmbeddingBackend,
    LiveGenerationBackend,
    LiveRelationBackend,
    LiveRerankBackend,
    LiveRewriteBackend,
    OverlapReranker,
    ReferenceGenerationBackend,
    ScriptedGenerationBackend,
    WindowRewriter,
    make_title_key,
)
from .detection import DetectionConfig
from .errors import ConfigError
from .hot_selection import HotScoreConfig
from .index_generation import GenerationSpec
from .ingestion import DEFAULT_K, SourcePolicy
from .prompts import PromptLibrary

CAPABILITIES = ("embedding", "generation", "relation", "rewrite", "rerank", "filter")


@dataclass(frozen=True)
class Paths:
    store: Path | None = None
    index: Path | None = None
    prompts: Path | None = None
    fixtures: Path | None = None


@dataclass(frozen=True)
class IngestionSettings:
    k: int = DEFAULT_K
    strict: bool = True
    default_model_score: float = 0.5
    default_domain: str = "general"
    workers: int = 1
    policy: SourcePolicy = field(default_factory=SourcePolicy)


@dataclass(frozen=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8080
    reload_interval: float = 600.0


@dataclass(frozen=True)
class AppConfig:
    paths: Paths = field(default_factory=Paths)
    hot: HotScoreConfig = field(default_factory=HotScoreConfig)
    generation: GenerationSpec = field(default_factory=GenerationSpec)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    ingestion: IngestionSettings = field(default_factory=IngestionSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)
    backends: Mapping[str, Any] = field(default_factory=dict)
    embedding_dim: int = 256

    def require(self, *names: str) -> None:
        """Fail unless each named path is configured and exists."""
        for name in names:
            path = getattr(self.paths, name)
            if path is None:
                raise ConfigError(f"paths.{name} is not configured")
            if not path.exists():
                raise ConfigError(f"paths.{name}: file not found: {path}")

    @property
    def prompts(self) -> PromptLibrary:
        return PromptLibrary(self.paths.prompts)


def _section(data: Mapping[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name} must be a mapping")
    return dict(value)


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data, base_dir=path.parent)


def config_from_mapping(data: Mapping[str, Any], *, base_dir: str | Path = ".") -> AppConfig:
    base = Path(base_dir)
    unknown = set(data) - {"paths", "hot", "generation", "detection", "ingestion", "service", "backends"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    raw_paths = _section(data, "paths")
    bad = set(raw_paths) - set(Paths.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown paths: {sorted(bad)}")
    paths = Paths(**{k: (base / v if v is not None else None) for k, v in raw_paths.items()})
    for name in ("prompts", "fixtures"):
        p = getattr(paths, name)
        if p is not None and not p.exists():
            raise ConfigError(f"paths.{name}: file not found: {p}")

    backends = _section(data, "backends")
    dim = int(backends.pop("embedding_dim", 256))
    for cap in backends:
        if cap not in CAPABILITIES:
            raise ConfigError(f"unknown backend capability {cap!r}")

    ing = _section(data, "ingestion")
    try:
        policy = SourcePolicy(
            frozenset(ing.pop("allowed_sources", []) or []),
            frozenset(ing.pop("blocked_sources", []) or []),
        )
        ingestion = IngestionSettings(policy=policy, **ing)
        return AppConfig(
            paths=paths,
            hot=HotScoreConfig.from_mapping(_section(data, "hot")),
            generation=GenerationSpec.from_mapping(_section(data, "generation")),
            detection=DetectionConfig.from_mapping(_section(data, "detection")),
            ingestion=ingestion,
            service=ServiceSettings(**_section(data, "service")),
            backends=backends,
            embedding_dim=dim,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _spec(config: AppConfig, capability: str) -> tuple[str, dict[str, Any]]:
    raw = config.backends.get(capability, "reference")
    if isinstance(raw, str):
        return raw, {}
    if isinstance(raw, Mapping) and "kind" in raw:
        opts = dict(raw)
        return str(opts.pop("kind")), opts
    raise ConfigError(f"backends.{capability} must be a kind name or a mapping with 'kind'")


def _generation_backend(config: AppConfig, kind: str, opts: dict[str, Any], capability: str):
    if kind == "reference":
        return ReferenceGenerationBackend()
    if kind == "live":
        return LiveGenerationBackend(Endpoint.from_mapping(opts))
    if kind == "scripted":
        fixtures = Path(opts["fixtures"]) if "fixtures" in opts else config.paths.fixtures
        if fixtures is None:
            raise ConfigError(f"backends.{capability}: scripted backend needs paths.fixtures")
        key = opts.get("key", "title")
        key_fn = make_title_key() if key == "title" else None
        fallback = opts.get("fallback")
        fb = _generation_backend(config, fallback, {}, capability) if fallback else None
        return ScriptedGenerationBackend.from_fixture_file(
            fixtures, key_fn=key_fn, fallback=fb, default=opts.get("default")
        )
    raise ConfigError(f"backends.{capability}: unknown kind {kind!r}")


def build_backends(config: AppConfig) -> Backends:
    def live(capability: str, opts: dict[str, Any]) -> Endpoint:
        try:
            return Endpoint.from_mapping(opts)
        except KeyError as exc:
            raise ConfigError(f"backends.{capability}: live backend needs {exc.args[0]!r}") from None

    kind, opts = _spec(config, "embedding")
    if kind == "reference":
        embedder = HashedNgramEmbedder(dim=config.embedding_dim)
    elif kind == "live":
        embedder = LiveEmbeddingBackend(live("embedding", opts))
    else:
        raise ConfigError(f"backends.embedding: unknown kind {kind!r}")

    kind, opts = _spec(config, "generation")
    generator = _generation_backend(config, kind, opts, "generation")

    filter_backend = None
    if "filter" in config.backends:
        kind, opts = _spec(config, "filter")
        filter_backend = _generation_backend(config, kind, opts, "filter")

    kind, opts = _spec(config, "relation")
    if kind == "reference":
        relation = JaccardRelationBackend(float(opts.get("threshold", 0.5)))
    elif kind == "live":
        relation = LiveRelationBackend(live("relation", opts))
    else:
        raise ConfigError(f"backends.relation: unknown kind {kind!r}")

    kind, opts = _spec(config, "rewrite")
    if kind == "reference":
        rewriter = WindowRewriter()
    elif kind == "live":
        rewriter = LiveRewriteBackend(live("rewrite", opts))
    else:
        raise ConfigError(f"backends.rewrite: unknown kind {kind!r}")

    kind, opts = _spec(config, "rerank")
    if kind == "reference":
        reranker = OverlapReranker()
    elif kind == "live":
        reranker = LiveRerankBackend(live("rerank", opts), config.prompts)
    else:
        raise ConfigError(f"backends.rerank: unknown kind {kind!r}")

    return Backends(embedder, generator, relation, rewriter, reranker, filter=filter_backend)
