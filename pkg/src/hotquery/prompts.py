"""Prompt templates with ``{{name}}`` placeholders.

Templates ship as text files in ``hotquery/prompts/``; a directory passed to
:class:`PromptLibrary` overrides them file by file. Each task template starts
with a ``### task: <name>`` line so that deterministic backends can route a
prompt without a side channel.
"""

from __future__ import annotations

import json
import re
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .errors import ParseError

_PLACEHOLDER_RE = re.compile(r"\{\{\s*(\w+)\s*\}\}")
_TASK_RE = re.compile(r"^###\s*task:\s*(\w+)\s*$", re.MULTILINE)
_JSON_BLOCK_RE = re.compile(r"```json\n(.*?)\n```", re.DOTALL)

TEMPLATE_NAMES = ("extract_event", "merge_events", "index_generation", "post_filter", "rerank")


def render(template: str, **values: str) -> str:
    def sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in values:
            raise KeyError(f"no value for placeholder {{{{{name}}}}}")
        return values[name]

    return _PLACEHOLDER_RE.sub(sub, template)


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(template))


class PromptLibrary:
    def __init__(self, directory: str | Path | None = None) -> None:
        self.directory = Path(directory) if directory is not None else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            text = None
            if self.directory is not None:
                path = self.directory / f"{name}.txt"
                if path.exists():
                    text = path.read_text(encoding="utf-8")
            if text is None:
                text = resources.files("hotquery").joinpath("prompts", f"{name}.txt").read_text(
                    encoding="utf-8"
                )
            self._cache[name] = text
        return self._cache[name]

    def render(self, name: str, **values: str) -> str:
        return render(self.get(name), **values)


DEFAULT_PROMPTS = PromptLibrary()


def format_time(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_event_info(title: str, event_time: int, locations: Iterable[str], fact: str) -> str:
    return "\n".join(
        [
            f"Title: {title}",
            f"Time: {format_time(event_time)}",
            f"Locations: {'; '.join(locations)}",
            f"Fact: {fact}",
        ]
    )


def json_block(payload: Any) -> str:
    return "```json\n" + json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n```"


def task_of(prompt: str) -> str | None:
    m = _TASK_RE.search(prompt)
    return m.group(1) if m else None


def extract_json_block(prompt: str) -> Any:
    m = _JSON_BLOCK_RE.search(prompt)
    if m is None:
        raise ParseError("prompt carries no ```json block")
    return json.loads(m.group(1))


def labeled_value(text: str, label: str) -> str | None:
    """Value of the first ``Label: value`` line, or None."""
    m = re.search(rf"^{re.escape(label)}:[ \t]*(.*)$", text, re.MULTILINE)
    return m.group(1).strip() if m else None


def parse_json_object(raw: str) -> dict[str, Any]:
    """Parse an LLM reply that should be one JSON object, tolerating code fences."""
    text = raw.strip()
    if text.startswith("```"):
        text = re.sub(r"^```\w*\n?", "", text)
        text = re.sub(r"\n?```$", "", text)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise ParseError("reply holds no JSON object")
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise ParseError(f"reply is not valid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ParseError("reply JSON is not an object")
    return obj
