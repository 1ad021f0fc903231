"""Generator modules: a chat-completion HTTP client with prompt templates,
plus a deterministic offline template generator so every pipeline can run
hermetically.

The remote client speaks the common chat-completion convention: POST
``{base_url}/chat/completions`` with a messages array, responses streamed as
server-sent events (``data: {json}`` lines, terminated by ``data: [DONE]``).
API keys come from an environment variable only, never from saved config.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Iterator

import httpx

from .artifacts import LoadContext
from .core import BaseModule, ModuleConfig, ModuleOutput, register_module
from .monitor import monitored
from .protocol import Dialog, render_dialog
from .tokenization import CompositeTokenizer

CONTEXT_SLOT = "{context}"
ITEMS_SLOT = "{items}"

DEFAULT_EXPANSION_TEMPLATE = (
    "You are a movie recommendation assistant. Conversation so far:\n"
    + CONTEXT_SLOT
    + "\nRecommend and discuss these movies, mentioning each title exactly as written: "
    + ITEMS_SLOT
)
DEFAULT_FILLBLANK_TEMPLATE = (
    "You are a movie recommendation assistant. Conversation so far:\n"
    + CONTEXT_SLOT
    + "\nReply to the user, writing <item> wherever a concrete movie title should go."
)


class GenerationError(Exception):
    pass


class MissingApiKeyError(GenerationError):
    pass


class TransportError(GenerationError):
    pass


class RemoteError(GenerationError):
    def __init__(self, status_code: int, body: str):
        super().__init__(f"HTTP {status_code}: {body[:500]}")
        self.status_code = status_code
        self.body = body


class CancelledError(GenerationError):
    pass


_SLOT_RE = re.compile(r"\{[^{}]*\}")


@dataclass(frozen=True)
class PromptTemplate:
    """Template with optional ``{context}`` and ``{items}`` slots, once each."""

    template: str

    def __post_init__(self) -> None:
        for slot in _SLOT_RE.findall(self.template):
            if slot not in (CONTEXT_SLOT, ITEMS_SLOT):
                raise ValueError(f"unknown template slot {slot}")
        for slot in (CONTEXT_SLOT, ITEMS_SLOT):
            if self.template.count(slot) > 1:
                raise ValueError(f"slot {slot} may appear at most once")


_SPLIT_RE = re.compile(r"(\{context\}|\{items\})")


def render_prompt(t: PromptTemplate, d: Dialog, items: list[str]) -> str:
    """Substitute the context (wire-rendered dialog) and item names.

    Single pass over the template: slot-shaped strings inside the dialog
    text or item names are never reinterpreted.
    """
    context = render_dialog(d)
    joined = "; ".join(items)
    parts = _SPLIT_RE.split(t.template)
    return "".join(
        context if p == CONTEXT_SLOT else joined if p == ITEMS_SLOT else p for p in parts
    )


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model: str = "gpt-4o-mini"
    api_key_env: str = "CONVREC_API_KEY"
    timeout_ms: int = 30_000
    max_retries: int = 2
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass(frozen=True)
class GenChunk:
    text: str
    is_final: bool = False


def _parse_sse_data(line: str) -> str | None:
    if line.startswith("data:"):
        return line[len("data:") :].strip()
    return None


def generate(
    cfg: LlmEndpointConfig,
    prompt: str,
    model: str | None = None,
    temperature: float | None = None,
    cancel: threading.Event | None = None,
    backoff_base_ms: int = 500,
) -> Iterator[GenChunk]:
    """Stream completion chunks for ``prompt`` from the configured endpoint.

    Transport failures and 5xx responses before the first chunk are retried
    up to ``cfg.max_retries`` times with exponential backoff. Mid-stream
    failures are not retried (chunks were already delivered). Setting
    ``cancel`` stops the stream at the next chunk boundary.

    Raises :class:`MissingApiKeyError` immediately, before any socket opens,
    when the configured environment variable is unset.
    """
    api_key = os.environ.get(cfg.api_key_env)
    if not api_key:
        raise MissingApiKeyError(f"environment variable {cfg.api_key_env} is not set")
    body = {
        "model": model or cfg.model,
        "temperature": cfg.temperature if temperature is None else temperature,
        "stream": True,
        "messages": [{"role": "user", "content": prompt}],
    }
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {api_key}"}
    return _stream_with_retries(
        url, body, headers, cfg.timeout_ms / 1000.0, cfg.max_retries, cancel, backoff_base_ms
    )


def _stream_with_retries(
    url: str,
    body: dict[str, Any],
    headers: dict[str, str],
    timeout: float,
    max_retries: int,
    cancel: threading.Event | None,
    backoff_base_ms: int,
) -> Iterator[GenChunk]:
    attempt = 0
    while True:
        streaming_started = False
        try:
            with httpx.Client(timeout=timeout) as client:
                with client.stream("POST", url, json=body, headers=headers) as resp:
                    if resp.status_code != 200:
                        resp.read()
                        if resp.status_code >= 500 and attempt < max_retries:
                            attempt += 1
                            time.sleep(backoff_base_ms / 1000.0 * (2 ** (attempt - 1)))
                            continue
                        raise RemoteError(resp.status_code, resp.text)
                    streaming_started = True
                    yield from _consume_stream(resp, cancel)
                    return
        except httpx.HTTPError as exc:
            if not streaming_started and attempt < max_retries:
                attempt += 1
                time.sleep(backoff_base_ms / 1000.0 * (2 ** (attempt - 1)))
                continue
            raise TransportError(f"POST {url}: {exc}") from exc


def _consume_stream(resp: httpx.Response, cancel: threading.Event | None) -> Iterator[GenChunk]:
    for line in resp.iter_lines():
        if cancel is not None and cancel.is_set():
            raise CancelledError("generation cancelled")
        data = _parse_sse_data(line)
        if data is None:
            continue
        if data == "[DONE]":
            break
        try:
            event = json.loads(data)
        except json.JSONDecodeError as exc:
            raise TransportError(f"malformed stream event: {data[:200]!r}") from exc
        for choice in event.get("choices", []):
            content = (choice.get("delta") or {}).get("content")
            if content:
                yield GenChunk(text=content)
    yield GenChunk(text="", is_final=True)


def template_generate(items: list[str], style: str, slots: int | None = None) -> str:
    """Deterministic offline generation.

    ``expansion`` expands the item names into one sentence; ``fillblank``
    emits ``<item>`` placeholders (``slots`` of them, default one per item,
    at least one) for a recommender to fill.
    """
    if style == "expansion":
        if not items:
            return "Tell me more about what you like."
        return "You might enjoy " + ", ".join(items) + "."
    if style == "fillblank":
        n = slots if slots is not None else max(len(items), 1)
        return " ".join(["I recommend <item>."] * n)
    raise ValueError(f"unknown template style {style!r}")


@register_module
class TemplateGenerator(BaseModule):
    """Offline generator producing fixed-template responses."""

    module_type: ClassVar[str] = "template-gen"
    kind: ClassVar[str] = "gen"

    def __init__(self, style: str = "expansion", slots: int = 1):
        if style not in ("expansion", "fillblank"):
            raise ValueError(f"unknown template style {style!r}")
        self.style = style
        self.slots = slots
        self.tokenizer = None

    @property
    def config(self) -> ModuleConfig:
        return ModuleConfig(
            module_type=self.module_type, params={"style": self.style, "slots": self.slots}
        )

    def stream(
        self, dialog: Dialog, tokenizer: CompositeTokenizer | None = None, **kwargs: Any
    ) -> Iterator[GenChunk]:
        items = list(kwargs.get("items", []))
        slots = int(kwargs.get("slots", self.slots))
        text = template_generate(items, self.style, slots=slots)
        yield GenChunk(text=text)
        yield GenChunk(text="", is_final=True)

    @monitored("respond")
    def response(
        self, dialog: Dialog, tokenizer: CompositeTokenizer | None = None, **kwargs: Any
    ) -> ModuleOutput:
        parts = [chunk.text for chunk in self.stream(dialog, tokenizer, **kwargs)]
        return ModuleOutput(text="".join(parts))

    @classmethod
    def load_artifact(
        cls, config: ModuleConfig, art_dir: Path, ctx: LoadContext
    ) -> "TemplateGenerator":
        return cls(
            style=config.params.get("style", "expansion"),
            slots=config.params.get("slots", 1),
        )


@register_module
class ChatCompletionGenerator(BaseModule):
    """Remote prompted generator over a chat-completion endpoint."""

    module_type: ClassVar[str] = "chat-completion-gen"
    kind: ClassVar[str] = "gen"

    def __init__(self, endpoint: LlmEndpointConfig, template: PromptTemplate, style: str = "expansion"):
        self.endpoint = endpoint
        self.template = template
        self.style = style
        self.tokenizer = None

    @property
    def config(self) -> ModuleConfig:
        return ModuleConfig(
            module_type=self.module_type,
            params={
                "base_url": self.endpoint.base_url,
                "model": self.endpoint.model,
                "api_key_env": self.endpoint.api_key_env,
                "timeout_ms": self.endpoint.timeout_ms,
                "max_retries": self.endpoint.max_retries,
                "temperature": self.endpoint.temperature,
                "template": self.template.template,
                "style": self.style,
            },
        )

    def stream(
        self,
        dialog: Dialog,
        tokenizer: CompositeTokenizer | None = None,
        cancel: threading.Event | None = None,
        **kwargs: Any,
    ) -> Iterator[GenChunk]:
        items = list(kwargs.get("items", []))
        prompt = render_prompt(self.template, dialog, items)
        yield from generate(
            self.endpoint,
            prompt,
            model=kwargs.get("model"),
            temperature=kwargs.get("temperature"),
            cancel=cancel,
        )

    @monitored("respond")
    def response(
        self, dialog: Dialog, tokenizer: CompositeTokenizer | None = None, **kwargs: Any
    ) -> ModuleOutput:
        parts = [chunk.text for chunk in self.stream(dialog, tokenizer, **kwargs)]
        return ModuleOutput(text="".join(parts))

    @classmethod
    def load_artifact(
        cls, config: ModuleConfig, art_dir: Path, ctx: LoadContext
    ) -> "ChatCompletionGenerator":
        p = config.params
        endpoint = LlmEndpointConfig(
            base_url=p["base_url"],
            model=p.get("model", "gpt-4o-mini"),
            api_key_env=p.get("api_key_env", "CONVREC_API_KEY"),
            timeout_ms=p.get("timeout_ms", 30_000),
            max_retries=p.get("max_retries", 2),
            temperature=p.get("temperature", 0.7),
        )
        template = PromptTemplate(p.get("template", DEFAULT_EXPANSION_TEMPLATE))
        return cls(endpoint, template, style=p.get("style", "expansion"))
