"""Pipeline-level orchestration: when and how modules are called, and how
their outputs merge into one user-facing response.

Two compositions are provided. Expansion runs the recommender first and asks
the generator to expand the recommended titles into a fluent reply.
Fill-blank runs the generator first; its placeholder tokens are then filled
with the recommender's ranking, in order. Modules are only ever invoked
through their text-level ``response``/``stream`` entry points.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Iterator

from .artifacts import ArtifactError, LoadContext, load_ref
from .core import BaseModule, ModuleConfig, ModuleOutput, RecList, register_module
from .generation import CancelledError
from .linking import LinkerConfig, link_entities
from .monitor import TraceCollector, active_trace_id, default_collector, record_span
from .protocol import (
    Dialog,
    RESERVED_TOKENS,
    Role,
    parse_dialog,
    render_body,
)
from .tokenization import EntityCatalog

ROUTING_KEYS = ("rec", "gen", "proc")


class PipelineError(Exception):
    pass


class InsufficientRecommendationsError(PipelineError):
    pass


class ModuleExecutionError(PipelineError):
    """A module call failed; carries the failing module's role name."""

    def __init__(self, module: str, cause: BaseException):
        super().__init__(f"{module} module failed: {type(cause).__name__}: {cause}")
        self.module = module


@dataclass(frozen=True)
class PipelineConfig:
    kind: str
    top_k: int = 3
    placeholder: str = "<item>"
    auto_link: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("expansion", "fillblank"):
            raise ValueError(f"unknown pipeline kind {self.kind!r}")
        if self.top_k < 0:
            raise ValueError("top_k must be non-negative")
        if not self.placeholder or self.placeholder in RESERVED_TOKENS:
            raise ValueError(f"bad placeholder {self.placeholder!r}")


@dataclass(frozen=True)
class PipelineOutput:
    text: str
    recommendations: RecList
    trace_id: str


class PipelineRun:
    """Iterator over streamed text chunks; ``output`` is set once exhausted."""

    def __init__(self, gen: Iterator[str]):
        self._gen = gen
        self.output: PipelineOutput | None = None

    def __iter__(self) -> Iterator[str]:
        while True:
            try:
                chunk = next(self._gen)
            except StopIteration as stop:
                self.output = stop.value
                return
            yield chunk

    def close(self) -> None:
        self._gen.close()


def _route_kwargs(kwargs: dict[str, Any]) -> dict[str, dict[str, Any]]:
    shared = {k: v for k, v in kwargs.items() if k not in ROUTING_KEYS}
    return {role: {**shared, **dict(kwargs.get(role) or {})} for role in ROUTING_KEYS}


def _sanitize(text: str) -> str:
    for token in RESERVED_TOKENS:
        text = text.replace(token, "")
    return text


def _tag_names(text: str, names: list[str]) -> str:
    """Wrap verbatim occurrences of recommended names in entity tags."""
    unique = [n for i, n in enumerate(names) if n and n not in names[:i]]
    if not unique:
        return text
    catalog = EntityCatalog({name: i for i, name in enumerate(unique)})
    spans = link_entities(text, catalog, LinkerConfig(case_sensitive=True, boundary_mode=True))
    return render_body(text, spans)


class BasePipeline:
    """Shared entry point: parse input, open the trace, dispatch."""

    kind: ClassVar[str] = "pipeline"
    pipeline_kind: ClassVar[str]

    def __init__(
        self,
        config: PipelineConfig,
        rec_module: BaseModule,
        gen_module: BaseModule,
        proc_module: BaseModule | None = None,
        module_refs: dict[str, str] | None = None,
        collector: TraceCollector | None = None,
    ):
        if config.kind != self.pipeline_kind:
            raise ValueError(f"{type(self).__name__} requires kind={self.pipeline_kind!r}")
        self.cfg = config
        self.rec_module = rec_module
        self.gen_module = gen_module
        self.proc_module = proc_module
        self.module_refs = dict(module_refs or {})
        self.collector = collector or default_collector
        self.tokenizer = None

    # -- artifact surface ---------------------------------------------------

    @property
    def catalog(self) -> EntityCatalog:
        return self.rec_module.tokenizer.catalog

    @property
    def config(self) -> ModuleConfig:
        if not self.module_refs:
            raise ArtifactError(
                "pipeline has no module_refs; save each module first and pass "
                "module_refs={'rec': name, 'gen': name, ...}"
            )
        return ModuleConfig(
            module_type=self.module_type,
            params={
                "kind": self.cfg.kind,
                "top_k": self.cfg.top_k,
                "placeholder": self.cfg.placeholder,
                "auto_link": self.cfg.auto_link,
                "modules": self.module_refs,
            },
        )

    def state_tensors(self) -> dict:
        return {}

    def save_extra_assets(self, art_dir: Path) -> list:
        return []

    @classmethod
    def load_artifact(cls, config: ModuleConfig, art_dir: Path, ctx: LoadContext):
        params = config.params
        refs = params.get("modules", {})
        if "rec" not in refs or "gen" not in refs:
            raise ArtifactError("pipeline manifest must reference rec and gen modules")
        cfg = PipelineConfig(
            kind=params["kind"],
            top_k=params.get("top_k", 3),
            placeholder=params.get("placeholder", "<item>"),
            auto_link=params.get("auto_link", True),
        )
        rec = load_ref(refs["rec"], ctx)
        gen = load_ref(refs["gen"], ctx)
        proc = load_ref(refs["proc"], ctx) if "proc" in refs else None
        return cls(cfg, rec, gen, proc, module_refs=refs)

    # -- execution ------------------------------------------------------------

    def response(self, raw: Dialog | str, **kwargs: Any) -> PipelineOutput:
        run = self.response_stream(raw, **kwargs)
        for _ in run:
            pass
        assert run.output is not None
        return run.output

    def response_stream(
        self, raw: Dialog | str, cancel: threading.Event | None = None, **kwargs: Any
    ) -> PipelineRun:
        dialog = parse_dialog(raw) if isinstance(raw, str) else raw
        return PipelineRun(self._traced_stream(dialog, cancel, kwargs))

    def _traced_stream(
        self, dialog: Dialog, cancel: threading.Event | None, kwargs: dict[str, Any]
    ) -> Iterator[str]:
        trace_id = active_trace_id()
        if trace_id is not None:
            return (yield from self._rooted_stream(dialog, trace_id, cancel, kwargs))
        with self.collector.trace() as tid:
            return (yield from self._rooted_stream(dialog, tid, cancel, kwargs))

    def _rooted_stream(
        self,
        dialog: Dialog,
        trace_id: str,
        cancel: threading.Event | None,
        kwargs: dict[str, Any],
    ) -> Iterator[str]:
        with record_span(f"{self.kind}.respond", inputs=(dialog, kwargs)) as rec:
            out = yield from self._run(dialog, trace_id, cancel, kwargs)
            rec["output"] = out
            return out

    def _run(
        self,
        dialog: Dialog,
        trace_id: str,
        cancel: threading.Event | None,
        kwargs: dict[str, Any],
    ) -> Iterator[str]:
        raise NotImplementedError

    # -- shared helpers -------------------------------------------------------

    def _call(self, role: str, fn, *args: Any, **kw: Any):
        try:
            return fn(*args, **kw)
        except PipelineError:
            raise
        except Exception as exc:
            raise ModuleExecutionError(role, exc) from exc

    def _autolink(self, dialog: Dialog, proc_kwargs: dict[str, Any]) -> Dialog:
        last = dialog.last
        if (
            not self.cfg.auto_link
            or self.proc_module is None
            or last.role is not Role.USER
            or last.spans
        ):
            return dialog
        out: ModuleOutput = self._call(
            "proc", self.proc_module.response, dialog, **proc_kwargs
        )
        linked = parse_dialog(out.text).utterances[0]
        return Dialog(dialog.utterances[:-1] + (linked,))

    def _stream_generator(
        self, dialog: Dialog, cancel: threading.Event | None, gen_kwargs: dict[str, Any]
    ) -> Iterator[str]:
        """Yield generator chunks; returns the accumulated text.

        Streaming modules are recorded as a single ``gen.respond`` span
        spanning the whole stream; non-streaming modules record their own
        span inside ``response``.
        """
        gen = self.gen_module
        if not hasattr(gen, "stream"):
            out = self._call("gen", gen.response, dialog, **gen_kwargs)
            yield out.text
            return out.text
        parts: list[str] = []
        with record_span(f"{gen.kind}.respond", inputs=(dialog, gen_kwargs)) as span:
            try:
                for chunk in gen.stream(dialog, cancel=cancel, **gen_kwargs):
                    if chunk.text:
                        parts.append(chunk.text)
                        yield chunk.text
            except (PipelineError, CancelledError, GeneratorExit):
                raise
            except BaseException as exc:
                raise ModuleExecutionError("gen", exc) from exc
            text = "".join(parts)
            span["output"] = text
        return text

    def _names(self, recs: RecList) -> list[str]:
        id_to_name = self.catalog.id_to_entity
        return [id_to_name[item] for item, _ in recs.items]


@register_module
class ExpansionPipeline(BasePipeline):
    """Recommend first, then expand the recommended titles into a reply."""

    module_type: ClassVar[str] = "expansion-pipeline"
    pipeline_kind: ClassVar[str] = "expansion"

    def _run(self, dialog, trace_id, cancel, kwargs):
        routed = _route_kwargs(kwargs)
        d = self._autolink(dialog, routed["proc"])
        rec_kwargs = dict(routed["rec"])
        rec_kwargs.setdefault("top_k", self.cfg.top_k)
        rec_out: ModuleOutput = self._call("rec", self.rec_module.response, d, **rec_kwargs)
        recs = rec_out.recommendations
        names = self._names(recs)
        gen_kwargs = dict(routed["gen"])
        gen_kwargs["items"] = names
        text = yield from self._stream_generator(d, cancel, gen_kwargs)
        tagged = _tag_names(_sanitize(text), names)
        return PipelineOutput(text=tagged, recommendations=recs, trace_id=trace_id)


@register_module
class FillblankPipeline(BasePipeline):
    """Generate a template, then fill its placeholders with ranked items."""

    module_type: ClassVar[str] = "fillblank-pipeline"
    pipeline_kind: ClassVar[str] = "fillblank"

    def _run(self, dialog, trace_id, cancel, kwargs):
        routed = _route_kwargs(kwargs)
        d = self._autolink(dialog, routed["proc"])
        gen_kwargs = dict(routed["gen"])
        template = yield from self._stream_generator(d, cancel, gen_kwargs)
        template = _sanitize(template)
        parts = template.split(self.cfg.placeholder)
        n_slots = len(parts) - 1
        rec_kwargs = dict(routed["rec"])
        rec_kwargs["top_k"] = n_slots
        rec_out: ModuleOutput = self._call("rec", self.rec_module.response, d, **rec_kwargs)
        recs = rec_out.recommendations
        if len(recs) < n_slots:
            raise InsufficientRecommendationsError(
                f"template needs {n_slots} items, recommender produced {len(recs)}"
            )
        names = self._names(recs)
        filled = [parts[0]]
        for i in range(n_slots):
            filled.append(render_body(names[i], (_full_span(names[i]),)))
            filled.append(parts[i + 1])
        return PipelineOutput(text="".join(filled), recommendations=recs, trace_id=trace_id)


def _full_span(name: str):
    from .protocol import EntitySpan

    return EntitySpan(surface=name, start=0, end=len(name))
