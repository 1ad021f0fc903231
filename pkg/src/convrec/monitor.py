"""Execution tracing: spans per monitored call, timeline and graph assembly.

A pipeline call opens a trace; every monitored operation underneath records
one span with parentage taken from the dynamic call context. Monitoring
never fails the monitored call. Traces live in a bounded in-memory ring and
can be exported as JSON lines.
"""

from __future__ import annotations

import contextlib
import functools
import json
import threading
import time
import uuid
from contextvars import ContextVar
from dataclasses import dataclass, asdict
from typing import Any, Callable, Iterator

DIGEST_LIMIT = 2048


class MalformedTraceError(ValueError):
    pass


@dataclass
class Span:
    span_id: str
    parent_id: str | None
    trace_id: str
    name: str
    start_ns: int
    end_ns: int
    input_digest: str
    output_digest: str

    def to_json_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Trace:
    trace_id: str
    spans: list[Span]


def summarize(value: Any) -> str:
    """Truncated textual rendering of a monitored input or output."""
    if isinstance(value, str):
        text = value
    else:
        try:
            text = repr(value)
        except Exception:
            text = f"<unprintable {type(value).__name__}>"
    if len(text) > DIGEST_LIMIT:
        text = text[: DIGEST_LIMIT - 3] + "..."
    return text


@dataclass
class _ActiveTrace:
    collector: "TraceCollector"
    trace_id: str


_current_trace: ContextVar[_ActiveTrace | None] = ContextVar("convrec_trace", default=None)
_current_span: ContextVar[str | None] = ContextVar("convrec_span", default=None)


class TraceCollector:
    """Accepts concurrent span submissions; keeps the newest ``capacity`` traces."""

    def __init__(self, capacity: int = 256):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._traces: dict[str, list[Span]] = {}

    @contextlib.contextmanager
    def trace(self) -> Iterator[str]:
        """Open a fresh trace context; spans recorded inside attach to it."""
        trace_id = uuid.uuid4().hex[:16]
        with self._lock:
            self._traces[trace_id] = []
            while len(self._traces) > self.capacity:
                oldest = next(iter(self._traces))
                del self._traces[oldest]
        token = _current_trace.set(_ActiveTrace(self, trace_id))
        span_token = _current_span.set(None)
        try:
            yield trace_id
        finally:
            _current_trace.reset(token)
            _current_span.reset(span_token)

    def submit(self, span: Span) -> None:
        with self._lock:
            bucket = self._traces.get(span.trace_id)
            if bucket is not None:
                bucket.append(span)

    def get(self, trace_id: str) -> Trace | None:
        with self._lock:
            spans = self._traces.get(trace_id)
            if spans is None:
                return None
            return Trace(trace_id=trace_id, spans=list(spans))

    def export_jsonl(self) -> str:
        with self._lock:
            spans = [s for bucket in self._traces.values() for s in bucket]
        return "\n".join(json.dumps(s.to_json_dict(), sort_keys=True) for s in spans)


default_collector = TraceCollector()


def active_trace_id() -> str | None:
    active = _current_trace.get()
    return active.trace_id if active else None


@contextlib.contextmanager
def record_span(name: str, inputs: Any = None) -> Iterator[dict[str, Any]]:
    """Record one span around the enclosed block, if a trace is active.

    The yielded dict's ``output`` key is summarized into the span on exit;
    exceptions mark the span and propagate.
    """
    active = _current_trace.get()
    if active is None:
        yield {}
        return
    span_id = uuid.uuid4().hex[:16]
    parent_id = _current_span.get()
    token = _current_span.set(span_id)
    start_ns = time.monotonic_ns()
    result: dict[str, Any] = {}
    try:
        yield result
    except BaseException as exc:
        result["output"] = f"!error: {type(exc).__name__}: {exc}"
        raise
    finally:
        _current_span.reset(token)
        try:
            active.collector.submit(
                Span(
                    span_id=span_id,
                    parent_id=parent_id,
                    trace_id=active.trace_id,
                    name=name,
                    start_ns=start_ns,
                    end_ns=time.monotonic_ns(),
                    input_digest=summarize(inputs),
                    output_digest=summarize(result.get("output")),
                )
            )
        except Exception:
            pass  # monitoring must never fail the monitored call


def monitored(op_name: str | None = None) -> Callable[[Callable], Callable]:
    """Instrument a module method; span names are ``<kind>.<op_name>``.

    ``op_name`` defaults to the method name; the prefix is the instance's
    ``kind`` attribute (rec, gen, proc or pipeline).
    """

    def decorate(fn: Callable) -> Callable:
        suffix = op_name or fn.__name__

        @functools.wraps(fn)
        def wrapper(self, *args: Any, **kwargs: Any):
            name = f"{getattr(self, 'kind', type(self).__name__)}.{suffix}"
            with record_span(name, inputs=(args, kwargs)) as rec:
                out = fn(self, *args, **kwargs)
                rec["output"] = out
                return out

        return wrapper

    return decorate


def _index(t: Trace) -> dict[str, Span]:
    if not t.spans:
        raise MalformedTraceError("trace has no spans")
    by_id = {s.span_id: s for s in t.spans}
    roots = [s for s in t.spans if s.parent_id is None]
    for s in t.spans:
        if s.parent_id is not None and s.parent_id not in by_id:
            raise MalformedTraceError(f"span {s.span_id} has orphan parent {s.parent_id}")
    if len(roots) != 1:
        raise MalformedTraceError(f"trace must have exactly one root, found {len(roots)}")
    return by_id


def _depth(span: Span, by_id: dict[str, Span]) -> int:
    depth = 0
    seen = {span.span_id}
    cur = span
    while cur.parent_id is not None:
        cur = by_id[cur.parent_id]
        if cur.span_id in seen:
            raise MalformedTraceError("cycle in span parentage")
        seen.add(cur.span_id)
        depth += 1
    return depth


def assemble_timeline(t: Trace) -> list[tuple[str, int, int, int]]:
    """Rows (name, depth, start_ns, end_ns) sorted by start time."""
    by_id = _index(t)
    rows = [(s.name, _depth(s, by_id), s.start_ns, s.end_ns) for s in t.spans]
    rows.sort(key=lambda r: (r[2], r[1]))
    return rows


def assemble_graph(t: Trace) -> tuple[list[str], dict[tuple[str, str], int]]:
    """Module-level call graph: nodes and (caller, callee) -> call count."""
    by_id = _index(t)
    module = lambda s: s.name.split(".", 1)[0]
    nodes: list[str] = []
    for s in t.spans:
        m = module(s)
        if m not in nodes:
            nodes.append(m)
    edges: dict[tuple[str, str], int] = {}
    for s in t.spans:
        if s.parent_id is None:
            continue
        key = (module(by_id[s.parent_id]), module(s))
        edges[key] = edges.get(key, 0) + 1
    return nodes, edges
