"""HTTP chat service: sessions over registered pipelines, streamed responses,
stop/refresh, downloadable history and trace retrieval.

Responses stream as server-sent events (``event: chunk`` then ``event:
done``). Sessions are in-memory with an idle TTL; one generation may be in
flight per session. Pipelines and modules are shared read-only across
sessions; the per-request pipeline run is confined to one worker thread so
trace contexts never leak between requests.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Literal

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel

from .core import RecList
from .generation import CancelledError as GenCancelled
from .generation import ChatCompletionGenerator
from .linking import link_utterance
from .monitor import TraceCollector, assemble_graph, assemble_timeline
from .pipelines import BasePipeline, PipelineOutput
from .protocol import (
    RESERVED_TOKENS,
    Dialog,
    Role,
    Utterance,
    parse_dialog,
    render_body,
)

logger = logging.getLogger(__name__)

SESSION_TTL_S = 3600.0
STREAM_POLL_S = 0.05


@dataclass
class PipelineEntry:
    pipeline_id: str
    name: str
    pipeline: BasePipeline
    default_kwargs: dict[str, Any] = field(default_factory=dict)

    def describe(self) -> dict[str, Any]:
        p = self.pipeline
        modules = {"rec": p.rec_module.module_type, "gen": p.gen_module.module_type}
        if p.proc_module is not None:
            modules["proc"] = p.proc_module.module_type
        return {
            "id": self.pipeline_id,
            "name": self.name,
            "kind": p.cfg.kind,
            "modules": modules,
            "default_kwargs": self.default_kwargs,
        }


@dataclass
class HistoryEntry:
    role: str
    text: str
    recommendations: list[dict[str, Any]] = field(default_factory=list)
    trace_id: str | None = None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "text": self.text,
            "recommendations": self.recommendations,
            "trace_id": self.trace_id,
        }


@dataclass
class Session:
    session_id: str
    pipeline_id: str
    mode: str
    history: list[HistoryEntry] = field(default_factory=list)
    in_flight: bool = False
    cancel_event: threading.Event = field(default_factory=threading.Event)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_active: float = field(default_factory=time.monotonic)


class ChatService:
    """Session and pipeline registry backing the HTTP endpoints."""

    def __init__(self, collector: TraceCollector | None = None, session_ttl_s: float = SESSION_TTL_S):
        self.collector = collector or TraceCollector()
        self.session_ttl_s = session_ttl_s
        self.pipelines: dict[str, PipelineEntry] = {}
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._trace_modes: dict[str, str] = {}

    def register(
        self,
        pipeline_id: str,
        pipeline: BasePipeline,
        name: str | None = None,
        default_kwargs: dict[str, Any] | None = None,
    ) -> None:
        pipeline.collector = self.collector
        if default_kwargs is None:
            default_kwargs = {"rec": {"top_k": pipeline.cfg.top_k}, "gen": {}}
            if isinstance(pipeline.gen_module, ChatCompletionGenerator):
                default_kwargs["gen"] = {
                    "model": pipeline.gen_module.endpoint.model,
                    "temperature": pipeline.gen_module.endpoint.temperature,
                }
        self.pipelines[pipeline_id] = PipelineEntry(
            pipeline_id=pipeline_id,
            name=name or pipeline_id,
            pipeline=pipeline,
            default_kwargs=default_kwargs,
        )

    # -- sessions -------------------------------------------------------------

    def _purge_idle(self) -> None:
        now = time.monotonic()
        stale = [
            sid
            for sid, s in self.sessions.items()
            if not s.in_flight and now - s.last_active > self.session_ttl_s
        ]
        for sid in stale:
            del self.sessions[sid]

    def create_session(self, pipeline_id: str, mode: str) -> Session:
        with self._lock:
            self._purge_idle()
            session = Session(
                session_id=uuid.uuid4().hex[:16], pipeline_id=pipeline_id, mode=mode
            )
            self.sessions[session.session_id] = session
            return session

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        session.last_active = time.monotonic()
        return session

    def remember_trace(self, trace_id: str, mode: str) -> None:
        with self._lock:
            self._trace_modes[trace_id] = mode
            while len(self._trace_modes) > self.collector.capacity:
                del self._trace_modes[next(iter(self._trace_modes))]

    def trace_mode(self, trace_id: str) -> str | None:
        with self._lock:
            return self._trace_modes.get(trace_id)


def _dialog_from_history(session: Session, user_utt: Utterance) -> Dialog:
    utterances: list[Utterance] = []
    for entry in session.history:
        wire = f"{entry.role}: {entry.text}"
        utterances.append(parse_dialog(wire).utterances[0])
    utterances.append(user_utt)
    return Dialog(tuple(utterances))


def _rec_payload(pipeline: BasePipeline, recs: RecList) -> list[dict[str, Any]]:
    names = pipeline.catalog.id_to_entity
    return [
        {"item_id": item, "score": score, "name": names[item]} for item, score in recs.items
    ]


def _sse(event: str, payload: dict[str, Any]) -> str:
    return f"event: {event}\ndata: {json.dumps(payload)}\n\n"


class CreateSessionRequest(BaseModel):
    pipeline_id: str
    mode: Literal["info", "debug"] = "info"


class MessageRequest(BaseModel):
    text: str
    kwargs: dict[str, Any] = {}


def create_app(service: ChatService, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="convrec chat service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.service = service

    @app.get("/api/pipelines")
    def list_pipelines() -> list[dict[str, Any]]:
        return [entry.describe() for entry in service.pipelines.values()]

    @app.post("/api/sessions")
    def create_session(req: CreateSessionRequest) -> dict[str, str]:
        if req.pipeline_id not in service.pipelines:
            raise HTTPException(status_code=404, detail="unknown pipeline")
        session = service.create_session(req.pipeline_id, req.mode)
        return {"session_id": session.session_id}

    @app.post("/api/sessions/{sid}/messages")
    def post_message(sid: str, req: MessageRequest) -> Response:
        session = service.get_session(sid)
        entry = service.pipelines[session.pipeline_id]
        for token in RESERVED_TOKENS:
            if token in req.text:
                raise HTTPException(
                    status_code=422, detail=f"message may not contain {token!r}"
                )
        with session.lock:
            if session.in_flight:
                raise HTTPException(status_code=409, detail="generation already in flight")
            session.in_flight = True
            session.cancel_event = threading.Event()

        pipeline = entry.pipeline
        user_utt = Utterance(role=Role.USER, text=req.text)
        if pipeline.cfg.auto_link and pipeline.proc_module is not None:
            user_utt = link_utterance(
                user_utt, pipeline.catalog, pipeline.proc_module.cfg
            )
        try:
            dialog = _dialog_from_history(session, user_utt)
        except Exception as exc:
            with session.lock:
                session.in_flight = False
            raise HTTPException(status_code=422, detail=f"protocol error: {exc}")

        events: queue.Queue[tuple[str, Any]] = queue.Queue()
        cancel = session.cancel_event

        def worker() -> None:
            try:
                run = pipeline.response_stream(dialog, cancel=cancel, **req.kwargs)
                stopped = False
                for chunk in run:
                    if cancel.is_set():
                        stopped = True
                        break
                    events.put(("chunk", {"text": chunk}))
                if stopped or cancel.is_set():
                    run.close()
                    events.put(("stopped", None))
                    return
                out = run.output
                assert out is not None
                payload = _finish(out)
                events.put(("done", payload))
            except GenCancelled:
                events.put(("stopped", None))
            except Exception as exc:
                logger.exception("pipeline run failed")
                events.put(("error", {"detail": f"{type(exc).__name__}: {exc}"}))
            finally:
                with session.lock:
                    session.in_flight = False

        def _finish(out: PipelineOutput) -> dict[str, Any]:
            trace_id = out.trace_id if session.mode == "debug" else None
            service.remember_trace(out.trace_id, session.mode)
            payload = {
                "text": out.text,
                "recommendations": _rec_payload(pipeline, out.recommendations),
                "trace_id": trace_id,
            }
            with session.lock:
                session.history.append(
                    HistoryEntry(role="User", text=render_body(user_utt.text, user_utt.spans))
                )
                session.history.append(
                    HistoryEntry(
                        role="System",
                        text=out.text,
                        recommendations=payload["recommendations"],
                        trace_id=trace_id,
                    )
                )
            return payload

        threading.Thread(target=worker, daemon=True).start()

        def event_stream():
            finished = False
            try:
                while True:
                    try:
                        kind, payload = events.get(timeout=STREAM_POLL_S)
                    except queue.Empty:
                        continue
                    if kind == "chunk":
                        yield _sse("chunk", payload)
                    elif kind == "done":
                        finished = True
                        yield _sse("done", payload)
                        return
                    elif kind == "error":
                        finished = True
                        yield _sse("error", payload)
                        return
                    else:  # stopped
                        finished = True
                        return
            finally:
                if not finished:
                    cancel.set()  # client went away mid-stream

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    @app.post("/api/sessions/{sid}/stop")
    def stop(sid: str) -> dict[str, bool]:
        session = service.get_session(sid)
        with session.lock:
            if not session.in_flight:
                return {"stopped": False}
            session.cancel_event.set()
        return {"stopped": True}

    @app.delete("/api/sessions/{sid}")
    def refresh(sid: str) -> dict[str, Any]:
        session = service.get_session(sid)
        with session.lock:
            if session.in_flight:
                session.cancel_event.set()
            session.history = []
        return {"session_id": session.session_id, "messages": []}

    @app.get("/api/sessions/{sid}/history")
    def history(sid: str) -> Response:
        session = service.get_session(sid)
        with session.lock:
            messages = [entry.to_json_dict() for entry in session.history]
        doc = {
            "session_id": session.session_id,
            "pipeline_id": session.pipeline_id,
            "mode": session.mode,
            "messages": messages,
        }
        return JSONResponse(
            doc,
            headers={
                "Content-Disposition": f'attachment; filename="chat-{session.session_id}.json"'
            },
        )

    @app.get("/api/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict[str, Any]:
        mode = service.trace_mode(trace_id)
        if mode is None:
            raise HTTPException(status_code=404, detail="unknown trace")
        if mode != "debug":
            raise HTTPException(status_code=403, detail="trace belongs to an info-mode session")
        trace = service.collector.get(trace_id)
        if trace is None:
            raise HTTPException(status_code=404, detail="trace evicted")
        nodes, edges = assemble_graph(trace)
        return {
            "spans": [s.to_json_dict() for s in trace.spans],
            "timeline": [
                {"name": name, "depth": depth, "start_ns": start, "end_ns": end}
                for name, depth, start, end in assemble_timeline(trace)
            ],
            "graph": {
                "nodes": nodes,
                "edges": [
                    {"source": src, "target": dst, "count": count}
                    for (src, dst), count in sorted(edges.items())
                ],
            },
        }

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
