from __future__ import annotations

import json
import threading
import time

import httpx
import pytest
import uvicorn

from convrec.autorec import RatingRecommender, init_params
from convrec.datasets import demo_catalog, demo_lexicon
from convrec.generation import TemplateGenerator
from convrec.linking import EntityLinker
from convrec.monitor import TraceCollector
from convrec.pipelines import ExpansionPipeline, FillblankPipeline, PipelineConfig
from convrec.service import ChatService, create_app
from convrec.tokenization import CompositeTokenizer

PAPER_CONTEXT = "<sep>".join(
    [
        "User: Hello!",
        "System: Hello, I have some movie ideas for you. Have you watched the movie "
        "<entity>Forever My Girl (2018)</entity> ?",
        "User: Looking for movies in the comedy category. I like Adam Sandler movies like "
        "<entity>Billy Madison (1995)</entity> Oh no is that good?",
    ]
)

CORPUS = [
    "hello I like funny movies",
    "have you watched anything great lately",
    "that one was boring but the other was awesome",
]


@pytest.fixture(scope="session")
def catalog():
    return demo_catalog()


@pytest.fixture(scope="session")
def lexicon():
    return demo_lexicon()


@pytest.fixture()
def tokenizer(catalog):
    return CompositeTokenizer.from_texts(CORPUS, catalog)


@pytest.fixture()
def recommender(tokenizer, lexicon):
    params = init_params(len(tokenizer.catalog), hidden_size=8, seed=7)
    return RatingRecommender(params, tokenizer, lexicon)


@pytest.fixture()
def linker(tokenizer):
    return EntityLinker(tokenizer)


@pytest.fixture()
def expansion_pipeline(recommender, linker):
    return ExpansionPipeline(
        PipelineConfig(kind="expansion", top_k=2),
        rec_module=recommender,
        gen_module=TemplateGenerator(style="expansion"),
        proc_module=linker,
    )


@pytest.fixture()
def fillblank_pipeline(recommender, linker):
    return FillblankPipeline(
        PipelineConfig(kind="fillblank"),
        rec_module=recommender,
        gen_module=TemplateGenerator(style="fillblank", slots=2),
        proc_module=linker,
    )


# -- live chat service --------------------------------------------------------

SLOW_DELAY = 0.05


def make_demo_service(recommender, linker, collector_capacity=None) -> ChatService:
    from .stubs import SlowGenerator

    collector = TraceCollector(capacity=collector_capacity) if collector_capacity else None
    service = ChatService(collector=collector)
    service.register(
        "expansion-demo",
        ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=2),
            rec_module=recommender,
            gen_module=TemplateGenerator(style="expansion"),
            proc_module=linker,
        ),
        name="Expansion demo",
    )
    service.register(
        "fillblank-demo",
        FillblankPipeline(
            PipelineConfig(kind="fillblank"),
            rec_module=recommender,
            gen_module=TemplateGenerator(style="fillblank", slots=1),
            proc_module=linker,
        ),
        name="Fill-blank demo",
    )
    service.register(
        "slow-demo",
        ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=1),
            rec_module=recommender,
            gen_module=SlowGenerator(n_chunks=60, delay_s=SLOW_DELAY),
        ),
        name="Slow demo",
    )
    return service


@pytest.fixture()
def server(recommender, linker):
    service = make_demo_service(recommender, linker)
    app = create_app(service)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    uv = uvicorn.Server(config)
    thread = threading.Thread(target=uv.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not uv.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    port = uv.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}", service
    uv.should_exit = True
    thread.join(timeout=5)


def sse_events(lines):
    event = None
    for line in lines:
        if line.startswith("event: "):
            event = line[len("event: ") :]
        elif line.startswith("data: "):
            yield event, json.loads(line[len("data: ") :])


def new_session(base, pipeline_id="expansion-demo", mode="info") -> str:
    r = httpx.post(f"{base}/api/sessions", json={"pipeline_id": pipeline_id, "mode": mode})
    assert r.status_code == 200
    return r.json()["session_id"]


def send_message(base, sid, text, kwargs=None):
    with httpx.stream(
        "POST",
        f"{base}/api/sessions/{sid}/messages",
        json={"text": text, "kwargs": kwargs or {}},
        timeout=30.0,
    ) as resp:
        assert resp.status_code == 200
        return list(sse_events(resp.iter_lines()))
