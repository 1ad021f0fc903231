"""Acceptance suite: every release criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion. Everything here is hermetic: the only sockets opened are loopback
stub servers.
"""

import contextlib
import json
import random
import threading
import time

import httpx
import numpy as np
import pytest

from convrec.artifacts import (
    DigestMismatchError,
    from_pretrained,
    push_to_hub,
    read_manifest,
    save_pretrained,
    sha256_hex,
)
from convrec.autorec import (
    AutoRecParams,
    RatingRecommender,
    RatingVector,
    autorec_loss_grad,
    init_params,
    train,
)
from convrec.datasets import (
    demo_catalog,
    demo_lexicon,
    make_two_cluster_dataset,
    random_recall_baseline,
    recall_at_1,
)
from convrec.generation import (
    ChatCompletionGenerator,
    LlmEndpointConfig,
    MissingApiKeyError,
    PromptTemplate,
    TemplateGenerator,
    generate,
)
from convrec.linking import EntityLinker, LinkerConfig, link_entities
from convrec.monitor import Span, Trace, assemble_graph, assemble_timeline
from convrec.pipelines import (
    ExpansionPipeline,
    FillblankPipeline,
    InsufficientRecommendationsError,
    PipelineConfig,
)
from convrec.protocol import parse_dialog, render_dialog
from convrec.tokenization import CompositeTokenizer, EntityCatalog

from .conftest import (
    CORPUS,
    PAPER_CONTEXT,
    SLOW_DELAY,
    new_session,
    send_message,
    sse_events,
)
from .dialoggen import random_dialog
from .stubs import StubHubServer, StubLlmServer
from .test_linking import _random_catalog, _random_text, oracle_spans


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE FAIL [{name}]")
        raise
    print(f"\nACCEPTANCE PASS [{name}]")


def _fresh_modules():
    catalog = demo_catalog()
    tokenizer = CompositeTokenizer.from_texts(CORPUS, catalog)
    rec = RatingRecommender(
        init_params(len(catalog), hidden_size=8, seed=7), tokenizer, demo_lexicon()
    )
    return tokenizer, rec, EntityLinker(tokenizer)


def test_protocol_round_trips():
    with criterion("protocol round-trips"):
        start = time.monotonic()
        rng = random.Random(20240801)
        for _ in range(1000):
            d = random_dialog(rng)
            assert parse_dialog(render_dialog(d)) == d
        assert render_dialog(parse_dialog(PAPER_CONTEXT)) == PAPER_CONTEXT
        elapsed = time.monotonic() - start
        assert elapsed < 2.0, f"took {elapsed:.2f}s (budget 2s)"


def test_entity_linker_oracle_equivalence():
    with criterion("entity-linker oracle equivalence"):
        start = time.monotonic()
        rng = random.Random(99)
        names = _random_catalog(rng, size=50)
        catalog = EntityCatalog({n: i for i, n in enumerate(names)})
        cfg = LinkerConfig()
        mismatches = 0
        for _ in range(500):
            text = _random_text(rng, names)
            got = [(s.start, s.end) for s in link_entities(text, catalog, cfg)]
            if got != oracle_spans(text, names):
                mismatches += 1
        assert mismatches == 0
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.2f}s (budget 5s)"


def test_autorec_gradient_check():
    with criterion("autorec gradient check"):
        start = time.monotonic()
        rng = np.random.default_rng(42)
        eps = 1e-4
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 5))
            p = AutoRecParams(
                rng.normal(0, 0.5, (d, n)),
                rng.normal(0, 0.5, d),
                rng.normal(0, 0.5, (n, d)),
                rng.normal(0, 0.5, n),
            )
            batch = []
            for _ in range(int(rng.integers(1, 5))):
                items = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
                batch.append(RatingVector({int(i): int(rng.choice([-1, 1])) for i in items}))
            _, grads = autorec_loss_grad(p, batch, l2=1e-4)
            for name in ("W1", "b1", "W2", "b2"):
                arr = getattr(p, name)
                flat = arr.reshape(-1)
                g = grads[name].reshape(-1)
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + eps
                    lp, _ = autorec_loss_grad(p, batch, l2=1e-4)
                    flat[idx] = orig - eps
                    lm, _ = autorec_loss_grad(p, batch, l2=1e-4)
                    flat[idx] = orig
                    fd = (lp - lm) / (2 * eps)
                    worst = max(worst, abs(g[idx] - fd) / max(1.0, abs(g[idx]), abs(fd)))
        assert worst < 1e-4, f"max relative error {worst:.2e}"
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.2f}s (budget 5s)"


def test_autorec_learning():
    with criterion("autorec learning"):
        start = time.monotonic()
        ds = make_two_cluster_dataset(n_items=20, n_users=40, seed=0)
        p0 = init_params(20, hidden_size=32, seed=1)
        initial, _ = autorec_loss_grad(p0, ds.train)
        p = train(p0, ds.train, epochs=200, lr=0.05)
        final, _ = autorec_loss_grad(p, ds.train)
        recall = recall_at_1(p, ds)
        baseline = random_recall_baseline(ds)
        assert final < 0.5 * initial, f"loss {initial:.3f} -> {final:.3f}"
        assert recall >= 0.6, f"recall@1 {recall:.2f}"
        assert baseline < 0.2, f"random baseline unexpectedly high: {baseline:.2f}"
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"took {elapsed:.2f}s (budget 30s)"


def test_pipeline_determinism_and_fillblank_contract():
    with criterion("pipeline determinism + fill-blank contract"):
        _, rec, linker = _fresh_modules()
        expansion = ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=2),
            rec_module=rec,
            gen_module=TemplateGenerator(style="expansion"),
            proc_module=linker,
        )
        wire = "User: I love Billy Madison (1995) and Up (2009)"
        texts = {expansion.response(wire).text for _ in range(10)}
        assert len(texts) == 1, f"non-deterministic outputs: {texts}"

        ok_fill = FillblankPipeline(
            PipelineConfig(kind="fillblank"),
            rec_module=rec,
            gen_module=TemplateGenerator(style="fillblank", slots=3),
            proc_module=linker,
        )
        out = ok_fill.response(wire)
        assert "<item>" not in out.text

        starving = FillblankPipeline(
            PipelineConfig(kind="fillblank"),
            rec_module=rec,
            gen_module=TemplateGenerator(style="fillblank", slots=len(demo_catalog()) + 5),
            proc_module=linker,
        )
        with pytest.raises(InsufficientRecommendationsError):
            starving.response(wire)


def test_registry_round_trip(tmp_path):
    with criterion("registry round-trip"):
        tokenizer, rec, linker = _fresh_modules()
        gens = {
            "template-gen": TemplateGenerator(style="expansion"),
            "remote-gen": ChatCompletionGenerator(
                LlmEndpointConfig(base_url="http://127.0.0.1:1", api_key_env="X_KEY"),
                PromptTemplate("C:{context} I:{items}"),
            ),
        }
        modules = {"redial-rec": rec, "entity-linker": linker, **gens}
        for name, module in modules.items():
            art = tmp_path / name
            save_pretrained(module, art, name=name)
            loaded = from_pretrained(art)
            assert loaded.config == module.config, name
            if module.state_tensors():
                save_pretrained(loaded, tmp_path / f"{name}-resaved", name=name)
                assert (art / "weights.bin").read_bytes() == (
                    tmp_path / f"{name}-resaved" / "weights.bin"
                ).read_bytes(), name

        pipe = ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=2),
            rec_module=rec,
            gen_module=gens["template-gen"],
            proc_module=linker,
            module_refs={"rec": "redial-rec", "gen": "template-gen", "proc": "entity-linker"},
        )
        save_pretrained(pipe, tmp_path / "expansion-demo", name="expansion-demo")
        loaded_pipe = from_pretrained(tmp_path / "expansion-demo")
        assert loaded_pipe.config == pipe.config
        wire = "User: I love Billy Madison (1995)"
        assert loaded_pipe.response(wire).text == pipe.response(wire).text

        # single-byte corruption of every manifest-listed file is detected
        for name in modules:
            manifest = read_manifest(tmp_path / name)
            for rel, _digest in manifest.files:
                victim = tmp_path / name / rel
                original = victim.read_bytes()
                flipped = bytearray(original)
                flipped[len(flipped) // 2] ^= 0x01
                victim.write_bytes(bytes(flipped))
                with pytest.raises(DigestMismatchError):
                    from_pretrained(tmp_path / name)
                victim.write_bytes(original)

        # push -> pull reproduces the artifact byte for byte
        with StubHubServer(token="sesame") as hub:
            ref = push_to_hub(tmp_path / "redial-rec", hub.base_url, token="sesame")
            pulled_dir = tmp_path / "cache" / ref
            from_pretrained(ref, hub_url=hub.base_url, cache_dir=tmp_path / "cache")
            for rel, _digest in read_manifest(tmp_path / "redial-rec").files:
                assert (pulled_dir / rel).read_bytes() == (
                    tmp_path / "redial-rec" / rel
                ).read_bytes(), rel


def test_weights_golden_bytes():
    with criterion("weights format golden bytes"):
        from convrec.weights import deserialize_weights, serialize_weights

        from .test_weights import GOLDEN

        w = deserialize_weights(GOLDEN)
        assert list(w.tensors) == ["b"]
        assert w.tensors["b"].shape == (2,)
        assert w.tensors["b"].tolist() == [0.0, 1.0]
        assert serialize_weights(w) == GOLDEN


def test_trace_well_nestedness(server):
    with criterion("trace well-nestedness"):
        base, service = server
        sid = new_session(base, mode="debug")
        events = send_message(base, sid, "I love Billy Madison (1995)")
        trace_id = events[-1][1]["trace_id"]
        trace = service.collector.get(trace_id)
        assert len(trace.spans) >= 3
        roots = [s for s in trace.spans if s.parent_id is None]
        assert len(roots) == 1
        by_id = {s.span_id: s for s in trace.spans}
        for s in trace.spans:
            if s.parent_id is not None:
                parent = by_id[s.parent_id]
                assert parent.start_ns <= s.start_ns <= s.end_ns <= parent.end_ns

        def span(sid_, pid, name, a, b):
            return Span(sid_, pid, "t", name, a, b, "", "")

        fixture = Trace(
            "t",
            [
                span("a", None, "pipeline.respond", 0, 100),
                span("b", "a", "rec.respond", 10, 40),
                span("c", "a", "gen.respond", 50, 90),
            ],
        )
        rows = assemble_timeline(fixture)
        assert [r[1] for r in rows] == [0, 1, 1]
        nodes, edges = assemble_graph(fixture)
        assert len(nodes) == 3
        assert len(edges) == 2
        assert all(count == 1 for count in edges.values())


def test_service_contract_suite(server):
    with criterion("service contract suite"):
        base, service = server

        # 200: listing, session creation, history, refresh
        assert httpx.get(f"{base}/api/pipelines").status_code == 200
        sid = new_session(base)
        assert httpx.get(f"{base}/api/sessions/{sid}/history").status_code == 200
        assert httpx.delete(f"{base}/api/sessions/{sid}").status_code == 200

        # 404: unknown pipeline, session, trace
        assert (
            httpx.post(f"{base}/api/sessions", json={"pipeline_id": "ghost"}).status_code == 404
        )
        assert httpx.get(f"{base}/api/sessions/ghost/history").status_code == 404
        assert httpx.get(f"{base}/api/traces/ghost").status_code == 404

        # 422: bad mode, reserved tokens
        assert (
            httpx.post(
                f"{base}/api/sessions",
                json={"pipeline_id": "expansion-demo", "mode": "loud"},
            ).status_code
            == 422
        )
        assert (
            httpx.post(
                f"{base}/api/sessions/{sid}/messages", json={"text": "a<sep>b"}
            ).status_code
            == 422
        )

        # 403: trace of an info-mode exchange
        send_message(base, sid, "hello")
        info_trace = next(iter(service._trace_modes))
        assert httpx.get(f"{base}/api/traces/{info_trace}").status_code == 403

        # 409 + stop timing against the slow stub
        slow_sid = new_session(base, "slow-demo")
        first_chunk = threading.Event()
        stream_done = threading.Event()

        def consume():
            with httpx.stream(
                "POST",
                f"{base}/api/sessions/{slow_sid}/messages",
                json={"text": "hi"},
                timeout=30.0,
            ) as resp:
                for _ in sse_events(resp.iter_lines()):
                    first_chunk.set()
            stream_done.set()

        threading.Thread(target=consume, daemon=True).start()
        assert first_chunk.wait(5.0)
        r = httpx.post(f"{base}/api/sessions/{slow_sid}/messages", json={"text": "again"})
        assert r.status_code == 409
        stop_at = time.monotonic()
        assert httpx.post(f"{base}/api/sessions/{slow_sid}/stop").json() == {"stopped": True}
        assert stream_done.wait(5.0)
        stop_latency = time.monotonic() - stop_at
        assert stop_latency <= SLOW_DELAY + 0.2, f"stop took {stop_latency:.3f}s"
        assert httpx.get(f"{base}/api/sessions/{slow_sid}/history").json()["messages"] == []

        # 8 concurrent sessions x 10 messages: zero cross-session contamination
        sids = [new_session(base) for _ in range(8)]
        errors = []

        def chat(idx):
            try:
                for m in range(10):
                    events = send_message(base, sids[idx], f"s{idx} m{m}")
                    assert events[-1][0] == "done"
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=chat, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        for idx, s in enumerate(sids):
            messages = httpx.get(f"{base}/api/sessions/{s}/history").json()["messages"]
            assert len(messages) == 20
            users = [m["text"] for m in messages if m["role"] == "User"]
            assert users == [f"s{idx} m{m}" for m in range(10)]


def test_llm_client_against_stub(monkeypatch):
    with criterion("llm client against stub"):
        monkeypatch.setenv("ACCEPT_KEY", "k")
        cfg_kw = dict(api_key_env="ACCEPT_KEY", max_retries=2)

        with StubLlmServer() as stub:
            stub.behaviors.append({"chunks": ["Hel", "lo ", "there"]})
            chunks = list(generate(LlmEndpointConfig(base_url=stub.base_url, **cfg_kw), "p"))
            streamed = "".join(c.text for c in chunks)
            stub.behaviors.append({"chunks": ["Hel", "lo ", "there"]})
            gen = ChatCompletionGenerator(
                LlmEndpointConfig(base_url=stub.base_url, **cfg_kw), PromptTemplate("p")
            )
            final = gen.response(parse_dialog("User: hi")).text
            assert streamed == final == "Hello there"

        with StubLlmServer() as stub:
            stub.behaviors += [{"status": 500}, {"status": 500}, {"chunks": ["recovered"]}]
            chunks = list(generate(LlmEndpointConfig(base_url=stub.base_url, **cfg_kw), "p"))
            assert "".join(c.text for c in chunks) == "recovered"
            assert len(stub.requests) == 3

        with StubLlmServer() as stub:
            monkeypatch.delenv("ACCEPT_KEY")
            with pytest.raises(MissingApiKeyError):
                generate(LlmEndpointConfig(base_url=stub.base_url, **cfg_kw), "p")
            assert stub.requests == []  # no socket was opened toward the endpoint
