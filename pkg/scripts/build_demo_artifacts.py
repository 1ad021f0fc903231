#!/usr/bin/env python3
"""Build the demo artifact set: train the recommender on synthetic two-cluster
data, save every module and pipeline as portable artifacts, and write a
service config pointing at them.

Usage:
    python scripts/build_demo_artifacts.py [--out artifacts] [--epochs 200]

Afterwards:
    convrec serve --config artifacts/service.json --port 8080 --offline
"""

import argparse
import json
from pathlib import Path

from convrec.artifacts import save_pretrained
from convrec.autorec import RatingRecommender, autorec_loss_grad, init_params, train
from convrec.datasets import (
    demo_catalog,
    demo_lexicon,
    make_two_cluster_dataset,
    random_recall_baseline,
    recall_at_1,
)
from convrec.generation import (
    ChatCompletionGenerator,
    DEFAULT_EXPANSION_TEMPLATE,
    DEFAULT_FILLBLANK_TEMPLATE,
    LlmEndpointConfig,
    PromptTemplate,
    TemplateGenerator,
)
from convrec.linking import EntityLinker
from convrec.pipelines import ExpansionPipeline, FillblankPipeline, PipelineConfig
from convrec.tokenization import CompositeTokenizer

CORPUS = [
    "hello there",
    "I like funny movies with a good story",
    "have you watched anything great lately",
    "that one was boring but the other was awesome",
    "looking for something fun for the weekend",
]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=Path("artifacts"))
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--llm-base-url",
        default="https://api.openai.com/v1",
        help="endpoint for the optional remote generator artifact",
    )
    args = parser.parse_args()

    catalog = demo_catalog()
    lexicon = demo_lexicon()
    tokenizer = CompositeTokenizer.from_texts(CORPUS, catalog)

    print(f"training recommender: {len(catalog)} items, hidden={args.hidden}")
    ds = make_two_cluster_dataset(n_items=len(catalog), n_users=40, seed=args.seed)
    p0 = init_params(len(catalog), hidden_size=args.hidden, seed=args.seed + 1)
    initial, _ = autorec_loss_grad(p0, ds.train)
    params = train(p0, ds.train, epochs=args.epochs, lr=args.lr)
    final, _ = autorec_loss_grad(params, ds.train)
    print(
        f"loss {initial:.4f} -> {final:.4f}; "
        f"recall@1 {recall_at_1(params, ds):.2f} "
        f"(random {random_recall_baseline(ds):.2f})"
    )

    rec = RatingRecommender(params, tokenizer, lexicon)
    linker = EntityLinker(tokenizer)
    gen_expansion = TemplateGenerator(style="expansion")
    gen_fillblank = TemplateGenerator(style="fillblank", slots=2)
    gen_remote = ChatCompletionGenerator(
        LlmEndpointConfig(base_url=args.llm_base_url, api_key_env="CONVREC_API_KEY"),
        PromptTemplate(DEFAULT_EXPANSION_TEMPLATE),
    )
    gen_remote_fill = ChatCompletionGenerator(
        LlmEndpointConfig(base_url=args.llm_base_url, api_key_env="CONVREC_API_KEY"),
        PromptTemplate(DEFAULT_FILLBLANK_TEMPLATE),
        style="fillblank",
    )

    out = args.out
    modules = {
        "redial-rec": rec,
        "entity-linker": linker,
        "template-gen-expansion": gen_expansion,
        "template-gen-fillblank": gen_fillblank,
        "chat-gen-expansion": gen_remote,
        "chat-gen-fillblank": gen_remote_fill,
    }
    for name, module in modules.items():
        save_pretrained(module, out / name, name=name)
        print(f"saved {out / name}")

    pipelines = {
        "expansion-demo": ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=3),
            rec,
            gen_expansion,
            linker,
            module_refs={
                "rec": "redial-rec",
                "gen": "template-gen-expansion",
                "proc": "entity-linker",
            },
        ),
        "fillblank-demo": FillblankPipeline(
            PipelineConfig(kind="fillblank"),
            rec,
            gen_fillblank,
            linker,
            module_refs={
                "rec": "redial-rec",
                "gen": "template-gen-fillblank",
                "proc": "entity-linker",
            },
        ),
        "expansion-live": ExpansionPipeline(
            PipelineConfig(kind="expansion", top_k=3),
            rec,
            gen_remote,
            linker,
            module_refs={
                "rec": "redial-rec",
                "gen": "chat-gen-expansion",
                "proc": "entity-linker",
            },
        ),
    }
    for name, pipe in pipelines.items():
        save_pretrained(pipe, out / name, name=name)
        print(f"saved {out / name}")

    config = {
        "hub_url": None,
        "pipelines": [
            {"id": "expansion-demo", "name": "Expansion (offline)", "ref": "expansion-demo"},
            {"id": "fillblank-demo", "name": "Fill-blank (offline)", "ref": "fillblank-demo"},
            {"id": "expansion-live", "name": "Expansion (live LLM)", "ref": "expansion-live"},
        ],
    }
    (out / "service.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"wrote {out / 'service.json'}")
    print("run: convrec serve --config", out / "service.json", "--port 8080 --offline")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
