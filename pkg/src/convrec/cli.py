"""Command line entry point: ``convrec serve --config <file> --port <n> [--offline]``.

The config file is JSON listing the pipeline artifacts to serve::

    {
      "hub_url": null,
      "pipelines": [
        {"id": "expansion-demo", "name": "Expansion demo", "ref": "artifacts/expansion-demo"}
      ]
    }

Refs are local artifact directories or hub names resolved against hub_url.
``--offline`` swaps any remote generator for the deterministic template
generator so the service runs without network egress or API keys.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from .artifacts import from_pretrained
from .generation import ChatCompletionGenerator, TemplateGenerator
from .pipelines import BasePipeline
from .service import ChatService, create_app


def force_offline(pipeline: BasePipeline) -> BasePipeline:
    if isinstance(pipeline.gen_module, ChatCompletionGenerator):
        pipeline.gen_module = TemplateGenerator(style=pipeline.cfg.kind)
    return pipeline


def build_service(config_path: Path, offline: bool = False) -> ChatService:
    config = json.loads(config_path.read_text(encoding="utf-8"))
    hub_url = config.get("hub_url")
    service = ChatService()
    base_dir = config_path.parent
    for spec in config["pipelines"]:
        ref = spec["ref"]
        local = base_dir / ref
        pipeline = from_pretrained(local if local.is_dir() else ref, hub_url=hub_url)
        if offline:
            pipeline = force_offline(pipeline)
        service.register(spec["id"], pipeline, name=spec.get("name"))
    return service


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="convrec")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the chat service")
    serve.add_argument("--config", required=True, type=Path, help="service config JSON")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument(
        "--offline", action="store_true", help="replace remote generators with templates"
    )
    serve.add_argument("--ui-dir", default=None, help="static directory with the chat UI build")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    if args.command == "serve":
        import uvicorn

        service = build_service(args.config, offline=args.offline)
        app = create_app(service, ui_dir=args.ui_dir)
        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
