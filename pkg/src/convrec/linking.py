"""Dictionary entity linker: annotates raw user text with entity spans.

Matching is greedy leftmost-longest over the catalog names, case-insensitive
by default, with word-boundary checks so "Up" never fires inside "Upon".
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar

from .core import BaseModule, ModuleConfig, ModuleOutput, register_module
from .artifacts import LoadContext
from .monitor import monitored
from .protocol import Dialog, EntitySpan, Role, Utterance, render_utterance
from .tokenization import CompositeTokenizer, EntityCatalog


class NoUserTurnError(ValueError):
    pass


@dataclass(frozen=True)
class LinkerConfig:
    case_sensitive: bool = False
    boundary_mode: bool = True


def _boundary_ok(text: str, start: int, end: int) -> bool:
    if start > 0 and text[start - 1].isalnum() and text[start].isalnum():
        return False
    if end < len(text) and text[end - 1].isalnum() and text[end].isalnum():
        return False
    return True


class _NameIndex:
    """Catalog names grouped by first character, longest first."""

    def __init__(self, catalog: EntityCatalog, case_sensitive: bool):
        self.case_sensitive = case_sensitive
        self.by_first: dict[str, list[tuple[str, str]]] = {}
        for name in catalog.entity_to_id:
            if not name:
                continue
            key = name if case_sensitive else name.lower()
            self.by_first.setdefault(key[0], []).append((key, name))
        for bucket in self.by_first.values():
            bucket.sort(key=lambda pair: (-len(pair[0]), pair[0]))


def link_entities(
    text: str, catalog: EntityCatalog, cfg: LinkerConfig = LinkerConfig()
) -> tuple[EntitySpan, ...]:
    """Non-overlapping spans for catalog names found in ``text``.

    At each position the longest catalog name that matches (and sits on a
    word boundary, when enabled) wins; scanning resumes after it. Span
    surfaces are the matched text slices; ``entity_id`` comes from the
    catalog name that matched.
    """
    index = _NameIndex(catalog, cfg.case_sensitive)
    folded = text if cfg.case_sensitive else text.lower()
    spans: list[EntitySpan] = []
    pos = 0
    n = len(folded)
    while pos < n:
        matched = None
        for key, name in index.by_first.get(folded[pos], ()):
            if not folded.startswith(key, pos):
                continue
            end = pos + len(key)
            if cfg.boundary_mode and not _boundary_ok(text, pos, end):
                continue
            matched = (end, name)
            break
        if matched is None:
            pos += 1
            continue
        end, name = matched
        spans.append(
            EntitySpan(
                surface=text[pos:end],
                start=pos,
                end=end,
                entity_id=catalog.entity_to_id[name],
            )
        )
        pos = end
    return tuple(spans)


def link_utterance(
    utt: Utterance, catalog: EntityCatalog, cfg: LinkerConfig = LinkerConfig()
) -> Utterance:
    """Annotate an utterance; already-annotated input passes through unchanged."""
    if utt.spans:
        return utt
    return Utterance(role=utt.role, text=utt.text, spans=link_entities(utt.text, catalog, cfg))


@register_module
class EntityLinker(BaseModule):
    """Processor module wrapping :func:`link_entities`."""

    module_type: ClassVar[str] = "entity-linker"
    kind: ClassVar[str] = "proc"

    def __init__(self, tokenizer: CompositeTokenizer, cfg: LinkerConfig = LinkerConfig()):
        self.tokenizer = tokenizer
        self.cfg = cfg

    @property
    def config(self) -> ModuleConfig:
        return ModuleConfig(
            module_type=self.module_type,
            params={
                "case_sensitive": self.cfg.case_sensitive,
                "boundary_mode": self.cfg.boundary_mode,
                "sub_tokenizers": list(self.tokenizer.sub_tokenizers),
            },
        )

    @monitored("respond")
    def response(
        self, dialog: Dialog, tokenizer: CompositeTokenizer | None = None, **kwargs: Any
    ) -> ModuleOutput:
        """Re-render the final user utterance with linked entity markup."""
        tok = tokenizer or self.tokenizer
        last = dialog.last
        if last.role is not Role.USER:
            raise NoUserTurnError("dialog does not end with a User utterance")
        linked = link_utterance(last, tok.catalog, self.cfg)
        return ModuleOutput(text=render_utterance(linked))

    @classmethod
    def load_artifact(cls, config: ModuleConfig, art_dir: Path, ctx: LoadContext) -> "EntityLinker":
        tokenizer = CompositeTokenizer.load_assets(
            art_dir / "tokenizer", config.params.get("sub_tokenizers", ["word"])
        )
        cfg = LinkerConfig(
            case_sensitive=config.params.get("case_sensitive", False),
            boundary_mode=config.params.get("boundary_mode", True),
        )
        return cls(tokenizer, cfg)
