"""Composite tokenizer: named sub-tokenizers plus entity-id resolution.

Modules exchange text; inside a module that text becomes token ids and
entity ids. The composite tokenizer dispatches plain-text encoding to its
sub-tokenizers and resolves ``<entity>`` span surfaces through the shared
entity catalog.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .protocol import Dialog

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_VOCAB = ("<pad>", "<unk>", "<bos>", "<eos>")


class TokenizationError(ValueError):
    pass


class UnknownSubTokenizerError(TokenizationError):
    pass


class IdOutOfRangeError(TokenizationError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def word_tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Lowercased tokens with (start, end) character offsets into ``text``.

    Whitespace splits chunks; leading and trailing punctuation characters of
    each chunk become their own tokens.
    """
    tokens: list[tuple[str, int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        # chunk is text[i:j]; peel leading/trailing punctuation
        lead = i
        while lead < j and _is_punct(text[lead]):
            tokens.append((text[lead].lower(), lead, lead + 1))
            lead += 1
        trail = j
        trailing: list[tuple[str, int, int]] = []
        while trail > lead and _is_punct(text[trail - 1]):
            trailing.append((text[trail - 1].lower(), trail - 1, trail))
            trail -= 1
        if lead < trail:
            tokens.append((text[lead:trail].lower(), lead, trail))
        tokens.extend(reversed(trailing))
        i = j
    return tokens


def word_tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in word_tokenize_with_offsets(text)]


@dataclass(frozen=True)
class Vocab:
    """Token-to-id mapping with ids contiguous from 0; ids 0..3 are reserved."""

    token_to_id: dict[str, int]

    def __post_init__(self) -> None:
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise TokenizationError("vocab ids must be contiguous from 0")
        for i, literal in enumerate(RESERVED_VOCAB):
            if self.token_to_id.get(literal) != i:
                raise TokenizationError(f"vocab id {i} must be {literal!r}")

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def id_to_token(self) -> list[str]:
        inv = [""] * len(self.token_to_id)
        for tok, idx in self.token_to_id.items():
            inv[idx] = tok
        return inv

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1) -> "Vocab":
        counts: Counter[str] = Counter()
        order: dict[str, None] = {}
        for text in texts:
            for tok in word_tokenize(text):
                counts[tok] += 1
                order.setdefault(tok)
        mapping = {literal: i for i, literal in enumerate(RESERVED_VOCAB)}
        for tok in order:
            if counts[tok] >= min_freq and tok not in mapping:
                mapping[tok] = len(mapping)
        return cls(mapping)


class WordTokenizer:
    """Default whitespace/punctuation sub-tokenizer over a fixed vocab."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab

    def encode(self, text: str) -> list[int]:
        return [self.vocab.token_to_id.get(tok, UNK) for tok in word_tokenize(text)]

    def decode(self, ids: list[int]) -> str:
        inv = self.vocab.id_to_token
        out: list[str] = []
        for i in ids:
            if not 0 <= i < len(inv):
                raise IdOutOfRangeError(f"id {i} outside vocab of size {len(inv)}")
            if i in (PAD, UNK, BOS, EOS):
                continue
            out.append(inv[i])
        return " ".join(out)


@dataclass(frozen=True)
class EntityCatalog:
    """Bijective mapping between canonical entity names and ids in [0, N)."""

    entity_to_id: dict[str, int]

    def __post_init__(self) -> None:
        n = len(self.entity_to_id)
        ids = sorted(self.entity_to_id.values())
        if ids != list(range(n)):
            raise TokenizationError("entity ids must be a bijection onto [0, N)")

    def __len__(self) -> int:
        return len(self.entity_to_id)

    @property
    def id_to_entity(self) -> list[str]:
        inv = [""] * len(self.entity_to_id)
        for name, idx in self.entity_to_id.items():
            inv[idx] = name
        return inv

    def name_of(self, entity_id: int) -> str:
        return self.id_to_entity[entity_id]


@dataclass
class EncodedInputs:
    """Per-sub-tokenizer id sequences plus resolved entity mentions.

    ``sequences[name]`` is the id sequence for the dialog's clean texts
    concatenated in turn order. Mention order is preserved:
    ``len(entity_ids) + len(unknown_entities)`` equals the span count.
    """

    sequences: dict[str, list[int]]
    entity_ids: list[int] = field(default_factory=list)
    unknown_entities: list[str] = field(default_factory=list)


class CompositeTokenizer:
    """Ordered named sub-tokenizers sharing one entity catalog."""

    def __init__(self, sub_tokenizers: dict[str, WordTokenizer], catalog: EntityCatalog):
        if not sub_tokenizers:
            raise TokenizationError("composite tokenizer needs at least one sub-tokenizer")
        self.sub_tokenizers = dict(sub_tokenizers)
        self.catalog = catalog

    def encode(self, dialog: Dialog) -> EncodedInputs:
        text = " ".join(u.text for u in dialog.utterances)
        sequences = {name: sub.encode(text) for name, sub in self.sub_tokenizers.items()}
        entity_ids: list[int] = []
        unknown: list[str] = []
        for utt in dialog.utterances:
            for span in utt.spans:
                eid = self.catalog.entity_to_id.get(span.surface)
                if eid is None:
                    unknown.append(span.surface)
                else:
                    entity_ids.append(eid)
        return EncodedInputs(sequences=sequences, entity_ids=entity_ids, unknown_entities=unknown)

    def decode(self, sub: str, ids: list[int]) -> str:
        if sub not in self.sub_tokenizers:
            raise UnknownSubTokenizerError(f"no sub-tokenizer named {sub!r}")
        return self.sub_tokenizers[sub].decode(ids)

    # -- persistence ------------------------------------------------------
    # The first sub-tokenizer persists as tokenizer/vocab.txt; any further
    # ones as tokenizer/vocab.<name>.txt. The catalog is entity2id.json.

    def save_assets(self, tokenizer_dir: Path) -> list[Path]:
        tokenizer_dir.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []
        for i, (name, sub) in enumerate(self.sub_tokenizers.items()):
            fname = "vocab.txt" if i == 0 else f"vocab.{name}.txt"
            path = tokenizer_dir / fname
            path.write_text("\n".join(sub.vocab.id_to_token) + "\n", encoding="utf-8")
            written.append(path)
        cat_path = tokenizer_dir / "entity2id.json"
        cat_path.write_text(
            json.dumps(self.catalog.entity_to_id, sort_keys=True, indent=2), encoding="utf-8"
        )
        written.append(cat_path)
        return written

    @classmethod
    def load_assets(cls, tokenizer_dir: Path, sub_names: list[str]) -> "CompositeTokenizer":
        subs: dict[str, WordTokenizer] = {}
        for i, name in enumerate(sub_names):
            fname = "vocab.txt" if i == 0 else f"vocab.{name}.txt"
            lines = (tokenizer_dir / fname).read_text(encoding="utf-8").splitlines()
            subs[name] = WordTokenizer(Vocab({tok: i for i, tok in enumerate(lines)}))
        catalog = EntityCatalog(
            json.loads((tokenizer_dir / "entity2id.json").read_text(encoding="utf-8"))
        )
        return cls(subs, catalog)

    @classmethod
    def from_texts(
        cls, texts: Iterable[str], catalog: EntityCatalog, sub_name: str = "word"
    ) -> "CompositeTokenizer":
        return cls({sub_name: WordTokenizer(Vocab.build(texts))}, catalog)
