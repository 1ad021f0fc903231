"""Text wire format exchanged between modules, and its parsed in-memory form.

Wire grammar::

    dialog := utt ("<sep>" utt)*
    utt    := ("User" | "System") ": " body
    body   := (plain | "<entity>" name "</entity>")*

``plain`` and ``name`` contain none of the three reserved tokens. There is
no escaping: input containing a reserved token where one is not allowed is
rejected, never rewritten.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

SEP = "<sep>"
ENTITY_OPEN = "<entity>"
ENTITY_CLOSE = "</entity>"
RESERVED_TOKENS = (SEP, ENTITY_OPEN, ENTITY_CLOSE)


class ProtocolError(ValueError):
    """Base error for wire-format violations."""


class EmptyDialogError(ProtocolError):
    pass


class BadRoleError(ProtocolError):
    pass


class UnbalancedEntityTagError(ProtocolError):
    pass


class NestedEntityTagError(ProtocolError):
    pass


class EmptyEntityNameError(ProtocolError):
    pass


class Role(str, Enum):
    USER = "User"
    SYSTEM = "System"


@dataclass(frozen=True)
class EntitySpan:
    """A marked entity mention inside one utterance.

    ``surface`` always equals ``text[start:end]`` of the owning utterance.
    ``entity_id`` is derived annotation (catalog lookup), not protocol
    content, so it is excluded from equality: the wire format carries no ids
    and round-tripping must not depend on them.
    """

    surface: str
    start: int
    end: int
    entity_id: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ProtocolError(f"bad span offsets [{self.start}, {self.end})")
        if self.entity_id is not None and self.entity_id < 0:
            raise ProtocolError(f"negative entity_id {self.entity_id}")


@dataclass(frozen=True)
class Utterance:
    role: Role
    text: str
    spans: tuple[EntitySpan, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(self.spans))
        for token in RESERVED_TOKENS:
            if token in self.text:
                raise ProtocolError(f"reserved token {token!r} in utterance text")
        prev_end = 0
        for span in self.spans:
            if span.start < prev_end:
                raise ProtocolError("spans overlap or are unsorted")
            if span.end > len(self.text):
                raise ProtocolError("span exceeds utterance text")
            if self.text[span.start : span.end] != span.surface:
                raise ProtocolError(
                    f"span surface {span.surface!r} does not match text slice"
                )
            prev_end = span.end

    def mentions(self) -> tuple[str, ...]:
        return tuple(s.surface for s in self.spans)


@dataclass(frozen=True)
class Dialog:
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.utterances:
            raise EmptyDialogError("dialog must contain at least one utterance")

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def last(self) -> Utterance:
        return self.utterances[-1]


def _parse_utterance(chunk: str) -> Utterance:
    for role in Role:
        prefix = role.value + ": "
        if chunk.startswith(prefix):
            body = chunk[len(prefix) :]
            break
    else:
        raise BadRoleError(f"utterance must start with 'User: ' or 'System: ': {chunk[:40]!r}")

    parts: list[str] = []
    spans: list[EntitySpan] = []
    clean_len = 0
    pos = 0
    while pos < len(body):
        next_open = body.find(ENTITY_OPEN, pos)
        next_close = body.find(ENTITY_CLOSE, pos)
        if next_close != -1 and (next_open == -1 or next_close < next_open):
            raise UnbalancedEntityTagError("closing tag without matching opening tag")
        if next_open == -1:
            parts.append(body[pos:])
            clean_len += len(body) - pos
            break
        parts.append(body[pos:next_open])
        clean_len += next_open - pos
        pos = next_open + len(ENTITY_OPEN)
        end_of_name = body.find(ENTITY_CLOSE, pos)
        inner_open = body.find(ENTITY_OPEN, pos)
        if inner_open != -1 and (end_of_name == -1 or inner_open < end_of_name):
            raise NestedEntityTagError("entity tags may not nest")
        if end_of_name == -1:
            raise UnbalancedEntityTagError("opening tag is never closed")
        name = body[pos:end_of_name]
        if not name:
            raise EmptyEntityNameError("entity tags must enclose a non-empty name")
        parts.append(name)
        spans.append(EntitySpan(surface=name, start=clean_len, end=clean_len + len(name)))
        clean_len += len(name)
        pos = end_of_name + len(ENTITY_CLOSE)
    return Utterance(role=role, text="".join(parts), spans=tuple(spans))


def parse_dialog(wire: str) -> Dialog:
    """Parse the wire encoding of a dialog.

    Raises :class:`EmptyDialogError` for empty or whitespace-only input,
    :class:`BadRoleError`, :class:`UnbalancedEntityTagError` or
    :class:`NestedEntityTagError` for malformed utterances.
    """
    if not wire or not wire.strip():
        raise EmptyDialogError("empty wire input")
    return Dialog(tuple(_parse_utterance(chunk) for chunk in wire.split(SEP)))


def render_body(text: str, spans: tuple[EntitySpan, ...] | list[EntitySpan]) -> str:
    """Clean text with each span's slice wrapped in entity tags."""
    parts: list[str] = []
    cursor = 0
    for span in spans:
        parts.append(text[cursor : span.start])
        parts.append(ENTITY_OPEN)
        parts.append(span.surface)
        parts.append(ENTITY_CLOSE)
        cursor = span.end
    parts.append(text[cursor:])
    return "".join(parts)


def render_utterance(u: Utterance) -> str:
    return u.role.value + ": " + render_body(u.text, u.spans)


def render_dialog(d: Dialog) -> str:
    """Inverse of :func:`parse_dialog`: ``parse_dialog(render_dialog(d)) == d``."""
    return SEP.join(render_utterance(u) for u in d.utterances)


def append_utterance(d: Dialog, u: Utterance) -> Dialog:
    """Return a new dialog with ``u`` appended; ``d`` is unchanged."""
    return Dialog(d.utterances + (u,))
