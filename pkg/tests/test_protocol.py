import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.protocol import (
    BadRoleError,
    Dialog,
    EmptyDialogError,
    EmptyEntityNameError,
    EntitySpan,
    NestedEntityTagError,
    ProtocolError,
    RESERVED_TOKENS,
    Role,
    UnbalancedEntityTagError,
    Utterance,
    append_utterance,
    parse_dialog,
    render_dialog,
)

from .conftest import PAPER_CONTEXT
from .dialoggen import random_dialog
from .strategies import dialogs


class TestParse:
    def test_three_turn_context(self):
        d = parse_dialog(PAPER_CONTEXT)
        assert [u.role for u in d.utterances] == [Role.USER, Role.SYSTEM, Role.USER]
        surfaces = [s.surface for u in d.utterances for s in u.spans]
        assert surfaces == ["Forever My Girl (2018)", "Billy Madison (1995)"]
        assert d.utterances[0].text == "Hello!"

    def test_single_plain_turn(self):
        d = parse_dialog("User: Hello!")
        assert len(d) == 1
        assert d.last.role is Role.USER
        assert d.last.text == "Hello!"
        assert d.last.spans == ()

    @pytest.mark.parametrize("wire", ["", "   ", "\n\t"])
    def test_empty_input(self, wire):
        with pytest.raises(EmptyDialogError):
            parse_dialog(wire)

    @pytest.mark.parametrize(
        "wire",
        ["user: hi", "Assistant: hi", "User:hi", "Hello!", "User : hi", "<sep>User: hi"],
    )
    def test_bad_role(self, wire):
        with pytest.raises(BadRoleError):
            parse_dialog(wire)

    def test_trailing_separator_is_bad_role(self):
        with pytest.raises(BadRoleError):
            parse_dialog("User: hi<sep>")

    @pytest.mark.parametrize(
        "wire",
        [
            "User: I like </entity>Up (2009)",
            "User: I like <entity>Up (2009)",
            "User: odd </entity> here",
        ],
    )
    def test_unbalanced_tags(self, wire):
        with pytest.raises(UnbalancedEntityTagError):
            parse_dialog(wire)

    def test_nested_tags(self):
        with pytest.raises(NestedEntityTagError):
            parse_dialog("User: <entity>a <entity>b</entity></entity>")

    def test_empty_entity_name(self):
        with pytest.raises(EmptyEntityNameError):
            parse_dialog("User: odd <entity></entity> here")

    def test_empty_body_is_fine(self):
        d = parse_dialog("User: ")
        assert d.last.text == ""

    def test_adjacent_entities(self):
        d = parse_dialog("User: <entity>Up (2009)</entity><entity>Heat (1995)</entity>")
        assert [s.surface for s in d.last.spans] == ["Up (2009)", "Heat (1995)"]
        assert d.last.text == "Up (2009)Heat (1995)"

    def test_partial_tag_lookalikes_are_plain_text(self):
        d = parse_dialog("User: a <entity b </entity c <sep")
        assert d.last.text == "a <entity b </entity c <sep"
        assert d.last.spans == ()


class TestRender:
    def test_plain(self):
        d = Dialog((Utterance(role=Role.USER, text="Hello!"),))
        assert render_dialog(d) == "User: Hello!"

    def test_hand_applied_wrapping(self):
        # "I like Up (2009)": span covers offsets 7..16
        u = Utterance(
            role=Role.USER,
            text="I like Up (2009)",
            spans=(EntitySpan(surface="Up (2009)", start=7, end=16),),
        )
        assert render_dialog(Dialog((u,))) == "User: I like <entity>Up (2009)</entity>"

    def test_paper_context_round_trip(self):
        assert render_dialog(parse_dialog(PAPER_CONTEXT)) == PAPER_CONTEXT


class TestInvariants:
    def test_reserved_tokens_rejected_in_text(self):
        for token in RESERVED_TOKENS:
            with pytest.raises(ProtocolError):
                Utterance(role=Role.USER, text=f"a {token} b")

    def test_span_must_match_slice(self):
        with pytest.raises(ProtocolError):
            Utterance(
                role=Role.USER,
                text="I like Up (2009)",
                spans=(EntitySpan(surface="Heat", start=0, end=4),),
            )

    def test_overlapping_spans_rejected(self):
        with pytest.raises(ProtocolError):
            Utterance(
                role=Role.USER,
                text="abcdef",
                spans=(
                    EntitySpan(surface="abcd", start=0, end=4),
                    EntitySpan(surface="cde", start=2, end=5),
                ),
            )

    def test_empty_dialog_rejected(self):
        with pytest.raises(EmptyDialogError):
            Dialog(())

    @given(dialogs())
    @settings(max_examples=200)
    def test_parse_render_round_trip(self, d):
        assert parse_dialog(render_dialog(d)) == d

    @given(dialogs())
    @settings(max_examples=200)
    def test_canonical_wire_round_trip(self, d):
        wire = render_dialog(d)
        assert render_dialog(parse_dialog(wire)) == wire

    @given(dialogs())
    @settings(max_examples=100)
    def test_no_reserved_tokens_after_parse(self, d):
        reparsed = parse_dialog(render_dialog(d))
        for u in reparsed.utterances:
            for token in RESERVED_TOKENS:
                assert token not in u.text

    def test_seeded_generator_round_trip(self):
        rng = random.Random(123)
        for _ in range(200):
            d = random_dialog(rng)
            assert parse_dialog(render_dialog(d)) == d


class TestAppend:
    def test_append_grows_by_one(self):
        d = parse_dialog("User: Hello!")
        u = Utterance(role=Role.SYSTEM, text="Hi there")
        d2 = append_utterance(d, u)
        assert len(d2) == 2
        assert d2.last == u
        assert len(d) == 1  # original unchanged

    @given(dialogs(), st.sampled_from(list(Role)))
    @settings(max_examples=100)
    def test_append_length_property(self, d, role):
        u = Utterance(role=role, text="extra turn")
        d2 = append_utterance(d, u)
        assert len(d2) == len(d) + 1
        assert d2.utterances[:-1] == d.utterances
