from __future__ import annotations

import json

import pytest

from apv import corpus
from apv.anb import parse_protocol, pretty_print
from apv.diagnostics import DiagnosticError
from apv.hlmodel import (
    GrammarWarning, load_grammar, load_hl_model, match_payload, normalize_stereotype, parse_payload, to_anb,
)
from apv.terms import Action, Sort


@pytest.fixture(scope="module")
def grammar():
    return load_grammar(corpus.read("nspk-payloads.grammar.json"))


@pytest.fixture(scope="module")
def alt_grammar():
    return load_grammar(corpus.read("nspk-payloads-alt.grammar.json"))


@pytest.fixture
def model_doc() -> dict:
    return json.loads(corpus.read("NSPK.hl.json"))


def lower(doc, g):
    return to_anb(load_hl_model(doc), {g.name: g})


class TestStereotypes:
    @pytest.mark.parametrize("raw", ["«transaction»", "<<transaction>>", "transaction", " «transaction» "])
    def test_normalized(self, raw):
        assert normalize_stereotype(raw) == "transaction"


class TestLoadModel:
    def test_nspk_model(self):
        m = load_hl_model(corpus.read("NSPK.hl.json"))
        assert [p.name for p in m.principals] == ["A", "B"]
        assert len(m.interactions) == 3
        assert m.interactions[0].payload == "HELLO NA FROM A SEAL B"
        assert m.default_grammar == "nspk-payloads"

    def test_bad_json(self):
        with pytest.raises(DiagnosticError) as info:
            load_hl_model("{not json")
        assert info.value.codes == ["bad-json"]

    @pytest.mark.parametrize("mutate, code", [
        (lambda d: d.pop("principals"), "schema-error"),
        (lambda d: d["interactions"][0].__setitem__("stereotype", "«teleport»"), "unknown-stereotype"),
        (lambda d: d["interactions"][0].__setitem__("to", "Z"), "dangling-principal"),
        (lambda d: d["principals"].append(dict(d["principals"][0])), "duplicate-principal"),
    ])
    def test_model_errors(self, model_doc, grammar, mutate, code):
        mutate(model_doc)
        with pytest.raises(DiagnosticError) as info:
            lower(model_doc, grammar)
        assert code in info.value.codes


class TestGrammar:
    def test_match(self, grammar):
        m = match_payload(grammar, "HELLO NA FROM A SEAL B")
        assert m.production.label == "hello"
        assert m.captures["n"] == ("NA", Sort.NUMBER)

    def test_parse_payload(self, grammar):
        decls = {"NA": Sort.NUMBER, "A": Sort.AGENT, "B": Sort.AGENT, "pk": Sort.PUBLIC_KEY}
        assert str(parse_payload(grammar, "HELLO NA FROM A SEAL B", decls)) == "{NA,A}pk(B)"

    def test_no_match(self, grammar):
        with pytest.raises(DiagnosticError) as info:
            match_payload(grammar, "GOODBYE")
        assert info.value.codes == ["no-production-matches"]

    def test_ambiguity_error_and_first(self):
        doc = json.loads(corpus.read("nspk-payloads.grammar.json"))
        doc["productions"].append({"label": "confirm2", "sequence": ["\"CONFIRM\"", "n:Nonce", "\"SEAL\"", "b:Principal"]})
        doc["templates"]["confirm2"] = "{$n}pk($b)"
        with pytest.raises(DiagnosticError) as info:
            match_payload(load_grammar(doc), "CONFIRM NB SEAL B")
        assert info.value.codes == ["ambiguous-match"]
        doc["ambiguity"] = "first"
        assert match_payload(load_grammar(doc), "CONFIRM NB SEAL B").production.label == "confirm"

    def test_overlapping_token_classes_warn(self):
        doc = json.loads(corpus.read("nspk-payloads.grammar.json"))
        doc["tokens"].append({"name": "Anything", "sort": "Number", "regex": "[A-Z]+"})
        with pytest.warns(GrammarWarning, match="several classes"):
            match_payload(load_grammar(doc), "CONFIRM NB SEAL B")

    @pytest.mark.parametrize("mutate, code", [
        (lambda d: d["tokens"][0].__setitem__("regex", "N[A-Z"), "bad-regex"),
        (lambda d: d["templates"].pop("hello"), "missing-template"),
        (lambda d: d["tokens"][0].__setitem__("sort", "Widget"), "schema-error"),
    ])
    def test_grammar_errors(self, mutate, code):
        doc = json.loads(corpus.read("nspk-payloads.grammar.json"))
        mutate(doc)
        with pytest.raises(DiagnosticError) as info:
            load_grammar(doc)
        assert code in info.value.codes

    def test_unknown_grammar(self, model_doc, grammar):
        model_doc["default_grammar"] = "nope"
        with pytest.raises(DiagnosticError) as info:
            lower(model_doc, grammar)
        assert "unknown-grammar" in info.value.codes


class TestLowering:
    def test_matches_hand_written_nspk(self, model_doc, grammar, nspk):
        assert lower(model_doc, grammar) == nspk

    def test_grammar_swap_changes_only_payloads(self, model_doc, grammar, alt_grammar):
        base = lower(model_doc, grammar)
        swapped = lower(model_doc, alt_grammar)
        assert swapped.declarations == base.declarations
        assert swapped.knowledge == base.knowledge
        assert swapped.goals == base.goals
        assert len(swapped.actions) == len(base.actions)
        for old, new in zip(base.actions, swapped.actions):
            assert (old.sender, old.receiver, old.mode) == (new.sender, new.receiver, new.mode)
        assert [a.payload for a in swapped.actions] != [a.payload for a in base.actions]

    def test_alt_payloads(self, model_doc, alt_grammar):
        swapped = lower(model_doc, alt_grammar)
        assert [str(a.payload) for a in swapped.actions] == ["{A,NA}pk(B)", "{NB,NA,A}pk(A)", "{NB,B}pk(B)"]

    def test_channel_tag(self, model_doc, grammar):
        model_doc["interactions"][0]["tagged_values"]["channel"] = "*->*"
        spec = lower(model_doc, grammar)
        assert spec.actions[0].mode.value == "*->*"

    def test_bad_channel(self, model_doc, grammar):
        model_doc["interactions"][0]["tagged_values"]["channel"] = "~>"
        with pytest.raises(DiagnosticError) as info:
            lower(model_doc, grammar)
        assert "bad-channel" in info.value.codes

    def test_goal_on_missing_term(self, model_doc, grammar):
        model_doc["constraints"][0]["arguments"]["term"] = "NQ"
        with pytest.raises(DiagnosticError) as info:
            lower(model_doc, grammar)
        assert "goal-lowering" in info.value.codes

    def test_output_reparses(self, model_doc, grammar):
        spec = lower(model_doc, grammar)
        assert parse_protocol(pretty_print(spec)) == spec
        assert all(isinstance(a, Action) for a in spec.actions)
