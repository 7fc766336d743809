from __future__ import annotations

from pathlib import Path

import pytest

from apv import corpus
from apv.anb import parse_protocol
from apv.exporters import (
    ExportFormat, UnsupportedConstruct, export_anb, export_atc_bundle, export_tamarin,
)
from apv.testgen import trace_to_atc

GOLDEN = Path(__file__).parent / "golden"


class TestAnbExport:
    @pytest.mark.parametrize("name", corpus.PROTOCOLS)
    def test_identity_under_reparse(self, name, spec_of):
        spec = spec_of(name)
        art = export_anb(spec)
        assert art.format is ExportFormat.ANB
        assert parse_protocol(art.text) == spec
        assert export_anb(parse_protocol(art.text)).text == art.text


class TestTamarinExport:
    @pytest.mark.parametrize("name", corpus.PROTOCOLS)
    def test_matches_golden(self, name, spec_of):
        text = export_tamarin(spec_of(name)).text
        assert text == (GOLDEN / f"{name}.spthy").read_text()

    def test_nspk_shape(self, nspk):
        text = export_tamarin(nspk).text
        role_rules = [line for line in text.splitlines() if line.startswith("rule ") and line[5] in "AB"]
        assert role_rules == ["rule A_1:", "rule A_2:", "rule A_3:", "rule B_1:", "rule B_2:", "rule B_3:"]
        assert text.count("\nlemma ") == 2
        assert "lemma secrecy_g0:" in text and "lemma injective_agreement_g1:" in text

    def test_weak_agreement_lemma(self, spec_of):
        text = export_tamarin(spec_of("SignedChallenge")).text
        assert "lemma agreement_g0:" in text and "injective" not in text

    def test_channel_warnings(self, spec_of):
        art = export_tamarin(spec_of("ChannelConfidential"))
        assert any("confidential" in w for w in art.warnings)
        assert "rule ConfCh_inject:" in art.text

    def test_no_goals_warns(self, nspk):
        art = export_tamarin(nspk.replace(goals=()))
        assert "no lemmas emitted" in " ".join(art.warnings)
        assert "lemma" not in art.text

    def test_refuses_non_executable(self):
        spec = parse_protocol(
            "Protocol: Bad\nTypes:\n    Agent A, B;\n    Number NA;\n    SymmetricKey sk;\n"
            "Knowledge:\n    A: A, B;\n    B: A, B, sk(A,B);\nActions:\n    A -> B: {NA}sk(A,B)\n"
        )
        with pytest.raises(UnsupportedConstruct):
            export_tamarin(spec)


def test_atc_bundle(nspk, nspk_attack):
    anb, atc = export_atc_bundle(nspk, trace_to_atc(nspk_attack.trace))
    assert anb.format is ExportFormat.ANB and atc.format is ExportFormat.ATC
    assert '"goal": "NB secret between A, B"' in atc.text
