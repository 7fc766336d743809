from __future__ import annotations

import pytest
from hypothesis import given

from apv.terms import (
    Action, AsymEnc, Atom, ChannelMode, FunApp, InjAgreement, Inv, Pair, ProtocolSpec, Secrecy, Sort,
    SpecError, SymEnc, WeakAgreement, base_name, depth, format_term, inv, is_ground, lookup_sort, pair,
    substitute, subterms, term_sort, unpair, validate_spec,
)

from strategies import terms

NA, NB, A, B = Atom("NA"), Atom("NB"), Atom("A"), Atom("B")


def pk(x):
    return FunApp("pk", (x,))


class TestInv:
    def test_double_inverse_normalizes(self):
        assert inv(inv(pk(A))) == pk(A)

    def test_raw_nested_inv_rejected(self):
        with pytest.raises(ValueError):
            Inv(Inv(pk(A)))

    @given(terms(2))
    def test_involution(self, t):
        assert inv(inv(t)) == t


class TestPairing:
    def test_pair_is_right_nested(self):
        assert pair(A, B, NA) == Pair(A, Pair(B, NA))

    @given(terms(2), terms(2), terms(2))
    def test_unpair_inverts_pair_on_non_pairs(self, x, y, z):
        if not any(isinstance(t, Pair) for t in (x, y, z)):
            assert unpair(pair(x, y, z)) == [x, y, z]

    def test_empty_pair_rejected(self):
        with pytest.raises(ValueError):
            pair()


class TestFormatting:
    @pytest.mark.parametrize("term, text", [
        (AsymEnc(Pair(NA, A), pk(B)), "{NA,A}pk(B)"),
        (SymEnc(NA, FunApp("sk", (A, B))), "{NA}sk(A,B)"),
        (Pair(Pair(A, B), NA), "(A,B),NA"),
        (inv(pk(A)), "inv(pk(A))"),
        (FunApp("h", (Pair(NA, NB),)), "h((NA,NB))"),
    ])
    def test_surface_syntax(self, term, text):
        assert format_term(term) == text

    def test_goal_labels(self):
        assert str(Secrecy(NB, ("A", "B"))) == "NB secret between A, B"
        assert str(InjAgreement("B", "A", (NA, NB))) == "B injectively authenticates A on NA, NB"
        assert str(WeakAgreement("B", "A", (NA,))) == "B authenticates A on NA"


class TestStructure:
    def test_subterms_include_keys(self):
        t = AsymEnc(NA, pk(B))
        assert {NA, pk(B), B, t} <= subterms(t)

    def test_depth(self):
        assert depth(NA) == 1
        assert depth(AsymEnc(NA, pk(B))) == 3

    def test_substitute_only_touches_variables(self):
        x = Atom("X", Sort.NUMBER, var=True)
        t = Pair(x, NA)
        assert substitute(t, {x: NB, NA: NB}) == Pair(NB, NA)
        assert not is_ground(t)
        assert is_ground(substitute(t, {x: NB}))

    def test_instance_suffix_lookup(self):
        decls = {"NA": Sort.NUMBER}
        assert base_name("NA#s2") == "NA"
        assert lookup_sort("NA#s2", decls) is Sort.NUMBER

    def test_term_sort_of_key_function(self):
        decls = {"pk": Sort.PUBLIC_KEY, "A": Sort.AGENT}
        assert term_sort(pk(A), decls) is Sort.PUBLIC_KEY
        assert term_sort(inv(pk(A)), decls) is Sort.PRIVATE_KEY


class TestChannelMode:
    @pytest.mark.parametrize("mode, readable, injectable", [
        (ChannelMode.PLAIN, True, True),
        (ChannelMode.AUTHENTIC, True, False),
        (ChannelMode.CONFIDENTIAL, False, True),
        (ChannelMode.SECURE, False, False),
    ])
    def test_capabilities(self, mode, readable, injectable):
        assert mode.readable is readable
        assert mode.injectable is injectable
        assert ChannelMode.from_arrow(mode.value) is mode


class TestValidateSpec:
    @pytest.fixture
    def decls(self):
        return {"A": Sort.AGENT, "B": Sort.AGENT, "NA": Sort.NUMBER, "pk": Sort.PUBLIC_KEY}

    def _spec(self, decls, actions, goals=(), knowledge=None):
        knowledge = knowledge or {"A": (A, B), "B": (A, B)}
        return ProtocolSpec("T", decls, knowledge, tuple(actions), tuple(goals))

    def test_accepts_well_formed(self, decls):
        validate_spec(self._spec(decls, [Action("A", "B", ChannelMode.PLAIN, NA)], [Secrecy(NA, ("A", "B"))]))

    def test_rejects_self_send(self, decls):
        with pytest.raises(SpecError):
            validate_spec(self._spec(decls, [Action("A", "A", ChannelMode.PLAIN, NA)]))

    def test_rejects_inv_of_non_key(self, decls):
        with pytest.raises(SpecError, match="inv"):
            validate_spec(self._spec(decls, [Action("A", "B", ChannelMode.PLAIN, Inv(NA))]))

    def test_rejects_unused_agreement_term(self, decls):
        decls = dict(decls, NB=Sort.NUMBER)
        spec = self._spec(decls, [Action("A", "B", ChannelMode.PLAIN, NA)], [WeakAgreement("B", "A", (Atom("NB"),))])
        with pytest.raises(SpecError, match="appears in no action"):
            validate_spec(spec)

    def test_rejects_missing_knowledge(self, decls):
        with pytest.raises(SpecError, match="knowledge"):
            validate_spec(self._spec(decls, [Action("A", "B", ChannelMode.PLAIN, NA)], knowledge={"A": (A,)}))
