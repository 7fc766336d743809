from __future__ import annotations

import pytest

from apv import corpus
from apv.anb import parse_protocol
from apv.checker import (
    CommitEvent, NotExecutableSpec, ReceiveStep, RunningEvent, SearchBudgetExceeded, SearchConfig,
    SecretClaim, SendStep, executability_check, project_roles, role_assignments, search,
)
from apv.checker.runtime import Typing, agent_atom, match
from apv.terms import Atom, Pair, Sort

# Outcomes at two sessions with agents {a, b, i}, reasoned out by hand:
#   NSPK        Lowe's man-in-the-middle needs two sessions.
#   NSL         the responder's name in message 2 blocks the relay.
#   PlainSecret the secret travels in clear.
#   KeyDistribution  nothing binds the key message to a run, so it replays.
#   KeyDistributionChallenge  the challenge NO binds it.
#   SignedChallenge  every signed message names its peer.
#   Channel*    see TestChannelSemantics.
EXPECTED = {
    "NSPK": ("NB secret between A, B", {"secret_learned", "commit_without_running"}),
    "NSL": None,
    "PlainSecret": ("NA secret between A, B", {"secret_learned"}),
    "KeyDistribution": ("O injectively authenticates K on KS", {"duplicate_commit"}),
    "KeyDistributionChallenge": None,
    "SignedChallenge": None,
    "ChannelPlain": ("NA secret between A, B", {"secret_learned"}),
    "ChannelAuthentic": ("NA secret between A, B", {"secret_learned"}),
    "ChannelConfidential": ("NA secret between A, B", {"secret_learned", "commit_without_running"}),
    "ChannelSecure": None,
}


def result_for(spec, **kw):
    return search(spec, SearchConfig(**kw))


class TestProjection:
    def test_nspk_initiator(self, nspk):
        a = project_roles(nspk)["A"]
        assert [type(s) for s in a.steps] == [SendStep, ReceiveStep, SendStep]
        assert [f.name for f in a.fresh] == ["NA"]
        assert all(p.var for p in a.params)
        (ev,) = a.running[2]
        assert isinstance(ev, RunningEvent) and ev.goal == 1

    def test_nspk_responder(self, nspk):
        b = project_roles(nspk)["B"]
        assert [type(s) for s in b.steps] == [ReceiveStep, SendStep, ReceiveStep]
        assert [f.name for f in b.fresh] == ["NB"]
        kinds = [type(e) for e in b.completion]
        assert kinds == [SecretClaim, CommitEvent]

    def test_responder_learns_initiator_name_from_message(self, nspk):
        b = project_roles(nspk)["B"]
        assert [p.name for p in b.params] == ["B"]


class TestExecutability:
    SRC = """Protocol: Bad
Types:
    Agent A, B;
    Number NA;
    SymmetricKey sk;
Knowledge:
    A: A, B;
    B: A, B, sk(A,B);
Actions:
    A -> B: {NA}sk(A,B)
"""

    def test_corpus_is_executable(self, spec_of):
        for name in corpus.PROTOCOLS:
            assert executability_check(spec_of(name)) == [], name

    def test_missing_key_reported(self):
        (problem,) = executability_check(parse_protocol(self.SRC))
        assert (problem.role, problem.step) == ("A", 1)
        assert "sk" in str(problem.missing)

    def test_search_refuses_non_executable(self):
        with pytest.raises(NotExecutableSpec):
            search(parse_protocol(self.SRC))


class TestMatching:
    def test_typed_match_refuses_wrong_sort(self, nspk):
        typing = Typing(nspk)
        x = Atom("X", Sort.NUMBER, var=True)
        na, a = Atom("NA#s1", Sort.NUMBER), agent_atom("a")
        assert match(Pair(x, a), Pair(na, a), {}, typing) == {x: na}
        assert match(x, a, {}, typing) is None

    def test_bound_variable_must_agree(self, nspk):
        typing = Typing(nspk)
        x = Atom("X", Sort.NUMBER, var=True)
        na, nb = Atom("NA#s1", Sort.NUMBER), Atom("NB#s2", Sort.NUMBER)
        assert match(Pair(x, x), Pair(na, nb), {}, typing) is None
        assert match(Pair(x, x), Pair(na, na), {}, typing) == {x: na}


class TestSearchConfig:
    def test_session_guard(self):
        with pytest.raises(ValueError, match="allow_large"):
            SearchConfig(max_sessions=4)
        SearchConfig(max_sessions=4, allow_large=True)

    @pytest.mark.parametrize("kw", [{"max_sessions": 0}, {"agents": ()}, {"agents": ("a", "a")}, {"max_states": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SearchConfig(**kw)

    def test_no_self_sessions_by_default(self, nspk):
        scripts = project_roles(nspk)
        combos = role_assignments(nspk, scripts, SearchConfig(max_sessions=1))
        assert all(m["A"] != m["B"] for combo in combos for m in combo)
        wide = role_assignments(nspk, scripts, SearchConfig(max_sessions=1, allow_self_sessions=True))
        assert len(wide) > len(combos)


class TestCorpusOutcomes:
    @pytest.mark.parametrize("name", corpus.PROTOCOLS)
    def test_two_sessions(self, name, spec_of):
        res = result_for(spec_of(name))
        expected = EXPECTED[name]
        if expected is None:
            assert not res.is_attack
            assert res.stats.states > 0
        else:
            label, kinds = expected
            assert res.is_attack
            assert res.trace.goal_label == label
            assert {k for _, k in res.trace.violations} == kinds

    def test_nspk_needs_two_sessions(self, nspk):
        assert not result_for(nspk, max_sessions=1).is_attack

    def test_replay_needs_two_sessions(self, spec_of):
        assert not result_for(spec_of("KeyDistribution"), max_sessions=1).is_attack

    @pytest.mark.parametrize("name", corpus.PROTOCOLS)
    def test_bounds_are_monotone(self, name, spec_of):
        spec = spec_of(name)
        if result_for(spec, max_sessions=1).is_attack:
            assert result_for(spec, max_sessions=2).is_attack

    def test_budget_exhaustion(self, nsl):
        with pytest.raises(SearchBudgetExceeded) as info:
            result_for(nsl, max_states=50)
        assert info.value.states > 50

    def test_deterministic(self, nspk):
        assert result_for(nspk).trace == result_for(nspk).trace


class TestHonestRuns:
    @pytest.mark.parametrize("name", corpus.PROTOCOLS)
    def test_every_protocol_completes(self, name, spec_of):
        res = result_for(spec_of(name), agents=("a", "b"), collect=True)
        assert res.exploration.all_completed


@pytest.fixture(scope="module")
def explore(spec_of):
    def run(name):
        return search(spec_of(name), SearchConfig(agents=("a", "b"), collect=True)).exploration
    return run


class TestChannelSemantics:
    """One single-action protocol per channel mode, agents {a, b}."""

    @staticmethod
    def payloads(exploration):
        # Honest nonces are NA#s<k>; the intruder's own is NA#i.
        return {t for t in exploration.intruder_terms if isinstance(t, Atom) and t.name.startswith("NA#s")}

    def test_secure(self, explore):
        ex = explore("ChannelSecure")
        assert not self.payloads(ex)
        assert not ex.injections
        assert ex.network_deliveries

    def test_confidential(self, explore):
        ex = explore("ChannelConfidential")
        assert not self.payloads(ex)
        assert ex.injections
        assert all(iid.endswith(".B") for iid, _ in ex.injections)

    def test_authentic(self, explore):
        ex = explore("ChannelAuthentic")
        assert self.payloads(ex)
        assert not ex.injections
        assert {t for _, t in ex.network_deliveries} <= ex.genuine_sends

    def test_plain(self, explore):
        ex = explore("ChannelPlain")
        assert self.payloads(ex)
        assert ex.injections
