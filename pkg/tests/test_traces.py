from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apv.checker import (
    Claim, IntruderDeliver, SearchConfig, SessionSend, search, verify_trace,
)
from apv.checker.runtime import intruder_knowledge
from apv.intruder import Derivation, add_fact, can_derive, knowledge_base
from apv.terms import Atom, format_term

from oracles import brute_force_derivable, lowe_attack, lowe_initial_knowledge


class TestLoweOracle:
    """The hand-derived attack, checked step by step through the intruder model."""

    def test_hand_trace_is_feasible(self):
        na, nb = Atom("NA1"), Atom("NB2")
        kb = knowledge_base(lowe_initial_knowledge())
        for actor, msg in lowe_attack(na, nb):
            if actor == "intruder":
                assert can_derive(kb, msg) is not None, format_term(msg)
            else:
                kb = add_fact(kb, msg)
        assert nb in kb.analyzed

    def test_nb_is_not_leaked_without_the_relay(self):
        # Without a's help, b's reply stays sealed for a.
        na, nb = Atom("NA1"), Atom("NB2")
        reply = lowe_attack(na, nb)[2][1]
        kb = knowledge_base(lowe_initial_knowledge() + [reply])
        assert can_derive(kb, nb) is None

    def test_checker_finds_the_same_trace(self, nspk_attack):
        tr = nspk_attack.trace
        assert tr.sessions == ({"A": "a", "B": "i"}, {"A": "i", "B": "b"})
        steps = []
        for ev in tr.events:
            if isinstance(ev, SessionSend):
                steps.append((ev.instance, str(ev.term)))
            elif isinstance(ev, IntruderDeliver):
                steps.append(("intruder", str(ev.term)))
        expected = [
            ("intruder" if actor == "intruder" else {"a": "s1.A", "b": "s2.B"}[actor], format_term(msg))
            for actor, msg in lowe_attack(Atom("NA#s1"), Atom("NB#s2"))
        ]
        assert steps == expected


class TestVerifyTrace:
    def test_accepts_checker_output(self, nspk, nspk_attack):
        assert verify_trace(nspk, nspk_attack.trace).ok

    def test_secrecy_witness_is_a_derivation(self, nspk_attack):
        w = nspk_attack.trace.witness
        assert isinstance(w, Derivation)
        assert str(w.conclusion) == "NB#s2"

    def test_rejects_underivable_injection(self, nspk, nspk_attack):
        tr = nspk_attack.trace
        events = list(tr.events)
        # Deliver NB to b before the intruder could know it.
        events[1] = replace(events[1], term=events[7].term)
        verdict = verify_trace(nspk, replace(tr, events=tuple(events)))
        assert not verdict.ok
        assert "underivable injection" in verdict.reason

    def test_rejects_forged_witness(self, nspk, nspk_attack):
        tr = nspk_attack.trace
        bad = Derivation("Known", Atom("NA#s1"))
        verdict = verify_trace(nspk, replace(tr, witness=bad))
        assert not verdict.ok

    def test_rejects_wrong_goal(self, nsl, nspk, nspk_attack):
        verdict = verify_trace(nsl, nspk_attack.trace)
        assert not verdict.ok

    def test_rejects_truncated_trace(self, nspk, nspk_attack):
        tr = nspk_attack.trace
        verdict = verify_trace(nspk, replace(tr, events=tr.events[:5]))
        assert not verdict.ok

    @pytest.mark.parametrize("name", ["PlainSecret", "KeyDistribution", "ChannelConfidential"])
    def test_accepts_other_attacks(self, name, spec_of):
        spec = spec_of(name)
        assert verify_trace(spec, search(spec, SearchConfig()).trace).ok


class TestVerifierSoundness:
    """Any mutated trace the verifier accepts must really be an attack."""

    @staticmethod
    def independently_feasible(spec, trace) -> bool:
        facts = list(intruder_knowledge(spec, trace.agents))
        for ev in trace.events:
            if isinstance(ev, IntruderDeliver):
                if ev.term not in brute_force_derivable(facts, [ev.term]):
                    return False
            elif isinstance(ev, SessionSend) and (ev.mode.readable or ev.receiver == "i"):
                facts.append(ev.term)
        if isinstance(trace.witness, Derivation):
            secret = trace.witness.conclusion
            return secret in brute_force_derivable(facts, [secret])
        return any(isinstance(e, Claim) and e.kind == "commit" for e in trace.events)

    @settings(max_examples=150, deadline=None)
    @given(data=st.data())
    def test_mutations(self, nspk, nspk_attack, data):
        tr = nspk_attack.trace
        events = list(tr.events)
        pool = sorted({e.term for e in events if not isinstance(e, Claim)}, key=str)
        op = data.draw(st.sampled_from(["drop", "dup", "swap", "retarget"]))
        k = data.draw(st.integers(0, len(events) - 1))
        if op == "drop":
            del events[k]
        elif op == "dup":
            events.insert(k, events[k])
        elif op == "swap" and k + 1 < len(events):
            events[k], events[k + 1] = events[k + 1], events[k]
        elif op == "retarget" and isinstance(events[k], IntruderDeliver):
            events[k] = replace(events[k], term=data.draw(st.sampled_from(pool)))
        mutated = replace(tr, events=tuple(events))
        if verify_trace(nspk, mutated).ok:
            assert self.independently_feasible(nspk, mutated)
