from __future__ import annotations

import json

import pytest

from apv.checker import SearchConfig, search
from apv.checker.projection import project_roles
from apv.checker.runtime import agent_atom
from apv.simkit import (
    ConfigError, NotReproduced, SecurityMonitor, Status, ViolationReproduced, compile_participant,
    compile_sessions, honest_run, monitor_check, run, simulate_atc,
)
from apv.terms import FunApp, inv
from apv.testgen import IntruderScript, Send, atc_to_intruder_script, trace_to_atc

# Protocols whose payload is readable in a passive honest run.
LEAKY = {"PlainSecret", "ChannelPlain", "ChannelAuthentic"}


@pytest.fixture(scope="module")
def nspk_atc(nspk_attack):
    return trace_to_atc(nspk_attack.trace)


def pairing(spec):
    roles = spec.roles
    return ({roles[0]: "a", roles[1]: "b"},)


class TestCompile:
    def test_processes_start_ready(self, nspk):
        procs = compile_sessions(nspk, ({"A": "a", "B": "b"},))
        assert [p.id for p in procs] == ["s1.A", "s1.B"]
        assert all(p.status is Status.READY and p.pc == 0 for p in procs)

    def test_seed_renames_fresh_values(self, nspk):
        script = project_roles(nspk)["A"]
        p0 = compile_participant(script, 1, {"A": "a", "B": "b"}, seed=0)
        p7 = compile_participant(script, 1, {"A": "a", "B": "b"}, seed=7)
        assert {str(v) for v in p0.bindings.values()} >= {"NA#s1"}
        assert {str(v) for v in p7.bindings.values()} >= {"NA#r7s1"}


class TestReplay:
    def test_reproduces_nspk(self, nspk, nspk_atc):
        rep = simulate_atc(nspk, nspk_atc)
        assert rep.verdict == ViolationReproduced(goal=0, step=15, kind="secret_learned")
        assert rep.reproduced

    @pytest.mark.parametrize("seed", [1, 2, 99])
    def test_seed_independent(self, nspk, nspk_atc, seed):
        rep = simulate_atc(nspk, nspk_atc, seed=seed)
        assert rep.reproduced
        assert "NB#r" in rep.log_lines()

    def test_same_seed_same_bytes(self, nspk, nspk_atc):
        assert simulate_atc(nspk, nspk_atc, seed=5).dumps() == simulate_atc(nspk, nspk_atc, seed=5).dumps()

    def test_log_format(self, nspk, nspk_atc):
        lines = simulate_atc(nspk, nspk_atc).log_lines().splitlines()
        assert lines[0] == "1|s1.A|send|{NA#s1,a}pk(i)"
        assert all(len(line.split("|")) == 4 for line in lines)
        assert "15|monitor|SecretLearned|NB#s2" in lines

    def test_report_json(self, nspk, nspk_atc):
        doc = json.loads(simulate_atc(nspk, nspk_atc).dumps())
        assert doc["verdict"] == "ViolationReproduced"
        assert doc["goal"] == "NB secret between A, B"
        assert doc["events"][0] == {"step": 1, "actor": "s1.A", "kind": "send", "term": "{NA#s1,a}pk(i)"}

    @pytest.mark.parametrize("name", ["PlainSecret", "KeyDistribution"])
    def test_reproduces_other_attacks(self, name, spec_of):
        spec = spec_of(name)
        tr = search(spec, SearchConfig()).trace
        rep = simulate_atc(spec, trace_to_atc(tr))
        assert rep.reproduced
        assert rep.verdict.goal == tr.goal


class TestNegativeReplay:
    def test_nspk_script_stalls_on_nsl(self, nsl, nspk_atc):
        rep = simulate_atc(nsl, nspk_atc)
        assert isinstance(rep.verdict, NotReproduced)
        assert rep.verdict.reason == "ScriptStalled"
        # b answered with its own name, so the intruder never sees the expected reply.
        assert rep.log_lines().splitlines()[-1] == "6|s2.B|send|{NA#s1,NB#s2,b}pk(a)"

    def test_step_budget(self, nspk, nspk_atc):
        rep = simulate_atc(nspk, nspk_atc, max_steps=3)
        assert rep.verdict == NotReproduced("StepBudgetExhausted", "")


class TestHonestRun:
    @pytest.mark.parametrize("name", [
        "NSPK", "NSL", "KeyDistribution", "KeyDistributionChallenge", "SignedChallenge",
        "ChannelConfidential", "ChannelSecure",
    ])
    def test_completes_clean(self, name, spec_of):
        spec = spec_of(name)
        rep = honest_run(spec, pairing(spec), agents=("a", "b"))
        assert rep.verdict == NotReproduced("RunCompletedClean", "")

    @pytest.mark.parametrize("name", sorted(LEAKY))
    def test_passive_leak_is_flagged(self, name, spec_of):
        spec = spec_of(name)
        rep = honest_run(spec, pairing(spec), agents=("a", "b"))
        assert rep.verdict == ViolationReproduced(goal=0, step=1, kind="secret_learned")


class TestRunApi:
    def test_unknown_instance_rejected(self, nspk):
        procs = compile_sessions(nspk, ({"A": "a", "B": "b"},))
        monitor = SecurityMonitor.for_spec(nspk, ("a", "b", "i"))
        script = IntruderScript((Send("s9.B", procs[0].script.steps[0].payload),))
        with pytest.raises(ConfigError):
            run(procs, script, monitor)

    def test_monitor_flags_learned_secret(self, nspk, nspk_attack):
        monitor = SecurityMonitor.for_spec(nspk, ("a", "b", "i"))
        secret_claims = [e for e in nspk_attack.trace.events if getattr(e, "kind", None) == "secret"]
        new = monitor_check(monitor, secret_claims, [secret_claims[-1].terms[0]])
        assert [v.kind for v in new] == ["secret_learned"]
        assert monitor_check(monitor) == []

    def test_directives_match_script(self, nspk_atc):
        assert len(atc_to_intruder_script(nspk_atc).directives) == 9


def test_monitor_starts_from_intruder_knowledge(nspk):
    monitor = SecurityMonitor.for_spec(nspk, ("a", "b", "i"))
    own_key = inv(FunApp("pk", (agent_atom("i"),)))
    assert own_key in monitor.kb.analyzed
    assert inv(FunApp("pk", (agent_atom("a"),))) not in monitor.kb.analyzed
