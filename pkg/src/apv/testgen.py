"""From attack traces to Abstract Test Cases and intruder scripts.

Terms are stored as strings in AnB surface syntax and read back with
``parse_term`` against the protocol's declarations plus the agent names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib.resources import files
from typing import Mapping, Optional, Union

import jsonschema

from .anb import parse_term
from .checker.runtime import Claim, ground_decls
from .checker.traces import AttackTrace, IntruderDeliver, NetworkDeliver, Replay, SessionSend
from .diagnostics import DiagnosticError, SourceSpan, error
from .intruder import Derivation, can_derive
from .terms import ChannelMode, ProtocolSpec, Term, format_term

# --------------------------------------------------------------------------
# Abstract Test Case


@dataclass(frozen=True)
class ExpectSend:
    instance: str
    term: Term
    mode: ChannelMode = ChannelMode.PLAIN
    kind = "expect_send"


@dataclass(frozen=True)
class Observe:
    term: Term
    kind = "observe"


@dataclass(frozen=True)
class Inject:
    instance: str
    term: Term
    kind = "inject"


@dataclass(frozen=True)
class Deliver:
    """Forward a genuine message on a protected channel (no forging involved)."""

    instance: str
    term: Term
    source: str
    kind = "deliver"


Step = Union[ExpectSend, Observe, Inject, Deliver]


@dataclass(frozen=True)
class SecretLearned:
    term: Term
    kind = "SecretLearned"


@dataclass(frozen=True)
class CommitWithoutRunning:
    claimer: str
    peer: str
    terms: tuple[Term, ...]
    kind = "CommitWithoutRunning"


@dataclass(frozen=True)
class DuplicateCommit:
    claimer: str
    peer: str
    terms: tuple[Term, ...]
    kind = "DuplicateCommit"


Assertion = Union[SecretLearned, CommitWithoutRunning, DuplicateCommit]

_ASSERT_BY_VIOLATION = {
    "secret_learned": SecretLearned,
    "commit_without_running": CommitWithoutRunning,
    "duplicate_commit": DuplicateCommit,
}


@dataclass(frozen=True)
class AbstractTestCase:
    protocol: str
    goal: str
    sessions: tuple[Mapping[str, str], ...]
    agents: tuple[str, ...]
    steps: tuple[Step, ...]
    assertion: Assertion

    def instances(self) -> set[str]:
        return {s.instance for s in self.steps if hasattr(s, "instance")}


def trace_to_atc(trace: AttackTrace) -> AbstractTestCase:
    steps: list[Step] = []
    for ev in trace.events:
        if isinstance(ev, SessionSend):
            steps.append(ExpectSend(ev.instance, ev.term, ev.mode))
            if ev.mode.readable or ev.receiver in ("i", None):
                steps.append(Observe(ev.term))
        elif isinstance(ev, IntruderDeliver):
            steps.append(Inject(ev.instance, ev.term))
        elif isinstance(ev, NetworkDeliver):
            steps.append(Deliver(ev.instance, ev.term, ev.source))
    return AbstractTestCase(trace.protocol, trace.goal_label, tuple(dict(s) for s in trace.sessions),
                            tuple(trace.agents), tuple(steps), _assertion(trace))


def _assertion(trace: AttackTrace) -> Assertion:
    w = trace.witness
    if isinstance(w, Derivation):
        return SecretLearned(w.conclusion)
    kind = next((k for g, k in trace.violations if g == trace.goal), "commit_without_running")
    return _ASSERT_BY_VIOLATION[kind](w.agent, w.peer, w.terms)


def atc_to_trace(spec: ProtocolSpec, atc: AbstractTestCase) -> AttackTrace:
    """Rebuild a full attack trace by replaying the ATC against the role scripts.

    Raises ValueError when a step cannot be replayed.
    """
    goal = spec.goals.index(spec.find_goal(atc.goal))
    rp = Replay.start(spec, atc.sessions, atc.agents)
    events: list = []
    for k, st in enumerate(atc.steps, 1):
        if isinstance(st, Observe):
            continue
        if isinstance(st, ExpectSend):
            if rp.expected_send(st.instance) != st.term:
                raise ValueError(f"step {k}: {st.instance} does not send {format_term(st.term)}")
            sent, claims = rp.do_send(st.instance)
            events += [sent, *claims]
            continue
        source = st.source if isinstance(st, Deliver) else None
        b = rp.accepts(st.instance, st.term, source)
        if b is None:
            raise ValueError(f"step {k}: {st.instance} refuses {format_term(st.term)}")
        events.append(IntruderDeliver(st.instance, st.term) if source is None
                      else NetworkDeliver(st.instance, st.term, source))
        events += rp.do_receive(st.instance, b)
    viol = rp.violations()
    hits = [v for v in viol if v.goal == goal and _asserts(atc.assertion, v.claim, v.kind)]
    if not hits:
        raise ValueError("replayed steps do not violate the asserted goal")
    v = hits[0]
    witness: Union[Derivation, Claim, None]
    witness = can_derive(rp.kb, v.claim.terms[0]) if v.kind == "secret_learned" else v.claim
    return AttackTrace(spec.name, goal, atc.goal, tuple(atc.agents), tuple(dict(s) for s in atc.sessions),
                       tuple(events), witness, tuple(dict.fromkeys((x.goal, x.kind) for x in viol)))


def _asserts(a: Assertion, claim: Claim, kind: str) -> bool:
    if isinstance(a, SecretLearned):
        return kind == "secret_learned" and claim.terms[0] == a.term
    return (_ASSERT_BY_VIOLATION[kind] is type(a) and claim.agent == a.claimer
            and claim.peer == a.peer and claim.terms == a.terms)


# --------------------------------------------------------------------------
# intruder script


@dataclass(frozen=True)
class WaitFor:
    instance: str
    pattern: Term
    kind = "wait"


@dataclass(frozen=True)
class Send:
    instance: str
    term: Term
    kind = "send"


@dataclass(frozen=True)
class Record:
    name: str
    term: Term
    kind = "record"


@dataclass(frozen=True)
class Route:
    """Let a genuine protected-channel message from ``source`` reach ``instance``."""

    source: str
    instance: str
    term: Term
    kind = "route"


Directive = Union[WaitFor, Send, Record, Route]


@dataclass(frozen=True)
class IntruderScript:
    directives: tuple[Directive, ...]
    assertion: Optional[Assertion] = None
    goal: str = ""

    def instances(self) -> set[str]:
        out = set()
        for d in self.directives:
            if isinstance(d, Route):
                out |= {d.source, d.instance}
            elif not isinstance(d, Record):
                out.add(d.instance)
        return out


def atc_to_intruder_script(atc: AbstractTestCase) -> IntruderScript:
    out: list[Directive] = []
    for st in atc.steps:
        if isinstance(st, ExpectSend):
            out.append(WaitFor(st.instance, st.term))
        elif isinstance(st, Observe):
            out.append(Record(f"m{sum(isinstance(d, Record) for d in out) + 1}", st.term))
        elif isinstance(st, Inject):
            out.append(Send(st.instance, st.term))
        else:
            out.append(Route(st.source, st.instance, st.term))
    return IntruderScript(tuple(out), atc.assertion, atc.goal)


# --------------------------------------------------------------------------
# JSON


def _schema(name: str) -> dict:
    return json.loads(files("apv.schemas").joinpath(name).read_text())


def _fail(msg: str, code: str = "schema-error") -> DiagnosticError:
    return DiagnosticError([error(SourceSpan(1, 1), msg, code)])


def _term(text: str, decls) -> Term:
    try:
        return parse_term(text, decls)
    except DiagnosticError as exc:
        raise _fail(f"bad term {text!r}: {exc}", "bad-term") from None


def _assert_to_json(a: Assertion) -> dict:
    if isinstance(a, SecretLearned):
        return {"kind": a.kind, "term": format_term(a.term)}
    return {"kind": a.kind, "claimer": a.claimer, "peer": a.peer, "terms": [format_term(t) for t in a.terms]}


def _assert_from_json(d: dict, decls) -> Assertion:
    if d["kind"] == "SecretLearned":
        return SecretLearned(_term(d["term"], decls))
    cls = CommitWithoutRunning if d["kind"] == "CommitWithoutRunning" else DuplicateCommit
    return cls(d["claimer"], d["peer"], tuple(_term(t, decls) for t in d["terms"]))


def _step_to_json(s: Step) -> dict:
    out = {"kind": s.kind}
    if not isinstance(s, Observe):
        out["instance"] = s.instance
    out["term"] = format_term(s.term)
    if isinstance(s, ExpectSend):
        out["mode"] = s.mode.value
    if isinstance(s, Deliver):
        out["source"] = s.source
    return out


def atc_to_json(atc: AbstractTestCase) -> dict:
    return {
        "protocol": atc.protocol,
        "goal": atc.goal,
        "sessions": [dict(s) for s in atc.sessions],
        "agents": list(atc.agents),
        "steps": [_step_to_json(s) for s in atc.steps],
        "assert": _assert_to_json(atc.assertion),
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def atc_from_json(doc: dict, spec: ProtocolSpec) -> AbstractTestCase:
    try:
        jsonschema.validate(doc, _schema("atc.schema.json"))
    except jsonschema.ValidationError as exc:
        raise _fail(f"ATC: {exc.message} at /{'/'.join(map(str, exc.absolute_path))}") from None
    # The protocol name may differ: replaying one protocol's test against a variant is intended.
    if doc["goal"] not in {str(g) for g in spec.goals}:
        raise _fail(f"ATC goal {doc['goal']!r} is not a goal of {spec.name}", "unknown-goal")
    decls = ground_decls(spec, doc["agents"])
    sessions = tuple(dict(s) for s in doc["sessions"])
    known = {f"s{k}.{r}" for k, m in enumerate(sessions, 1) for r in m}
    steps: list[Step] = []
    for s in doc["steps"]:
        t = _term(s["term"], decls)
        for key in ("instance", "source"):
            if key in s and s[key] not in known:
                raise _fail(f"ATC step refers to unknown instance {s[key]!r}", "unknown-instance")
        if s["kind"] == "expect_send":
            steps.append(ExpectSend(s["instance"], t, ChannelMode(s.get("mode", "->"))))
        elif s["kind"] == "observe":
            steps.append(Observe(t))
        elif s["kind"] == "inject":
            steps.append(Inject(s["instance"], t))
        else:
            steps.append(Deliver(s["instance"], t, s["source"]))
    return AbstractTestCase(doc["protocol"], doc["goal"], sessions, tuple(doc["agents"]), tuple(steps),
                            _assert_from_json(doc["assert"], decls))


def _event_to_json(ev) -> dict:
    if isinstance(ev, SessionSend):
        out = {"kind": "send", "instance": ev.instance, "term": format_term(ev.term), "mode": ev.mode.value}
        if ev.receiver is not None:
            out["receiver"] = ev.receiver
        return out
    if isinstance(ev, IntruderDeliver):
        return {"kind": "inject", "instance": ev.instance, "term": format_term(ev.term)}
    if isinstance(ev, NetworkDeliver):
        return {"kind": "deliver", "instance": ev.instance, "term": format_term(ev.term), "source": ev.source}
    return _claim_to_json(ev)


def _claim_to_json(c: Claim) -> dict:
    out = {"kind": c.kind, "instance": c.instance, "goal": c.goal, "agent": c.agent}
    if c.kind == "secret":
        out["term"] = format_term(c.terms[0])
        out["parties"] = list(c.parties)
    else:
        out["peer"] = c.peer
        out["terms"] = [format_term(t) for t in c.terms]
    return out


def _claim_from_json(d: dict, decls) -> Claim:
    if d["kind"] == "secret":
        return Claim("secret", d["instance"], d["goal"], d["agent"], None, (_term(d["term"], decls),),
                     tuple(d["parties"]))
    return Claim(d["kind"], d["instance"], d["goal"], d["agent"], d["peer"],
                 tuple(_term(t, decls) for t in d["terms"]))


def _derivation_from_json(d: dict, decls) -> Derivation:
    return Derivation(d["rule"], _term(d["term"], decls),
                      tuple(_derivation_from_json(p, decls) for p in d.get("premises", ())))


def trace_to_json(trace: AttackTrace) -> dict:
    w = trace.witness
    return {
        "protocol": trace.protocol,
        "goal": trace.goal_label,
        "agents": list(trace.agents),
        "sessions": [dict(s) for s in trace.sessions],
        "violations": [{"goal": g, "kind": k} for g, k in trace.violations],
        "events": [_event_to_json(e) for e in trace.events],
        "witness": {"derivation": w.to_json()} if isinstance(w, Derivation) else {"claim": _claim_to_json(w)},
    }


def trace_from_json(doc: dict, spec: ProtocolSpec) -> AttackTrace:
    try:
        jsonschema.validate(doc, _schema("trace.schema.json"))
    except jsonschema.ValidationError as exc:
        raise _fail(f"trace: {exc.message}") from None
    decls = ground_decls(spec, doc["agents"])
    try:
        goal = spec.goals.index(spec.find_goal(doc["goal"]))
    except KeyError:
        raise _fail(f"trace names unknown goal {doc['goal']!r}", "unknown-goal") from None
    events = []
    for e in doc["events"]:
        k = e["kind"]
        if k == "send":
            events.append(SessionSend(e["instance"], _term(e["term"], decls), ChannelMode(e["mode"]),
                                      e.get("receiver")))
        elif k == "inject":
            events.append(IntruderDeliver(e["instance"], _term(e["term"], decls)))
        elif k == "deliver":
            events.append(NetworkDeliver(e["instance"], _term(e["term"], decls), e["source"]))
        else:
            events.append(_claim_from_json(e, decls))
    w = doc["witness"]
    witness = (_derivation_from_json(w["derivation"], decls) if "derivation" in w
               else _claim_from_json(w["claim"], decls))
    return AttackTrace(doc["protocol"], goal, doc["goal"], tuple(doc["agents"]),
                       tuple(dict(s) for s in doc["sessions"]), tuple(events), witness,
                       tuple((v["goal"], v["kind"]) for v in doc["violations"]))


def save_atc(atc: AbstractTestCase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(atc_to_json(atc)))


def load_atc(path, spec: ProtocolSpec) -> AbstractTestCase:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DiagnosticError([error(SourceSpan(exc.lineno, exc.colno), exc.msg, "bad-json")]) from None
    return atc_from_json(doc, spec)


__all__ = [
    "AbstractTestCase", "CommitWithoutRunning", "Deliver", "DuplicateCommit", "ExpectSend", "Inject",
    "IntruderScript", "Observe", "Record", "Route", "SecretLearned", "Send", "WaitFor",
    "atc_from_json", "atc_to_intruder_script", "atc_to_json", "atc_to_trace", "dumps", "load_atc",
    "save_atc", "trace_from_json", "trace_to_atc", "trace_to_json",
]
