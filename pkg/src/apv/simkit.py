"""Deterministic discrete-event simulation of protocol participants.

Participants are compiled from role scripts and an intruder process is
driven by an :class:`~apv.testgen.IntruderScript`. A security monitor
watches every step. Scheduling is fixed: an eligible intruder directive
runs first, otherwise the Ready participant with the lowest instance id
takes one step.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .checker.projection import ReceiveStep, RoleScript, SendStep, project_roles
from .checker.runtime import (
    DISHONEST, Claim, Instance, Typing, Violation, advance, agent_atom, distinct_roles,
    fresh_name, goal_violations, instance_id, intruder_knowledge, is_honest, match, new_instance,
)
from .intruder import KnowledgeBase, add_fact, knowledge_base
from .terms import Atom, ChannelMode, ProtocolSpec, Term, format_term, map_atoms, substitute
from .testgen import IntruderScript, Record, Route, Send, WaitFor


class ConfigError(ValueError):
    pass


class Status(enum.Enum):
    READY = "Ready"
    BLOCKED = "Blocked"
    COMPLETED = "Completed"
    STUCK = "Stuck"


@dataclass
class ParticipantProcess:
    instance: Instance
    script: RoleScript
    status: Status = Status.READY

    @property
    def id(self) -> str:
        return self.instance.id

    @property
    def pc(self) -> int:
        return self.instance.pc

    @property
    def bindings(self) -> Mapping[Atom, Term]:
        return self.instance.bindings

    def current(self):
        if self.instance.pc >= len(self.script.steps):
            return None
        return self.script.steps[self.instance.pc]


def compile_participant(script: RoleScript, session: int, mapping: Mapping[str, str],
                        seed: int = 0) -> ParticipantProcess:
    """A process at step 0 whose fresh values are named from ``seed``."""
    inst = new_instance(script, session, mapping, seed)
    proc = ParticipantProcess(inst, script)
    if not script.steps:
        proc.status = Status.COMPLETED
    return proc


def compile_sessions(spec: ProtocolSpec, sessions: Sequence[Mapping[str, str]], seed: int = 0,
                     scripts=None) -> list[ParticipantProcess]:
    scripts = scripts or project_roles(spec)
    out = []
    for k, mapping in enumerate(sessions, 1):
        for role in spec.roles:
            if is_honest(mapping[role]):
                out.append(compile_participant(scripts[role], k, mapping, seed))
    return out


@dataclass
class Delivery:
    term: Term
    source: Optional[str]  # None for intruder-made messages


@dataclass
class NetworkHub:
    pending: dict[str, list[Delivery]] = field(default_factory=dict)
    mailbox: list[Term] = field(default_factory=list)
    # Every send, as (instance, receiver agent, mode, term); not consumed by delivery.
    sent: list[tuple[str, Optional[str], ChannelMode, Term]] = field(default_factory=list)


@dataclass
class SecurityMonitor:
    spec: ProtocolSpec
    kb: KnowledgeBase
    claims: list[Claim] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    dishonest: frozenset = DISHONEST

    @classmethod
    def for_spec(cls, spec: ProtocolSpec, agents: Sequence[str]) -> "SecurityMonitor":
        return cls(spec, knowledge_base(intruder_knowledge(spec, agents)))


def monitor_check(monitor: SecurityMonitor, claims: Sequence[Claim] = (),
                  learned: Sequence[Term] = ()) -> list[Violation]:
    """Fold one step's claims and intruder observations in; return new violations."""
    monitor.claims.extend(claims)
    for t in learned:
        monitor.kb = add_fact(monitor.kb, t)
    current = goal_violations(monitor.spec, monitor.claims, monitor.kb, monitor.dishonest)
    seen = set(monitor.violations)
    delta = [v for v in current if v not in seen]
    monitor.violations.extend(delta)
    return delta


VIOLATION_NAMES = {
    "secret_learned": "SecretLearned",
    "commit_without_running": "CommitWithoutRunning",
    "duplicate_commit": "DuplicateCommit",
}


@dataclass(frozen=True)
class ViolationReproduced:
    goal: int
    step: int
    kind: str
    name = "ViolationReproduced"


@dataclass(frozen=True)
class NotReproduced:
    reason: str  # ScriptStalled, RunCompletedClean or StepBudgetExhausted
    detail: str = ""
    name = "NotReproduced"


@dataclass
class SimReport:
    verdict: ViolationReproduced | NotReproduced
    events: list[tuple[int, str, str, str]]
    steps: int
    goal_labels: tuple[str, ...] = ()

    @property
    def reproduced(self) -> bool:
        return isinstance(self.verdict, ViolationReproduced)

    def log_lines(self) -> str:
        return "".join(f"{s}|{actor}|{kind}|{term}\n" for s, actor, kind, term in self.events)

    def to_json(self) -> dict:
        v = self.verdict
        if isinstance(v, ViolationReproduced):
            verdict = {"verdict": v.name, "goal": self.goal_labels[v.goal] if self.goal_labels else v.goal,
                       "violation": VIOLATION_NAMES[v.kind], "step": v.step}
        else:
            verdict = {"verdict": v.name, "reason": v.reason}
            if v.detail:
                verdict["detail"] = v.detail
        return {**verdict, "steps": self.steps,
                "events": [{"step": s, "actor": a, "kind": k, "term": t} for s, a, k, t in self.events]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


_SEEDED = re.compile(r"^(.*)#r\d+s(\d+)$")


def _canonical(t: Term) -> Term:
    """Strip the seed from fresh names so script terms compare across seeds."""

    def fix(a: Atom) -> Term:
        m = _SEEDED.match(a.name)
        return Atom(f"{m.group(1)}#s{m.group(2)}", a.sort, a.var) if m else a

    return map_atoms(t, fix)


def _seeded(t: Term, seed: int) -> Term:
    if not seed:
        return t
    plain = re.compile(r"^(.*)#s(\d+)$")

    def fix(a: Atom) -> Term:
        m = plain.match(a.name)
        return Atom(fresh_name(m.group(1), int(m.group(2)), seed), a.sort, a.var) if m else a

    return map_atoms(t, fix)


class _Sim:
    def __init__(self, procs, script, monitor, seed):
        self.procs = sorted(procs, key=lambda p: _id_key(p.id))
        self.by_id = {p.id: p for p in self.procs}
        self.script = script
        self.monitor = monitor
        self.seed = seed
        self.hub = NetworkHub({p.id: [] for p in self.procs})
        self.ikb = monitor.kb
        self.typing = Typing(monitor.spec)
        self.events: list[tuple[int, str, str, str]] = []
        self.next_directive = 0
        self.waited: set[int] = set()
        self.step = 0

    def log(self, actor: str, kind: str, text: str):
        self.events.append((self.step, actor, kind, text))

    # intruder ---------------------------------------------------------

    def directive_ready(self) -> bool:
        if self.next_directive >= len(self.script.directives):
            return False
        d = self.script.directives[self.next_directive]
        if isinstance(d, WaitFor):
            return self._find_send(d.instance, d.pattern) is not None
        if isinstance(d, Send):
            return self.ikb.derivable(_seeded(d.term, self.seed))
        if isinstance(d, Route):
            return self._find_send(d.source, d.term) is not None
        return True

    def _find_send(self, iid: str, pattern: Term) -> Optional[int]:
        for k, (src, _, _, t) in enumerate(self.hub.sent):
            if src == iid and k not in self.waited and _canonical(t) == pattern:
                return k
        return None

    def run_directive(self) -> tuple[list[Claim], list[Term]]:
        d = self.script.directives[self.next_directive]
        self.next_directive += 1
        if isinstance(d, WaitFor):
            k = self._find_send(d.instance, d.pattern)
            self.waited.add(k)
            self.log("intruder", "wait", format_term(self.hub.sent[k][3]))
        elif isinstance(d, Record):
            self.log("intruder", "record", f"{d.name}={format_term(_seeded(d.term, self.seed))}")
        elif isinstance(d, Send):
            t = _seeded(d.term, self.seed)
            self.hub.pending[d.instance].append(Delivery(t, None))
            self.log("intruder", "inject", f"{d.instance}:{format_term(t)}")
        else:
            t = _seeded(d.term, self.seed)
            self.hub.pending[d.instance].append(Delivery(t, d.source))
            self.log("intruder", "route", f"{d.source}>{d.instance}:{format_term(t)}")
        return [], []

    # participants -----------------------------------------------------

    def refresh(self, p: ParticipantProcess) -> Optional[tuple[int, dict]]:
        step = p.current()
        if step is None:
            p.status = Status.COMPLETED
            return None
        if isinstance(step, SendStep):
            p.status = Status.READY
            return None
        for k, dl in enumerate(self.hub.pending[p.id]):
            b = self._accept(p, step, dl)
            if b is not None:
                p.status = Status.READY
                return k, b
        p.status = Status.BLOCKED
        return None

    def _accept(self, p: ParticipantProcess, step: ReceiveStep, dl: Delivery) -> Optional[dict]:
        peer_var = p.script.role_vars[step.peer]
        peer = p.instance.bound_agent(peer_var)
        sender = None
        if dl.source is None:
            if not (step.mode.injectable or (peer is not None and not is_honest(peer))):
                return None
        else:
            src = self.by_id.get(dl.source)
            sender = src.instance.agent if src else None
            if step.mode is not ChannelMode.PLAIN and peer is not None and sender != peer:
                return None
        b = match(step.payload, dl.term, p.bindings, self.typing)
        if b is None:
            return None
        if peer is None and sender is not None and step.mode is not ChannelMode.PLAIN:
            b[peer_var] = agent_atom(sender)
        probe = Instance(p.id, p.instance.session, p.instance.role, p.instance.agent, p.pc, b)
        return b if distinct_roles(probe, p.script) else None

    def run_process(self, p: ParticipantProcess, ready) -> tuple[list[Claim], list[Term]]:
        step = p.current()
        learned = []
        if isinstance(step, SendStep):
            term = substitute(step.payload, p.bindings)
            receiver = p.instance.bound_agent(p.script.role_vars[step.peer])
            self.hub.sent.append((p.id, receiver, step.mode, term))
            self.log(p.id, "send", format_term(term))
            if step.mode.readable or not is_honest(receiver):
                self.hub.mailbox.append(term)
                self.ikb = add_fact(self.ikb, term)
                learned.append(term)
            if not self.script.directives:
                peer_id = instance_id(p.instance.session, step.peer)
                if peer_id in self.hub.pending and self.by_id[peer_id].instance.agent == receiver:
                    self.hub.pending[peer_id].append(Delivery(term, p.id))
            new, claims = advance(p.instance, p.script, p.bindings)
        else:
            k, b = ready
            dl = self.hub.pending[p.id].pop(k)
            self.log(p.id, "receive", format_term(dl.term))
            new, claims = advance(p.instance, p.script, b)
        p.instance = new
        for c in claims:
            body = format_term(c.terms[0]) if c.kind == "secret" else ",".join(map(format_term, c.terms))
            self.log(p.id, c.kind, body)
        return claims, learned

    def go(self, max_steps: int) -> SimReport:
        labels = tuple(str(g) for g in self.monitor.spec.goals)
        while True:
            pick = None
            if self.directive_ready():
                pick = ("intruder", None)
            else:
                for p in self.procs:
                    r = self.refresh(p)
                    if p.status is Status.READY:
                        pick = (p, r)
                        break
            if pick is None:
                return SimReport(self._idle_verdict(), self.events, self.step, labels)
            if self.step >= max_steps:
                return SimReport(NotReproduced("StepBudgetExhausted"), self.events, self.step, labels)
            self.step += 1
            if pick[0] == "intruder":
                claims, learned = self.run_directive()
            else:
                claims, learned = self.run_process(*pick)
            delta = monitor_check(self.monitor, claims, learned)
            for v in delta:
                self.log("monitor", VIOLATION_NAMES[v.kind], _violation_text(v))
            if delta:
                v = delta[0]
                return SimReport(ViolationReproduced(v.goal, self.step, v.kind), self.events, self.step, labels)

    def _idle_verdict(self) -> NotReproduced:
        for p in self.procs:
            self.refresh(p)
        if self.next_directive < len(self.script.directives):
            d = self.script.directives[self.next_directive]
            return NotReproduced("ScriptStalled", f"directive {self.next_directive + 1} ({d.kind}) cannot proceed")
        if all(p.status is Status.COMPLETED for p in self.procs):
            return NotReproduced("RunCompletedClean")
        for p in self.procs:
            if p.status is Status.BLOCKED:
                p.status = Status.STUCK
        stuck = ",".join(p.id for p in self.procs if p.status is Status.STUCK)
        return NotReproduced("ScriptStalled", f"participants stuck: {stuck}")


def _violation_text(v: Violation) -> str:
    c = v.claim
    if v.kind == "secret_learned":
        return format_term(c.terms[0])
    return f"{c.agent}<-{c.peer}:" + ",".join(map(format_term, c.terms))


def _id_key(iid: str):
    head, role = iid.split(".", 1)
    return (int(head[1:]), role)


def run(processes: Sequence[ParticipantProcess], intruder: IntruderScript, monitor: SecurityMonitor,
        max_steps: int = 1000, seed: int = 0) -> SimReport:
    """Simulate until a violation, completion, a stall or the step budget."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    ids = {p.id for p in processes}
    for name in sorted(intruder.instances()):
        if name not in ids:
            raise ConfigError(f"intruder script refers to unknown instance {name}")
    return _Sim(processes, intruder, monitor, seed).go(max_steps)


def simulate_atc(spec: ProtocolSpec, atc, seed: int = 0, max_steps: int = 1000) -> SimReport:
    """Compile participants for the ATC's sessions and replay its intruder script."""
    from .testgen import atc_to_intruder_script

    procs = compile_sessions(spec, atc.sessions, seed)
    monitor = SecurityMonitor.for_spec(spec, atc.agents)
    return run(procs, atc_to_intruder_script(atc), monitor, max_steps, seed)


def honest_run(spec: ProtocolSpec, sessions: Sequence[Mapping[str, str]], agents: Sequence[str] = ("a", "b", "i"),
               seed: int = 0, max_steps: int = 1000) -> SimReport:
    """Passive run: no directives, so the hub delivers every send to its session peer."""
    procs = compile_sessions(spec, sessions, seed)
    return run(procs, IntruderScript(()), SecurityMonitor.for_spec(spec, agents), max_steps, seed)
