"""Attack traces and the independent trace verifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from ..intruder import Derivation, KnowledgeBase, add_fact, knowledge_base, replay
from ..terms import ChannelMode, ProtocolSpec, Term, format_term, is_ground, substitute
from .projection import ReceiveStep, RoleScript, SendStep, project_roles
from .runtime import (
    DISHONEST, Claim, Instance, Typing, Violation, advance, agent_atom, distinct_roles, goal_violations,
    intruder_knowledge, is_honest, make_instances, match,
)


@dataclass(frozen=True)
class SessionSend:
    instance: str
    term: Term
    mode: ChannelMode
    receiver: Optional[str] = None


@dataclass(frozen=True)
class IntruderDeliver:
    instance: str
    term: Term


@dataclass(frozen=True)
class NetworkDeliver:
    """Delivery of a message genuinely sent by ``source`` on a protected channel."""

    instance: str
    term: Term
    source: str


Event = Union[SessionSend, IntruderDeliver, NetworkDeliver, Claim]


@dataclass(frozen=True)
class AttackTrace:
    protocol: str
    goal: int
    goal_label: str
    agents: tuple[str, ...]
    sessions: tuple[Mapping[str, str], ...]
    events: tuple[Event, ...]
    witness: Union[Derivation, Claim]
    violations: tuple[tuple[int, str], ...] = ()
    seed: int = field(default=0, compare=False)

    def violated_goals(self) -> list[int]:
        return sorted({g for g, _ in self.violations} | {self.goal})


@dataclass(frozen=True)
class Accept:
    ok = True


@dataclass(frozen=True)
class Reject:
    reason: str
    ok = False


@dataclass
class Replay:
    """Mutable replay state used by verify_trace and by simkit."""

    spec: ProtocolSpec
    scripts: Mapping[str, RoleScript]
    instances: dict[str, Instance]
    kb: KnowledgeBase
    typing: Typing
    dishonest: frozenset = DISHONEST
    log: list[tuple[str, str, Optional[str], ChannelMode, Term]] = field(default_factory=list)
    claims: list[Claim] = field(default_factory=list)

    @classmethod
    def start(cls, spec: ProtocolSpec, sessions: Sequence[Mapping[str, str]], agents: Sequence[str],
              seed: int = 0, scripts=None) -> "Replay":
        scripts = scripts or project_roles(spec)
        insts = make_instances(scripts, spec.roles, sessions, seed)
        return cls(spec, scripts, {i.id: i for i in insts},
                   knowledge_base(intruder_knowledge(spec, agents)), Typing(spec))

    def next_step(self, iid: str):
        inst = self.instances.get(iid)
        if inst is None:
            raise KeyError(iid)
        script = self.scripts[inst.role]
        if inst.pc >= len(script.steps):
            return inst, script, None
        return inst, script, script.steps[inst.pc]

    def expected_send(self, iid: str) -> Optional[Term]:
        inst, _, step = self.next_step(iid)
        if not isinstance(step, SendStep):
            return None
        return substitute(step.payload, inst.bindings)

    def do_send(self, iid: str) -> tuple[SessionSend, list[Claim]]:
        inst, script, step = self.next_step(iid)
        if not isinstance(step, SendStep):
            raise ValueError(f"{iid} is not ready to send")
        term = substitute(step.payload, inst.bindings)
        if not is_ground(term):
            raise ValueError(f"{iid} would send a non-ground term {format_term(term)}")
        receiver = inst.bound_agent(script.role_vars[step.peer])
        if step.mode.readable or not is_honest(receiver, self.dishonest):
            self.kb = add_fact(self.kb, term)
        if step.mode is not ChannelMode.PLAIN:
            self.log.append((iid, inst.agent, receiver, step.mode, term))
        new, claims = advance(inst, script, inst.bindings)
        self.instances[iid] = new
        self.claims.extend(claims)
        return SessionSend(iid, term, step.mode, receiver), claims

    def accepts(self, iid: str, term: Term, source: Optional[str] = None) -> Optional[dict]:
        """Bindings after delivering ``term``; None when the pattern or channel refuses it."""
        inst, script, step = self.next_step(iid)
        if not isinstance(step, ReceiveStep):
            return None
        peer_var = script.role_vars[step.peer]
        peer = inst.bound_agent(peer_var)
        if source is None:
            if not (step.mode.injectable or (peer is not None and not is_honest(peer, self.dishonest))):
                return None
            if not self.kb.derivable(term):
                return None
            b = match(step.payload, term, inst.bindings, self.typing)
        else:
            entry = next((e for e in self.log if e[0] == source and e[4] == term and e[3] is step.mode), None)
            if entry is None or (peer is not None and entry[1] != peer):
                return None
            if not step.mode.readable and entry[2] != inst.agent:
                return None
            b = match(step.payload, term, inst.bindings, self.typing)
            if b is not None and peer is None:
                b[peer_var] = agent_atom(entry[1])
        if b is None:
            return None
        probe = Instance(inst.id, inst.session, inst.role, inst.agent, inst.pc, b)
        return b if distinct_roles(probe, script, self.dishonest) else None

    def do_receive(self, iid: str, bindings: Mapping) -> list[Claim]:
        inst, script, _ = self.next_step(iid)
        new, claims = advance(inst, script, dict(bindings))
        self.instances[iid] = new
        self.claims.extend(claims)
        return claims

    def violations(self) -> list[Violation]:
        return goal_violations(self.spec, self.claims, self.kb, self.dishonest)


def verify_trace(spec: ProtocolSpec, trace: AttackTrace) -> Union[Accept, Reject]:
    """Re-check a trace step by step, without consulting the search."""
    if not 0 <= trace.goal < len(spec.goals):
        return Reject("unknown goal")
    try:
        rp = Replay.start(spec, trace.sessions, trace.agents)
    except (KeyError, ValueError) as exc:
        return Reject(f"bad session table: {exc}")
    pending: list[Claim] = []
    for k, ev in enumerate(trace.events, 1):
        if isinstance(ev, Claim):
            if not pending or pending[0] != ev:
                return Reject(f"unexpected claim at event {k}")
            pending.pop(0)
            continue
        if pending:
            return Reject(f"missing claim before event {k}")
        if ev.instance not in rp.instances:
            return Reject(f"unknown instance at event {k}")
        if isinstance(ev, SessionSend):
            if rp.expected_send(ev.instance) != ev.term:
                return Reject(f"send does not follow the role script at event {k}")
            sent, claims = rp.do_send(ev.instance)
            if sent.mode is not ev.mode:
                return Reject(f"channel mismatch at event {k}")
            pending = list(claims)
            continue
        if isinstance(ev, IntruderDeliver) and not rp.kb.derivable(ev.term):
            return Reject(f"underivable injection at event {k}")
        source = ev.source if isinstance(ev, NetworkDeliver) else None
        b = rp.accepts(ev.instance, ev.term, source)
        if b is None:
            return Reject(f"delivery refused at event {k}")
        pending = rp.do_receive(ev.instance, b)
    if pending:
        return Reject("trace ends before its claims")
    found = [v for v in rp.violations() if v.goal == trace.goal]
    if not found:
        return Reject("goal not violated")
    w = trace.witness
    if isinstance(w, Derivation):
        secrets = {v.claim.terms[0] for v in found if v.kind == "secret_learned"}
        try:
            built = replay(w, rp.kb.analyzed)
        except ValueError as exc:
            return Reject(f"witness does not replay: {exc}")
        if built not in secrets:
            return Reject("witness mismatch")
    elif w not in {v.claim for v in found}:
        return Reject("witness mismatch")
    return Accept()
