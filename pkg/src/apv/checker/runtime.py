"""Execution semantics shared by the search, the trace verifier and simkit.

An *instance* is one run of a role script by a concrete agent inside a
session. Claims are the ground events goals are judged on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from ..intruder import KnowledgeBase
from ..terms import (
    Atom, FunApp, Inv, ProtocolSpec, Sort, Term, iter_subterms, rename, substitute,
)
from .projection import (
    RoleScript, RunningEvent, SecretClaim, fresh_candidates,
)

DISHONEST = frozenset({"i"})


def is_honest(agent: Optional[str], dishonest=DISHONEST) -> bool:
    return agent is not None and agent not in dishonest


def agent_atom(name: str) -> Atom:
    return Atom(name, Sort.AGENT)


def fresh_name(name: str, session: int, seed: int = 0) -> str:
    if seed:
        return f"{name}#r{seed}s{session}"
    return f"{name}#s{session}"


class Typing:
    """Decides which ground values a typed variable may take."""

    def __init__(self, spec: ProtocolSpec):
        self.decls = spec.declarations
        self.function_names = frozenset(spec.function_names())

    def fits(self, var: Atom, t: Term) -> bool:
        if var.sort is Sort.UNTYPED:
            return True
        if isinstance(t, Atom):
            return t.sort is var.sort and not t.var and t.name not in self.function_names
        if isinstance(t, FunApp):
            return self.decls.get(t.function) is var.sort
        if isinstance(t, Inv):
            return var.sort is Sort.PRIVATE_KEY
        return False


def match(pattern: Term, term: Term, bindings: Mapping[Atom, Term], typing: Typing) -> Optional[dict]:
    """One-way matching of ``pattern`` against ground ``term``."""
    out = dict(bindings)
    return out if _match(pattern, term, out, typing) else None


def _match(p: Term, t: Term, b: dict, typing: Typing) -> bool:
    if isinstance(p, Atom):
        if not p.var:
            return p == t
        bound = b.get(p)
        if bound is not None:
            return bound == t
        if not typing.fits(p, t):
            return False
        b[p] = t
        return True
    if type(p) is not type(t):
        return False
    if isinstance(p, FunApp) and (p.function != t.function or len(p.args) != len(t.args)):
        return False
    return all(_match(pc, tc, b, typing) for pc, tc in zip(p.children(), t.children()))


@dataclass(frozen=True)
class Instance:
    id: str
    session: int
    role: str
    agent: str
    pc: int
    bindings: Mapping[Atom, Term] = field(hash=False)

    def key(self):
        return (self.pc, frozenset(self.bindings.items()))

    def bound_agent(self, role_var: Term) -> Optional[str]:
        v = self.bindings.get(role_var) if isinstance(role_var, Atom) and role_var.var else role_var
        return v.name if isinstance(v, Atom) and not v.var else None


@dataclass(frozen=True)
class Claim:
    kind: str  # "running", "commit" or "secret"
    instance: str
    goal: int
    agent: str
    peer: Optional[str] = None
    terms: tuple[Term, ...] = ()
    parties: tuple[Optional[str], ...] = ()


@dataclass(frozen=True)
class Violation:
    goal: int
    kind: str  # "secret_learned", "commit_without_running", "duplicate_commit"
    claim: Claim


def instance_id(session: int, role: str) -> str:
    return f"s{session}.{role}"


def parse_instance_id(text: str) -> tuple[int, str]:
    head, role = text.split(".", 1)
    if not head.startswith("s"):
        raise ValueError(f"bad instance id {text!r}")
    return int(head[1:]), role


def make_instances(scripts: Mapping[str, RoleScript], roles: Sequence[str],
                   sessions: Sequence[Mapping[str, str]], seed: int = 0,
                   dishonest=DISHONEST) -> list[Instance]:
    out = []
    for si, mapping in enumerate(sessions, 1):
        for role in roles:
            agent = mapping[role]
            if not is_honest(agent, dishonest):
                continue
            out.append(new_instance(scripts[role], si, mapping, seed))
    return out


def new_instance(script: RoleScript, session: int, mapping: Mapping[str, str], seed: int = 0) -> Instance:
    b: dict[Atom, Term] = {p: agent_atom(mapping[p.name]) for p in script.params}
    for f in script.fresh:
        b[f] = Atom(fresh_name(f.name, session, seed), f.sort)
    return Instance(instance_id(session, script.role), session, script.role, mapping[script.role], 0, b)


def distinct_roles(inst: Instance, script: RoleScript, dishonest=DISHONEST) -> bool:
    """No honest agent may stand for two different roles of one instance."""
    seen = set()
    for rv in script.role_vars.values():
        a = inst.bound_agent(rv)
        if a is not None and is_honest(a, dishonest):
            if a in seen:
                return False
            seen.add(a)
    return True


def peer_agent(inst: Instance, script: RoleScript) -> Optional[str]:
    step = script.steps[inst.pc]
    return inst.bound_agent(script.role_vars[step.peer])


def completed(inst: Instance, script: RoleScript) -> bool:
    return inst.pc >= len(script.steps)


def advance(inst: Instance, script: RoleScript, bindings: Mapping[Atom, Term]) -> tuple[Instance, list[Claim]]:
    """Finish the current step; returns the new instance and the claims it raises."""
    events = list(script.running.get(inst.pc, ()))
    new = Instance(inst.id, inst.session, inst.role, inst.agent, inst.pc + 1, bindings)
    if new.pc == len(script.steps):
        events += script.completion
    return new, [ground_claim(new, ev) for ev in events]


def ground_claim(inst: Instance, ev) -> Claim:
    b = inst.bindings
    if isinstance(ev, SecretClaim):
        return Claim("secret", inst.id, ev.goal, inst.agent, None, (substitute(ev.term, b),),
                     tuple(inst.bound_agent(p) for p in ev.parties))
    kind = "running" if isinstance(ev, RunningEvent) else "commit"
    return Claim(kind, inst.id, ev.goal, inst.agent, inst.bound_agent(ev.peer),
                 tuple(substitute(t, b) for t in ev.terms))


def goal_violations(spec: ProtocolSpec, claims: Sequence[Claim], kb: KnowledgeBase,
                    dishonest=DISHONEST) -> list[Violation]:
    """Every goal violation witnessed by ``claims`` under intruder knowledge ``kb``."""
    out = []
    runnings: dict[tuple, int] = {}
    for c in claims:
        if c.kind == "running":
            k = (c.goal, c.agent, c.peer, c.terms)
            runnings[k] = runnings.get(k, 0) + 1
    commits: dict[tuple, int] = {}
    for c in claims:
        goal = spec.goals[c.goal]
        if c.kind == "secret":
            if all(is_honest(p, dishonest) for p in c.parties) and kb.derivable(c.terms[0]):
                out.append(Violation(c.goal, "secret_learned", c))
        elif c.kind == "commit":
            if not (is_honest(c.agent, dishonest) and is_honest(c.peer, dishonest)):
                continue
            k = (c.goal, c.peer, c.agent, c.terms)
            commits[k] = commits.get(k, 0) + 1
            have = runnings.get(k, 0)
            if have == 0:
                out.append(Violation(c.goal, "commit_without_running", c))
            elif goal.injective and commits[k] > have:
                out.append(Violation(c.goal, "duplicate_commit", c))
    return out


def intruder_knowledge(spec: ProtocolSpec, agents: Sequence[str], dishonest=DISHONEST) -> list[Term]:
    """Initial intruder knowledge: agent names, dishonest agents' role knowledge, own nonces."""
    out: dict[Term, None] = {agent_atom(a): None for a in agents}
    roles = spec.roles
    bad = [a for a in agents if a in dishonest]
    for role in roles:
        terms = spec.knowledge.get(role, ())
        others = sorted({s.name for t in terms for s in iter_subterms(t)
                         if isinstance(s, Atom) and s.name in roles and s.name != role})
        for d in bad:
            for combo in itertools.product(agents, repeat=len(others)):
                mapping = {Atom(role, Sort.AGENT): agent_atom(d)}
                mapping.update({Atom(o, Sort.AGENT): agent_atom(a) for o, a in zip(others, combo)})
                for t in terms:
                    out.setdefault(rename(t, mapping), None)
    for name, atom in fresh_candidates(spec).items():
        out.setdefault(Atom(f"{name}#i", atom.sort), None)
    return list(out)


def ground_decls(spec: ProtocolSpec, agents: Iterable[str]) -> dict:
    """Declarations extended with concrete agent names (for reading ground terms)."""
    decls = dict(spec.declarations)
    for a in agents:
        decls.setdefault(a, Sort.AGENT)
    return decls


__all__ = [
    "Claim", "DISHONEST", "Instance", "Typing", "Violation", "advance", "completed", "distinct_roles",
    "goal_violations", "ground_claim", "intruder_knowledge", "is_honest", "make_instances", "match",
    "new_instance", "parse_instance_id", "peer_agent",
]
