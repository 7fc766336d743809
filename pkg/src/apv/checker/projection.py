"""Role projection: one send/receive script per role of a ProtocolSpec.

Role names and nonces become role-local variables. A receiver's pattern keeps
only what it can check: parts it cannot decrypt or recompute are replaced by
opaque ``Untyped`` variables that it stores and may forward unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..intruder import KnowledgeBase, add_facts, knowledge_base
from ..terms import (
    FRESH_SORTS, AsymEnc, Atom, ChannelMode, FunApp, Pair, ProtocolSpec, Secrecy, Sign, Sort,
    SymEnc, Term, inv, iter_subterms, map_atoms, rebuild, subterms,
)


@dataclass(frozen=True)
class SendStep:
    payload: Term
    mode: ChannelMode
    peer: str

    kind = "send"


@dataclass(frozen=True)
class ReceiveStep:
    payload: Term
    mode: ChannelMode
    peer: str

    kind = "receive"


Step = SendStep | ReceiveStep


@dataclass(frozen=True)
class RunningEvent:
    goal: int
    peer: Term
    terms: tuple[Term, ...]


@dataclass(frozen=True)
class CommitEvent:
    goal: int
    peer: Term
    terms: tuple[Term, ...]


@dataclass(frozen=True)
class SecretClaim:
    goal: int
    term: Term
    parties: tuple[Term, ...]


ClaimEvent = RunningEvent | CommitEvent | SecretClaim


@dataclass(frozen=True)
class RoleScript:
    role: str
    steps: tuple[Step, ...]
    knowledge: tuple[Term, ...]
    # Role variables bound when an instance is created (own role first).
    params: tuple[Atom, ...]
    # Values this role generates; materialized per instance.
    fresh: tuple[Atom, ...]
    role_vars: Mapping[str, Atom] = field(compare=False)
    # Claim events attached to step indices (running) or to completion.
    running: Mapping[int, tuple[RunningEvent, ...]] = field(default_factory=dict, compare=False)
    completion: tuple[ClaimEvent, ...] = ()
    # Symbolic knowledge before each step (used by the executability check).
    knowledge_before: tuple[KnowledgeBase, ...] = field(default=(), compare=False, repr=False)

    @property
    def me(self) -> Atom:
        return self.role_vars[self.role]

    def sends(self) -> list[tuple[int, SendStep]]:
        return [(i, s) for i, s in enumerate(self.steps) if isinstance(s, SendStep)]


def fresh_candidates(spec: ProtocolSpec) -> dict[str, Atom]:
    """Nonce and session-key constants that no role knows initially."""
    known: set[Term] = set()
    for terms in spec.knowledge.values():
        for t in terms:
            known |= subterms(t)
    out: dict[str, Atom] = {}
    for act in spec.actions:
        for s in iter_subterms(act.payload):
            if isinstance(s, Atom) and s.sort in FRESH_SORTS and s not in known and s.name not in out:
                out[s.name] = s
    return out


def fresh_owners(spec: ProtocolSpec) -> dict[str, str]:
    """Which role generates each fresh value: the sender where it first appears."""
    cands = fresh_candidates(spec)
    owner: dict[str, str] = {}
    for act in spec.actions:
        for s in iter_subterms(act.payload):
            if isinstance(s, Atom) and s.name in cands:
                owner.setdefault(s.name, act.sender)
    return owner


class _RoleView:
    """Projection state for one role."""

    def __init__(self, role: str, localize):
        self.role = role
        self.localize = localize
        self.steps: list[Step] = []
        self.kb: KnowledgeBase = knowledge_base()
        self.fresh: list[Atom] = []
        self.opaque: dict[Term, Atom] = {}
        self.before: list[KnowledgeBase] = []

    def view(self, t: Term) -> Term:
        """Local form of a global term: variables plus opaque placeholders."""
        return _replace_opaque(self.localize(t), self.opaque)

    def receive_pattern(self, payload: Term) -> Term:
        local = self.view(payload)
        after = add_facts(self.kb, [local])

        def walk(t: Term) -> Term:
            if isinstance(t, Atom):
                return t
            if isinstance(t, Pair):
                return Pair(walk(t.left), walk(t.right))
            if isinstance(t, Sign):
                return Sign(walk(t.payload), t.key)
            if isinstance(t, SymEnc) and after.derivable(t.key):
                return SymEnc(walk(t.payload), t.key)
            if isinstance(t, AsymEnc) and after.derivable(inv(t.key)):
                return AsymEnc(walk(t.payload), t.key)
            if isinstance(t, FunApp) and not t.one_way:
                return rebuild(t, tuple(walk(a) for a in t.args))
            if after.derivable(t):
                return t
            blob = self.opaque.get(t)
            if blob is None:
                blob = Atom(f"X{len(self.opaque) + 1}", Sort.UNTYPED, var=True)
                self.opaque[t] = blob
            return blob

        return walk(local)


def _replace_opaque(t: Term, opaque: Mapping[Term, Atom]) -> Term:
    if not opaque:
        return t
    if t in opaque:
        return opaque[t]
    kids = t.children()
    if not kids:
        return t
    return rebuild(t, tuple(_replace_opaque(c, opaque) for c in kids))


def _role_var(name: str) -> Atom:
    return Atom(name, Sort.AGENT, var=True)


def project_roles(spec: ProtocolSpec) -> dict[str, RoleScript]:
    roles = spec.roles
    role_set = set(roles)
    fresh = fresh_candidates(spec)
    owners = fresh_owners(spec)
    decls = spec.declarations

    def as_var(a: Atom) -> Term:
        if a.var:
            return a
        if a.name in role_set:
            return Atom(a.name, Sort.AGENT, var=True)
        if a.name in fresh:
            return Atom(a.name, decls.get(a.name, a.sort), var=True)
        return a

    def localize(t: Term) -> Term:
        return map_atoms(t, as_var)

    role_vars = {r: _role_var(r) for r in roles}
    views = {r: _RoleView(r, localize) for r in roles}
    for r, v in views.items():
        v.kb = add_facts(v.kb, [localize(t) for t in spec.knowledge.get(r, ())] + [role_vars[r]])

    for act in spec.actions:
        sender, receiver = views[act.sender], views[act.receiver]
        for s in iter_subterms(act.payload):
            if isinstance(s, Atom) and owners.get(s.name) == act.sender:
                var = as_var(s)
                if var not in sender.fresh and var not in sender.kb:
                    sender.fresh.append(var)
                    sender.kb = add_facts(sender.kb, [var])
        sender.before.append(sender.kb)
        sender.steps.append(SendStep(sender.view(act.payload), act.mode, act.receiver))
        receiver.before.append(receiver.kb)
        pattern = receiver.receive_pattern(act.payload)
        receiver.steps.append(ReceiveStep(pattern, act.mode, act.sender))
        receiver.kb = add_facts(receiver.kb, [pattern])

    running: dict[str, dict[int, list[RunningEvent]]] = {r: {} for r in roles}
    completion: dict[str, list[ClaimEvent]] = {r: [] for r in roles}
    for gi, goal in enumerate(spec.goals):
        if isinstance(goal, Secrecy):
            for party in goal.parties:
                if party in views:
                    v = views[party]
                    completion[party].append(SecretClaim(
                        gi, v.view(goal.term), tuple(_role_var(p) for p in goal.parties)))
            continue
        if goal.claimer in views:
            v = views[goal.claimer]
            completion[goal.claimer].append(
                CommitEvent(gi, _role_var(goal.peer), tuple(v.view(t) for t in goal.on)))
        if goal.peer in views:
            v = views[goal.peer]
            terms = tuple(v.view(t) for t in goal.on)
            at = _running_step(v, terms)
            ev = RunningEvent(gi, _role_var(goal.claimer), terms)
            if at is None:
                completion[goal.peer].insert(0, ev)
            else:
                running[goal.peer].setdefault(at, []).append(ev)

    scripts = {}
    for r in roles:
        v = views[r]
        params = [role_vars[r]]
        mentioned: set[Term] = set()
        for t in spec.knowledge.get(r, ()):
            mentioned |= subterms(localize(t))
        params += [role_vars[p] for p in roles if p != r and role_vars[p] in mentioned]
        scripts[r] = RoleScript(
            role=r,
            steps=tuple(v.steps),
            knowledge=tuple(localize(t) for t in spec.knowledge.get(r, ())),
            params=tuple(params),
            fresh=tuple(v.fresh),
            role_vars=role_vars,
            running={k: tuple(evs) for k, evs in running[r].items()},
            completion=tuple(completion[r]),
            knowledge_before=tuple(v.before),
        )
    return scripts


def _running_step(view: _RoleView, terms: tuple[Term, ...]) -> Optional[int]:
    """Index of the role's last send at which it knows every agreed term."""
    best = None
    for i, step in enumerate(view.steps):
        if isinstance(step, SendStep):
            kb = add_facts(view.before[i], [step.payload])
            if all(kb.derivable(t) for t in terms):
                best = i
    if best is None:
        sends = [i for i, s in enumerate(view.steps) if isinstance(s, SendStep)]
        return sends[-1] if sends else None
    return best
