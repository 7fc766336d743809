"""Bounded-session state-space search with the intruder as the network.

Exploration is depth-first and deterministic. Sends are taken eagerly (the
lowest-id instance with a pending send is the only successor), a standard
partial-order reduction: a send only grows intruder knowledge and the log.
Receive candidates come from pattern-directed instantiation over the
intruder's analyzed knowledge; there is no lazy constraint solving.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

from ..intruder import KnowledgeBase, add_fact, can_derive, knowledge_base
from ..terms import (
    AsymEnc, Atom, ChannelMode, FunApp, Pair, ProtocolSpec, Sign, Sort, SymEnc, Term, is_ground,
    substitute,
)
from .executability import executability_check
from .projection import ReceiveStep, RoleScript, SendStep, project_roles
from .runtime import (
    DISHONEST, Claim, Instance, Typing, Violation, advance, agent_atom, distinct_roles,
    goal_violations, intruder_knowledge, is_honest, make_instances, match,
)
from .traces import AttackTrace, IntruderDeliver, NetworkDeliver, SessionSend

MAX_SESSIONS_GUARD = 3


class SearchBudgetExceeded(RuntimeError):
    def __init__(self, states: int, depth: int):
        self.states = states
        self.depth = depth
        super().__init__(f"search budget exceeded after {states} states (depth {depth})")


class NotExecutableSpec(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


@dataclass(frozen=True)
class SearchConfig:
    max_sessions: int = 2
    agents: tuple[str, ...] = ("a", "b", "i")
    max_depth: int = 64
    max_states: int = 100_000
    # None explores every role assignment; otherwise the explicit session list.
    sessions: Optional[tuple[Mapping[str, str], ...]] = None
    allow_large: bool = False
    allow_self_sessions: bool = False
    collect: bool = False

    def __post_init__(self):
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be at least 1")
        if self.max_sessions > MAX_SESSIONS_GUARD and not self.allow_large:
            raise ValueError(f"max_sessions above {MAX_SESSIONS_GUARD} needs allow_large=True")
        if not self.agents or len(set(self.agents)) != len(self.agents):
            raise ValueError("agent pool must be non-empty and duplicate-free")
        if self.max_depth < 1 or self.max_states < 1:
            raise ValueError("budgets must be positive")

    @property
    def honest_agents(self) -> list[str]:
        return [a for a in self.agents if a not in DISHONEST]


@dataclass
class SearchStats:
    states: int = 0
    max_depth: int = 0
    assignments: int = 0
    seconds: float = 0.0


@dataclass
class Exploration:
    """Everything observed during a ``collect`` run (used by the channel tests)."""

    intruder_terms: set[Term] = field(default_factory=set)
    injections: list[tuple[str, Term]] = field(default_factory=list)
    network_deliveries: list[tuple[str, Term]] = field(default_factory=list)
    genuine_sends: set[Term] = field(default_factory=set)
    all_completed: bool = False
    attacks: int = 0


@dataclass
class SafeAtBound:
    config: SearchConfig
    stats: SearchStats
    exploration: Optional[Exploration] = None

    is_attack = False


@dataclass
class Attack:
    trace: AttackTrace
    stats: SearchStats
    exploration: Optional[Exploration] = None

    is_attack = True


SearchResult = Union[SafeAtBound, Attack]


# --------------------------------------------------------------------------
# role assignments


def role_assignments(spec: ProtocolSpec, scripts: Mapping[str, RoleScript],
                     config: SearchConfig) -> list[tuple[Mapping[str, str], ...]]:
    """Session combinations to explore, small and cheap ones first.

    Combinations that yield the same multiset of honest instances are
    explored once, keeping the lexicographically smallest representative.
    """
    if config.sessions is not None:
        return [tuple(config.sessions)]
    roles = spec.roles
    mappings = []
    for combo in itertools.product(config.agents, repeat=len(roles)):
        honest = [a for a in combo if is_honest(a)]
        if not honest:
            continue
        if not config.allow_self_sessions and len(set(honest)) != len(honest):
            continue
        mappings.append(dict(zip(roles, combo)))

    def inst_sigs(m):
        out = []
        for r in roles:
            if is_honest(m[r]):
                out.append((r, tuple((p.name, m[p.name]) for p in scripts[r].params)))
        return tuple(out)

    seen = {}
    for n in range(1, config.max_sessions + 1):
        for combo in itertools.combinations_with_replacement(range(len(mappings)), n):
            sessions = tuple(mappings[k] for k in combo)
            sig = tuple(sorted(s for m in sessions for s in inst_sigs(m)))
            key = (len(sig), n, combo)
            if sig not in seen or key < seen[sig][0]:
                seen[sig] = (key, sessions)
    return [sessions for _, sessions in sorted(seen.values(), key=lambda kv: kv[0])]


# --------------------------------------------------------------------------
# intruder instantiation


class _Candidates:
    def __init__(self, spec: ProtocolSpec, typing: Typing):
        self.typing = typing
        self.fn_sorts = {f: spec.declarations.get(f) for f in spec.function_names()}

    @staticmethod
    def ordered(kb: KnowledgeBase) -> list[Term]:
        got = kb._cache.get("ordered")
        if got is None:
            got = kb._cache["ordered"] = sorted(kb.analyzed, key=str)
        return got

    def typed(self, var: Atom, kb: KnowledgeBase) -> list[Term]:
        out = []
        if var.sort is Sort.UNTYPED:
            return out
        agents = [t for t in self.ordered(kb) if isinstance(t, Atom) and t.sort is Sort.AGENT]
        for f, sort in sorted(self.fn_sorts.items()):
            if sort is var.sort and f in kb.symbols:
                out.extend(FunApp(f, (a,)) for a in agents)
        return out

    def instantiate(self, p: Term, b: dict, kb: KnowledgeBase) -> list[dict]:
        g = substitute(p, b)
        if is_ground(g):
            return [b] if kb.derivable(g) else []
        out = []
        for t in self.ordered(kb):
            m = match(g, t, b, self.typing)
            if m is not None:
                out.append(m)
        if isinstance(g, Atom):
            for c in self.typed(g, kb):
                if self.typing.fits(g, c) and kb.derivable(c):
                    nb = dict(b)
                    nb[g] = c
                    out.append(nb)
            return out
        if isinstance(g, (Pair, SymEnc, AsymEnc, Sign)) or (isinstance(g, FunApp) and g.function in kb.symbols):
            partial = [b]
            for child in g.children():
                partial = [nb for pb in partial for nb in self.instantiate(child, pb, kb)]
            out.extend(partial)
        return out


# --------------------------------------------------------------------------
# exploration


@dataclass(frozen=True)
class _State:
    insts: tuple[Instance, ...]
    kb: KnowledgeBase
    log: frozenset  # (source instance, sender, receiver, mode, term)
    claims: tuple[Claim, ...]

    def key(self):
        counts: dict[Claim, int] = {}
        for c in self.claims:
            counts[c] = counts.get(c, 0) + 1
        return (tuple(i.key() for i in self.insts), self.kb.analyzed, self.log, frozenset(counts.items()))


class _Explorer:
    def __init__(self, spec, scripts, config: SearchConfig, stats: SearchStats, explo: Optional[Exploration]):
        self.spec = spec
        self.scripts = scripts
        self.config = config
        self.stats = stats
        self.explo = explo
        self.typing = Typing(spec)
        self.cands = _Candidates(spec, self.typing)
        self.depth_hit = False

    def successors(self, st: _State) -> Iterator[tuple[list, _State]]:
        for idx, inst in enumerate(st.insts):
            script = self.scripts[inst.role]
            if inst.pc < len(script.steps) and isinstance(script.steps[inst.pc], SendStep):
                yield self._send(st, idx, inst, script)
                return
        for idx, inst in enumerate(st.insts):
            script = self.scripts[inst.role]
            if inst.pc < len(script.steps):
                yield from self._receives(st, idx, inst, script)

    def _send(self, st, idx, inst, script):
        step = script.steps[inst.pc]
        term = substitute(step.payload, inst.bindings)
        receiver = inst.bound_agent(script.role_vars[step.peer])
        kb = st.kb
        if step.mode.readable or not is_honest(receiver):
            kb = add_fact(kb, term)
        log = st.log
        if step.mode is not ChannelMode.PLAIN:
            log = log | {(inst.id, inst.agent, receiver, step.mode, term)}
        new, claims = advance(inst, script, inst.bindings)
        if self.explo is not None:
            self.explo.genuine_sends.add(term)
        ev = [SessionSend(inst.id, term, step.mode, receiver), *claims]
        return ev, _State(_replace(st.insts, idx, new), kb, log, st.claims + tuple(claims))

    def _receives(self, st, idx, inst, script):
        step: ReceiveStep = script.steps[inst.pc]
        peer_var = script.role_vars[step.peer]
        peer = inst.bound_agent(peer_var)
        options: dict[Term, tuple] = {}
        if step.mode.injectable or (peer is not None and not is_honest(peer)):
            for b in self.cands.instantiate(step.payload, dict(inst.bindings), st.kb):
                t = substitute(step.payload, b)
                if t not in options:
                    options[t] = (b, None)
        if step.mode is not ChannelMode.PLAIN:
            for src, sender, receiver, mode, term in sorted(st.log, key=lambda e: (e[0], str(e[4]))):
                if mode is not step.mode or term in options:
                    continue
                if peer is not None and sender != peer:
                    continue
                if not mode.readable and receiver != inst.agent:
                    continue
                b = match(step.payload, term, inst.bindings, self.typing)
                if b is None:
                    continue
                if peer is None:
                    b[peer_var] = agent_atom(sender)
                options[term] = (b, src)
        for term in sorted(options, key=str):
            b, src = options[term]
            probe = Instance(inst.id, inst.session, inst.role, inst.agent, inst.pc, b)
            if not distinct_roles(probe, script):
                continue
            new, claims = advance(inst, script, b)
            ev = IntruderDeliver(inst.id, term) if src is None else NetworkDeliver(inst.id, term, src)
            if self.explo is not None:
                (self.explo.injections if src is None else self.explo.network_deliveries).append((inst.id, term))
            yield [ev, *claims], _State(_replace(st.insts, idx, new), st.kb, st.log, st.claims + tuple(claims))

    def run(self, root: _State) -> Optional[tuple[list, _State, list[Violation]]]:
        visited = set()
        path: list = []

        def dfs(st: _State, depth: int):
            key = st.key()
            if key in visited:
                return None
            visited.add(key)
            self.stats.states += 1
            self.stats.max_depth = max(self.stats.max_depth, depth)
            if self.stats.states > self.config.max_states:
                raise SearchBudgetExceeded(self.stats.states, depth)
            if self.explo is not None:
                self.explo.intruder_terms |= st.kb.analyzed
                if all(i.pc >= len(self.scripts[i.role].steps) for i in st.insts):
                    self.explo.all_completed = True
            viol = goal_violations(self.spec, st.claims, st.kb)
            if viol:
                if self.explo is None:
                    return list(path), st, viol
                self.explo.attacks += 1
                found = (list(path), st, viol)
            else:
                found = None
            if depth >= self.config.max_depth:
                if any(i.pc < len(self.scripts[i.role].steps) for i in st.insts):
                    self.depth_hit = True
                return found
            for evs, nxt in self.successors(st):
                path.append(evs)
                res = dfs(nxt, depth + 1)
                path.pop()
                if res is not None:
                    if self.explo is None:
                        return res
                    found = found or res
            return found

        return dfs(root, 0)


def _replace(t: tuple, i: int, v) -> tuple:
    return t[:i] + (v,) + t[i + 1:]


def search(spec: ProtocolSpec, config: SearchConfig = SearchConfig()) -> SearchResult:
    problems = executability_check(spec)
    if problems:
        raise NotExecutableSpec(problems)
    scripts = project_roles(spec)
    stats = SearchStats()
    explo = Exploration() if config.collect else None
    t0 = time.perf_counter()
    first: Optional[Attack] = None
    depth_hit = False
    for sessions in role_assignments(spec, scripts, config):
        stats.assignments += 1
        insts = tuple(make_instances(scripts, spec.roles, sessions))
        kb = knowledge_base(intruder_knowledge(spec, config.agents))
        ex = _Explorer(spec, scripts, config, stats, explo)
        res = ex.run(_State(insts, kb, frozenset(), ()))
        depth_hit = depth_hit or ex.depth_hit
        if res is not None and first is None:
            first = Attack(_build_trace(spec, config, scripts, sessions, *res), stats, explo)
            if explo is None:
                break
    stats.seconds = time.perf_counter() - t0
    if first is not None:
        return first
    if depth_hit:
        raise SearchBudgetExceeded(stats.states, config.max_depth)
    return SafeAtBound(config, stats, explo)


def _build_trace(spec, config, scripts, sessions, path, st: _State, viol: list[Violation]) -> AttackTrace:
    events = tuple(ev for evs in path for ev in evs)
    v = viol[0]
    if v.kind == "secret_learned":
        witness = can_derive(st.kb, v.claim.terms[0])
    else:
        witness = v.claim
    return AttackTrace(
        protocol=spec.name,
        goal=v.goal,
        goal_label=spec.goal_label(spec.goals[v.goal]),
        agents=tuple(config.agents),
        sessions=tuple(dict(m) for m in sessions),
        events=events,
        witness=witness,
        violations=tuple(dict.fromkeys((x.goal, x.kind) for x in viol)),
    )
