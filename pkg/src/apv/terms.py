"""Term algebra and protocol model shared by every stage of the pipeline.

Terms are immutable trees. Variables are ordinary atoms carrying ``var=True``;
they are introduced when a protocol is projected onto its roles, never by the
surface syntax.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping


class Sort(enum.Enum):
    AGENT = "Agent"
    NUMBER = "Number"
    SYMMETRIC_KEY = "SymmetricKey"
    PUBLIC_KEY = "PublicKey"
    PRIVATE_KEY = "PrivateKey"
    FUNCTION = "Function"
    UNTYPED = "Untyped"

    def __str__(self) -> str:
        return self.value


# Sorts that may be written in a Types section.
DECLARABLE_SORTS = (Sort.AGENT, Sort.NUMBER, Sort.SYMMETRIC_KEY, Sort.PUBLIC_KEY, Sort.FUNCTION)
FRESH_SORTS = frozenset({Sort.NUMBER, Sort.SYMMETRIC_KEY})


class ChannelMode(enum.Enum):
    PLAIN = "->"
    AUTHENTIC = "*->"
    CONFIDENTIAL = "->*"
    SECURE = "*->*"

    @property
    def readable(self) -> bool:
        """Whether the intruder sees payloads sent on this channel."""
        return self in (ChannelMode.PLAIN, ChannelMode.AUTHENTIC)

    @property
    def injectable(self) -> bool:
        """Whether the intruder may forge messages on this channel."""
        return self in (ChannelMode.PLAIN, ChannelMode.CONFIDENTIAL)

    @classmethod
    def from_arrow(cls, arrow: str) -> "ChannelMode":
        return cls(arrow)

    @property
    def label(self) -> str:
        return self.name.lower()


class UndeclaredIdentifier(LookupError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"undeclared identifier {self.name!r}"


class SpecError(ValueError):
    """A ProtocolSpec violates one of the model invariants."""


class Term:
    """Base class of all message terms."""

    __slots__ = ()

    def __str__(self) -> str:
        return format_term(self)

    def children(self) -> tuple["Term", ...]:
        return ()


def _cached_hash(self) -> int:
    h = self.__dict__.get("_hash")
    if h is None:
        h = hash((type(self).__name__,) + tuple(getattr(self, f) for f in self.__dataclass_fields__))
        self.__dict__["_hash"] = h
    return h


@dataclass(frozen=True, repr=False)
class Atom(Term):
    name: str
    sort: Sort = Sort.UNTYPED
    var: bool = False

    __hash__ = _cached_hash

    def __repr__(self) -> str:
        return f"{'?' if self.var else ''}{self.name}"


@dataclass(frozen=True, repr=False)
class Pair(Term):
    left: Term
    right: Term

    __hash__ = _cached_hash

    def children(self) -> tuple[Term, ...]:
        return (self.left, self.right)

    def __repr__(self) -> str:
        return f"Pair({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class SymEnc(Term):
    payload: Term
    key: Term

    __hash__ = _cached_hash

    def children(self) -> tuple[Term, ...]:
        return (self.payload, self.key)

    def __repr__(self) -> str:
        return f"SymEnc({self.payload!r}, {self.key!r})"


@dataclass(frozen=True, repr=False)
class AsymEnc(Term):
    payload: Term
    key: Term

    __hash__ = _cached_hash

    def children(self) -> tuple[Term, ...]:
        return (self.payload, self.key)

    def __repr__(self) -> str:
        return f"AsymEnc({self.payload!r}, {self.key!r})"


@dataclass(frozen=True, repr=False)
class Sign(Term):
    payload: Term
    key: Term

    __hash__ = _cached_hash

    def children(self) -> tuple[Term, ...]:
        return (self.payload, self.key)

    def __repr__(self) -> str:
        return f"Sign({self.payload!r}, {self.key!r})"


@dataclass(frozen=True, repr=False)
class FunApp(Term):
    function: str
    args: tuple[Term, ...]
    one_way: bool = True

    __hash__ = _cached_hash

    def children(self) -> tuple[Term, ...]:
        return self.args

    def __repr__(self) -> str:
        return f"{self.function}({', '.join(map(repr, self.args))})"


@dataclass(frozen=True, repr=False)
class Inv(Term):
    of: Term

    __hash__ = _cached_hash

    def __post_init__(self):
        if isinstance(self.of, Inv):
            raise ValueError("Inv(Inv(t)) must be normalized; use inv()")

    def children(self) -> tuple[Term, ...]:
        return (self.of,)

    def __repr__(self) -> str:
        return f"inv({self.of!r})"


def inv(t: Term) -> Term:
    """Private-key constructor with ``inv(inv(t)) == t``."""
    if isinstance(t, Inv):
        return t.of
    return Inv(t)


def pair(*terms: Term) -> Term:
    """Right-nested pairing: ``pair(a, b, c) == Pair(a, Pair(b, c))``."""
    if not terms:
        raise ValueError("pair() needs at least one term")
    result = terms[-1]
    for t in reversed(terms[:-1]):
        result = Pair(t, result)
    return result


def unpair(t: Term) -> list[Term]:
    """Inverse of :func:`pair` along the right spine."""
    out = []
    while isinstance(t, Pair):
        out.append(t.left)
        t = t.right
    out.append(t)
    return out


def rebuild(t: Term, children: tuple[Term, ...]) -> Term:
    if isinstance(t, Pair):
        return Pair(*children)
    if isinstance(t, SymEnc):
        return SymEnc(*children)
    if isinstance(t, AsymEnc):
        return AsymEnc(*children)
    if isinstance(t, Sign):
        return Sign(*children)
    if isinstance(t, FunApp):
        return FunApp(t.function, tuple(children), t.one_way)
    if isinstance(t, Inv):
        return inv(children[0])
    return t


def map_atoms(t: Term, fn: Callable[[Atom], Term]) -> Term:
    if isinstance(t, Atom):
        return fn(t)
    kids = t.children()
    new = tuple(map_atoms(c, fn) for c in kids)
    if all(a is b for a, b in zip(new, kids)):
        return t
    return rebuild(t, new)


def substitute(t: Term, binding: Mapping[Atom, Term]) -> Term:
    """Replace variable atoms simultaneously; constants and unbound variables stay."""
    if not binding:
        return t
    return map_atoms(t, lambda a: binding.get(a, a) if a.var else a)


def rename(t: Term, mapping: Mapping[Atom, Term]) -> Term:
    """Like :func:`substitute` but also rewrites constant atoms."""
    if not mapping:
        return t
    return map_atoms(t, lambda a: mapping.get(a, a))


def iter_subterms(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        cur = stack.pop()
        yield cur
        stack.extend(reversed(cur.children()))


def subterms(t: Term) -> set[Term]:
    """Reflexive-transitive closure over constructor arguments (keys included)."""
    return set(iter_subterms(t))


def atoms(t: Term) -> list[Atom]:
    """Atoms of ``t`` in first-occurrence order, without duplicates."""
    seen: dict[Atom, None] = {}
    for s in iter_subterms(t):
        if isinstance(s, Atom):
            seen.setdefault(s, None)
    return list(seen)


def variables(t: Term) -> list[Atom]:
    return [a for a in atoms(t) if a.var]


def is_ground(t: Term) -> bool:
    return not any(isinstance(s, Atom) and s.var for s in iter_subterms(t))


def depth(t: Term) -> int:
    kids = t.children()
    return 1 + max((depth(c) for c in kids), default=0)


def base_name(name: str) -> str:
    """Strip an instance suffix: ``NA#s2`` -> ``NA``."""
    return name.split("#", 1)[0]


def lookup_sort(name: str, decls: Mapping[str, Sort]) -> Sort:
    if name in decls:
        return decls[name]
    base = base_name(name)
    if base != name and base in decls:
        return decls[base]
    raise UndeclaredIdentifier(name)


KEY_SORTS = (Sort.PUBLIC_KEY, Sort.SYMMETRIC_KEY)


def term_sort(t: Term, decls: Mapping[str, Sort]) -> Sort:
    """Sort of the head constructor of ``t``."""
    if isinstance(t, Atom):
        if t.var:
            return t.sort
        return lookup_sort(t.name, decls)
    if isinstance(t, Inv):
        return Sort.PRIVATE_KEY
    if isinstance(t, FunApp):
        fs = lookup_sort(t.function, decls)
        for a in t.args:
            term_sort(a, decls)
        return fs if fs in KEY_SORTS else Sort.UNTYPED
    for c in t.children():
        term_sort(c, decls)
    return Sort.UNTYPED


# -- surface formatting -----------------------------------------------------

def format_term(t: Term) -> str:
    """AnB surface syntax with minimal parentheses."""
    if isinstance(t, Pair):
        left = format_term(t.left)
        if isinstance(t.left, Pair):
            left = f"({left})"
        return f"{left},{format_term(t.right)}"
    return _format_basic(t)


def format_list_item(t: Term) -> str:
    """A term inside a comma-separated list (pairs need grouping)."""
    s = format_term(t)
    return f"({s})" if isinstance(t, Pair) else s


def _format_basic(t: Term) -> str:
    if isinstance(t, Atom):
        return t.name
    if isinstance(t, Pair):
        return f"({format_term(t)})"
    if isinstance(t, (SymEnc, AsymEnc, Sign)):
        return "{" + format_term(t.payload) + "}" + _format_basic(t.key)
    if isinstance(t, FunApp):
        return f"{t.function}({','.join(format_list_item(a) for a in t.args)})"
    if isinstance(t, Inv):
        return f"inv({format_term(t.of)})"
    raise TypeError(f"not a term: {t!r}")


# -- protocol model ---------------------------------------------------------

@dataclass(frozen=True)
class Action:
    sender: str
    receiver: str
    mode: ChannelMode
    payload: Term

    def __str__(self) -> str:
        return f"{self.sender} {self.mode.value} {self.receiver}: {format_term(self.payload)}"


@dataclass(frozen=True)
class Secrecy:
    term: Term
    parties: tuple[str, ...]

    def __str__(self) -> str:
        return f"{format_term(self.term)} secret between {', '.join(self.parties)}"


@dataclass(frozen=True)
class WeakAgreement:
    claimer: str
    peer: str
    on: tuple[Term, ...]

    injective = False

    def __str__(self) -> str:
        return f"{self.claimer} authenticates {self.peer} on {', '.join(map(format_list_item, self.on))}"


@dataclass(frozen=True)
class InjAgreement:
    claimer: str
    peer: str
    on: tuple[Term, ...]

    injective = True

    def __str__(self) -> str:
        return (f"{self.claimer} injectively authenticates {self.peer} on "
                f"{', '.join(map(format_list_item, self.on))}")


Goal = Secrecy | WeakAgreement | InjAgreement
Agreement = (WeakAgreement, InjAgreement)


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    declarations: Mapping[str, Sort]
    knowledge: Mapping[str, tuple[Term, ...]]
    actions: tuple[Action, ...]
    goals: tuple[Goal, ...] = ()
    # Parser/lowering warnings; not part of structural identity.
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def roles(self) -> list[str]:
        """Agents taking part in actions, in order of first appearance."""
        seen: dict[str, None] = {}
        for act in self.actions:
            seen.setdefault(act.sender, None)
            seen.setdefault(act.receiver, None)
        return list(seen)

    def goal_label(self, goal: Goal) -> str:
        return str(goal)

    def find_goal(self, label: str) -> Goal:
        for g in self.goals:
            if str(g) == label:
                return g
        raise KeyError(label)

    def function_names(self) -> set[str]:
        names = set()
        for t in self.all_terms():
            for s in iter_subterms(t):
                if isinstance(s, FunApp):
                    names.add(s.function)
        return names

    def all_terms(self) -> Iterator[Term]:
        for terms in self.knowledge.values():
            yield from terms
        for act in self.actions:
            yield act.payload
        for g in self.goals:
            if isinstance(g, Secrecy):
                yield g.term
            else:
                yield from g.on

    def replace(self, **changes) -> "ProtocolSpec":
        from dataclasses import replace
        return replace(self, **changes)


def validate_spec(spec: ProtocolSpec) -> None:
    """Raise :class:`SpecError` unless every model invariant holds."""
    decls = spec.declarations
    for t in spec.all_terms():
        try:
            term_sort(t, decls)
        except UndeclaredIdentifier as exc:
            raise SpecError(str(exc)) from None
        for s in iter_subterms(t):
            if isinstance(s, Inv) and term_sort(s.of, decls) is not Sort.PUBLIC_KEY:
                raise SpecError(f"inv() applied to non-PublicKey term {format_term(s.of)}")
    if not spec.actions:
        raise SpecError("protocol has no actions")
    for act in spec.actions:
        for role in (act.sender, act.receiver):
            if decls.get(role) is not Sort.AGENT:
                raise SpecError(f"role {role!r} is not a declared Agent")
            if role not in spec.knowledge:
                raise SpecError(f"role {role!r} has no knowledge entry")
        if act.sender == act.receiver:
            raise SpecError("sender equals receiver")
    payload_subterms: set[Term] = set()
    for act in spec.actions:
        payload_subterms |= subterms(act.payload)
    for g in spec.goals:
        roles = g.parties if isinstance(g, Secrecy) else (g.claimer, g.peer)
        for r in roles:
            if decls.get(r) is not Sort.AGENT:
                raise SpecError(f"goal mentions undeclared role {r!r}")
        if not isinstance(g, Secrecy):
            for t in g.on:
                if t not in payload_subterms:
                    raise SpecError(f"goal term {format_term(t)} appears in no action")
