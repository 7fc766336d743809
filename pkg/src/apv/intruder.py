"""Dolev-Yao knowledge: analysis closure, synthesis and derivation witnesses.

A :class:`KnowledgeBase` is persistent: :func:`add_fact` returns a new value
and never touches the old one, so search code can branch without undo logs.

Function symbols are not public by fiat. ``f(x)`` can be composed only when
the bare symbol ``f`` is itself known, which is how a role's knowledge line
(``A: A, B, pk, inv(pk(A))``) grants the ability to compute ``pk(B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .terms import AsymEnc, Atom, FunApp, Pair, Sign, SymEnc, Term, inv

PAIR_INTRO = "PairIntro"
SYM_ENC_INTRO = "SymEncIntro"
ASYM_ENC_INTRO = "AsymEncIntro"
SIGN_INTRO = "SignIntro"
FUN_APP_INTRO = "FunAppIntro"
KNOWN = "Known"

_INTRO = {Pair: PAIR_INTRO, SymEnc: SYM_ENC_INTRO, AsymEnc: ASYM_ENC_INTRO, Sign: SIGN_INTRO}


@dataclass(frozen=True)
class Derivation:
    """Proof tree; leaves are analyzed facts (rule ``Known``)."""

    rule: str
    conclusion: Term
    premises: tuple["Derivation", ...] = ()

    @property
    def depth(self) -> int:
        return 1 + max((p.depth for p in self.premises), default=0) if self.premises else 0

    def leaves(self) -> list[Term]:
        if self.rule == KNOWN:
            return [self.conclusion]
        return [leaf for p in self.premises for leaf in p.leaves()]

    def to_json(self) -> dict:
        out = {"rule": self.rule, "term": str(self.conclusion)}
        if self.premises:
            out["premises"] = [p.to_json() for p in self.premises]
        return out


def _symbols(terms: Iterable[Term]) -> frozenset[str]:
    return frozenset(t.name for t in terms if isinstance(t, Atom))


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    facts: frozenset[Term] = frozenset()
    analyzed: frozenset[Term] = frozenset()
    generation: int = 0
    # Encryptions in ``analyzed`` whose payload is still locked.
    locked: frozenset[Term] = frozenset()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.analyzed == other.analyzed and self.facts == other.facts

    def __hash__(self) -> int:
        return hash(self.analyzed)

    def __contains__(self, t: Term) -> bool:
        return t in self.analyzed

    @property
    def symbols(self) -> frozenset[str]:
        s = self._cache.get("symbols")
        if s is None:
            s = self._cache["symbols"] = _symbols(self.analyzed)
        return s

    def derivable(self, goal: Term) -> bool:
        memo = self._cache.setdefault("derivable", {})
        hit = memo.get(goal)
        if hit is None:
            hit = memo[goal] = _derivable(goal, self.analyzed, self.symbols)
        return hit


def _derivable(goal: Term, known, symbols) -> bool:
    if goal in known:
        return True
    if isinstance(goal, (Pair, SymEnc, AsymEnc, Sign)):
        a, b = goal.children()
        return _derivable(a, known, symbols) and _derivable(b, known, symbols)
    if isinstance(goal, FunApp):
        return goal.function in symbols and all(_derivable(a, known, symbols) for a in goal.args)
    return False


def _derive(goal: Term, known, symbols) -> Optional[Derivation]:
    if goal in known:
        return Derivation(KNOWN, goal)
    if isinstance(goal, (Pair, SymEnc, AsymEnc, Sign)):
        parts = [_derive(c, known, symbols) for c in goal.children()]
        if all(parts):
            return Derivation(_INTRO[type(goal)], goal, tuple(parts))
        return None
    if isinstance(goal, FunApp) and goal.function in symbols:
        parts = [_derive(a, known, symbols) for a in goal.args]
        if all(parts):
            return Derivation(FUN_APP_INTRO, goal, tuple(parts))
    return None


def _saturate(known: set[Term], pending: list[Term], locked: set[Term]) -> None:
    """Run the decomposition rules to a fixpoint, in place."""

    def add(t: Term):
        if t not in known:
            known.add(t)
            pending.append(t)

    while True:
        while pending:
            t = pending.pop()
            if isinstance(t, Pair):
                add(t.left)
                add(t.right)
            elif isinstance(t, Sign):
                add(t.payload)
            elif isinstance(t, FunApp) and not t.one_way:
                for a in t.args:
                    add(a)
            elif isinstance(t, (SymEnc, AsymEnc)):
                locked.add(t)
        symbols = _symbols(known)
        opened = [t for t in locked if _derivable(_decryption_key(t), known, symbols)]
        if not opened:
            return
        for t in opened:
            locked.discard(t)
            add(t.payload)


def _decryption_key(t: Term) -> Term:
    if isinstance(t, AsymEnc):
        return inv(t.key)
    return t.key


def analyze(facts: Iterable[Term]) -> frozenset[Term]:
    """Least fixpoint of the decomposition rules over ``facts``."""
    facts = list(facts)
    known: set[Term] = set()
    locked: set[Term] = set()
    pending = []
    for f in facts:
        if f not in known:
            known.add(f)
            pending.append(f)
    _saturate(known, pending, locked)
    return frozenset(known)


def knowledge_base(facts: Iterable[Term] = ()) -> KnowledgeBase:
    kb = KnowledgeBase()
    return add_facts(kb, facts)


def add_fact(kb: KnowledgeBase, t: Term) -> KnowledgeBase:
    """Persistent update: ``kb`` is left untouched."""
    return add_facts(kb, (t,))


def add_facts(kb: KnowledgeBase, terms: Iterable[Term]) -> KnowledgeBase:
    terms = list(terms)
    new = [t for t in terms if t not in kb.facts]
    if not new:
        return kb
    facts = kb.facts.union(new)
    fresh = [t for t in dict.fromkeys(new) if t not in kb.analyzed]
    if not fresh:
        return KnowledgeBase(facts, kb.analyzed, kb.generation + 1, kb.locked, kb._cache)
    known = set(kb.analyzed)
    known.update(fresh)
    locked = set(kb.locked)
    _saturate(known, list(fresh), locked)
    return KnowledgeBase(facts, frozenset(known), kb.generation + 1, frozenset(locked))


def can_derive(kb: KnowledgeBase, goal: Term) -> Optional[Derivation]:
    """A minimal-depth derivation of ``goal``, or ``None`` when not derivable."""
    if not kb.derivable(goal):
        return None
    return _derive(goal, kb.analyzed, kb.symbols)


def replay(derivation: Derivation, analyzed: frozenset[Term] | set[Term]) -> Term:
    """Rebuild a derivation bottom-up; raises ValueError on any bad node."""
    if derivation.rule == KNOWN:
        if derivation.conclusion not in analyzed:
            raise ValueError(f"leaf {derivation.conclusion} is not known")
        return derivation.conclusion
    kids = tuple(replay(p, analyzed) for p in derivation.premises)
    c = derivation.conclusion
    if derivation.rule == FUN_APP_INTRO:
        if not isinstance(c, FunApp) or c.function not in _symbols(analyzed):
            raise ValueError(f"cannot apply function in {c}")
        built: Term = FunApp(c.function, kids, c.one_way)
    else:
        ctor = {v: k for k, v in _INTRO.items()}.get(derivation.rule)
        if ctor is None or len(kids) != 2:
            raise ValueError(f"bad rule {derivation.rule}")
        built = ctor(*kids)
    if built != c:
        raise ValueError(f"node concludes {c} but premises build {built}")
    return built


__all__ = [
    "Derivation", "KnowledgeBase", "add_fact", "add_facts", "analyze", "can_derive",
    "knowledge_base", "replay",
]
