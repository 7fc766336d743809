"""Recursive-descent reader for ``.anb`` protocol files.

Parsing happens in two passes: the token stream is turned into a raw tree
that remembers source positions, then identifiers are resolved against the
Types section and the model invariants are checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..diagnostics import Diagnostic, DiagnosticError, SourceSpan, error, warning
from ..terms import (
    Action, AsymEnc, Atom, ChannelMode, FunApp, InjAgreement, ProtocolSpec, Secrecy, Sign, Sort,
    SymEnc, Term, UndeclaredIdentifier, WeakAgreement, inv, lookup_sort, pair, subterms, term_sort,
)
from .lexer import Token, tokenize

SECTIONS = ("Types", "Knowledge", "Actions", "Goals")
SORT_NAMES = {s.value: s for s in (Sort.AGENT, Sort.NUMBER, Sort.SYMMETRIC_KEY, Sort.PUBLIC_KEY, Sort.FUNCTION)}


# -- raw tree -----------------------------------------------------------------

@dataclass
class RawAtom:
    tok: Token


@dataclass
class RawApp:
    tok: Token
    args: list


@dataclass
class RawEnc:
    tok: Token
    payload: object
    key: object


@dataclass
class RawInv:
    tok: Token
    arg: object


@dataclass
class RawPair:
    left: object
    right: object

    @property
    def tok(self) -> Token:
        return self.left.tok


@dataclass
class RawGoal:
    tok: Token
    kind: str  # "secret", "weak", "inj"
    term: object = None
    roles: list[Token] = field(default_factory=list)
    on: list = field(default_factory=list)


@dataclass
class RawProtocol:
    name: Optional[Token] = None
    types: list[tuple[Token, list[Token]]] = field(default_factory=list)
    knowledge: list[tuple[Token, list]] = field(default_factory=list)
    actions: list[tuple[Token, Token, Token, object]] = field(default_factory=list)
    actions_tok: Optional[Token] = None
    goals: list[RawGoal] = field(default_factory=list)


class _Abort(Exception):
    """Unwinds to the nearest recovery point after a syntax error."""


@dataclass
class ParseResult:
    spec: Optional[ProtocolSpec]
    diagnostics: list[Diagnostic]

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]

    @property
    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if not d.is_error]


class _Parser:
    def __init__(self, source: str):
        self.tokens, self.diags = tokenize(source)
        self.pos = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tok
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def fail(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        what = "end of input" if tok.kind == "eof" else repr(tok.text)
        self.diags.append(error(tok.span, f"{message}, found {what}", "syntax-error"))
        raise _Abort

    def expect(self, text: str) -> Token:
        if not self.tok.is_(text):
            self.fail(f"expected {text!r}")
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            self.fail("expected identifier")
        return self.advance()

    def at_section(self) -> bool:
        return self.tok.kind == "eof" or (
            self.tok.kind == "ident" and self.tok.text in SECTIONS and self.peek().is_(":"))

    def skip_to_section(self):
        while not self.at_section():
            self.advance()

    # grammar
    def protocol(self) -> RawProtocol:
        raw = RawProtocol()
        try:
            self.expect("Protocol")
            self.expect(":")
            raw.name = self.expect_ident()
        except _Abort:
            self.skip_to_section()
        seen: dict[str, Token] = {}
        while self.tok.kind != "eof":
            if not self.at_section():
                try:
                    self.fail("expected section header (Types, Knowledge, Actions or Goals)")
                except _Abort:
                    self.advance()
                    self.skip_to_section()
                    continue
            head = self.advance()
            self.advance()  # ':'
            if head.text in seen:
                self.diags.append(error(head.span, f"duplicate section {head.text}", "duplicate-section"))
            seen[head.text] = head
            try:
                getattr(self, "section_" + head.text.lower())(raw, head)
            except _Abort:
                self.skip_to_section()
        return raw

    def section_types(self, raw: RawProtocol, head: Token):
        if self.at_section():
            self.fail("expected sort name")
        while not self.at_section():
            sort_tok = self.expect_ident()
            if sort_tok.text not in SORT_NAMES:
                self.diags.append(error(sort_tok.span, f"unknown sort {sort_tok.text!r}", "unknown-sort"))
            names = self.identlist()
            self.expect(";")
            raw.types.append((sort_tok, names))

    def section_knowledge(self, raw: RawProtocol, head: Token):
        if self.at_section():
            self.fail("expected knowledge entry")
        while not self.at_section():
            role = self.expect_ident()
            self.expect(":")
            terms = self.termlist()
            self.expect(";")
            raw.knowledge.append((role, terms))

    def section_actions(self, raw: RawProtocol, head: Token):
        raw.actions_tok = head
        while not self.at_section():
            sender = self.expect_ident()
            if self.tok.kind != "arrow":
                self.fail("expected channel arrow")
            arrow = self.advance()
            receiver = self.expect_ident()
            self.expect(":")
            payload = self.term()
            raw.actions.append((sender, arrow, receiver, payload))

    def section_goals(self, raw: RawProtocol, head: Token):
        if self.at_section():
            self.fail("expected goal")
        while not self.at_section():
            raw.goals.append(self.goal())

    def goal(self) -> RawGoal:
        start = self.tok
        if start.kind == "ident" and self.peek().is_("authenticates"):
            claimer = self.advance()
            self.advance()
            kind = "weak"
        elif start.kind == "ident" and self.peek().is_("injectively"):
            claimer = self.advance()
            self.advance()
            self.expect("authenticates")
            kind = "inj"
        else:
            t = self.term()
            if not self.tok.is_("secret"):
                self.diags.append(error(start.span, "unknown goal form", "unknown-goal-form"))
                raise _Abort
            self.advance()
            self.expect("between")
            return RawGoal(start, "secret", term=t, roles=self.identlist())
        peer = self.expect_ident()
        self.expect("on")
        return RawGoal(start, kind, roles=[claimer, peer], on=self.termlist())

    def identlist(self) -> list[Token]:
        out = [self.expect_ident()]
        while self.tok.is_(","):
            self.advance()
            out.append(self.expect_ident())
        return out

    def termlist(self) -> list:
        out = [self.basic()]
        while self.tok.is_(","):
            self.advance()
            out.append(self.basic())
        return out

    def term(self):
        left = self.basic()
        if self.tok.is_(","):
            self.advance()
            return RawPair(left, self.term())
        return left

    def basic(self):
        tok = self.tok
        if tok.is_("{"):
            self.advance()
            payload = self.term()
            self.expect("}")
            return RawEnc(tok, payload, self.basic())
        if tok.is_("("):
            self.advance()
            inner = self.term()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            self.advance()
            # Application needs the parenthesis glued to the name: ``pk(B)``.
            glued = (self.tok.is_("(") and self.tok.line == tok.line
                     and self.tok.column == tok.column + len(tok.text))
            if tok.text == "inv" and glued:
                self.expect("(")
                arg = self.term()
                self.expect(")")
                return RawInv(tok, arg)
            if glued:
                self.advance()
                args = self.termlist()
                self.expect(")")
                return RawApp(tok, args)
            return RawAtom(tok)
        self.fail("expected term")


# -- resolution -----------------------------------------------------------------

class _Resolver:
    def __init__(self, decls: Mapping[str, Sort], diags: list[Diagnostic]):
        self.decls = decls
        self.diags = diags

    def err(self, tok: Token, message: str, code: str):
        self.diags.append(error(tok.span, message, code))

    def sort_of(self, tok: Token) -> Optional[Sort]:
        try:
            return lookup_sort(tok.text, self.decls)
        except UndeclaredIdentifier:
            self.err(tok, f"undeclared identifier {tok.text!r}", "undeclared-identifier")
            return None

    def term(self, raw) -> Optional[Term]:
        if isinstance(raw, RawAtom):
            sort = self.sort_of(raw.tok)
            return None if sort is None else Atom(raw.tok.text, sort)
        if isinstance(raw, RawPair):
            left, right = self.term(raw.left), self.term(raw.right)
            return None if left is None or right is None else pair(left, right)
        if isinstance(raw, RawApp):
            sort = self.sort_of(raw.tok)
            args = [self.term(a) for a in raw.args]
            if sort is None or any(a is None for a in args):
                return None
            if sort not in (Sort.FUNCTION, Sort.PUBLIC_KEY, Sort.SYMMETRIC_KEY):
                self.err(raw.tok, f"{raw.tok.text!r} of sort {sort} cannot be applied", "not-a-function")
                return None
            return FunApp(raw.tok.text, tuple(args))
        if isinstance(raw, RawInv):
            arg = self.term(raw.arg)
            if arg is None:
                return None
            if term_sort(arg, self.decls) is not Sort.PUBLIC_KEY:
                self.err(raw.tok, "inv() requires a PublicKey term", "invalid-inv")
                return None
            return inv(arg)
        if isinstance(raw, RawEnc):
            payload, key = self.term(raw.payload), self.term(raw.key)
            if payload is None or key is None:
                return None
            ksort = term_sort(key, self.decls)
            if ksort is Sort.PUBLIC_KEY:
                return AsymEnc(payload, key)
            if ksort is Sort.PRIVATE_KEY:
                return Sign(payload, key)
            if ksort in (Sort.AGENT, Sort.FUNCTION):
                self.err(raw.key.tok, f"a term of sort {ksort} cannot be used as a key", "invalid-key")
                return None
            return SymEnc(payload, key)
        raise TypeError(raw)


def _resolve(raw: RawProtocol, diags: list[Diagnostic]) -> Optional[ProtocolSpec]:
    decls: dict[str, Sort] = {}
    for sort_tok, names in raw.types:
        sort = SORT_NAMES.get(sort_tok.text)
        for name in names:
            if name.text in decls:
                diags.append(error(name.span, f"duplicate declaration of {name.text!r}", "duplicate-declaration"))
            elif sort is not None:
                decls[name.text] = sort
    res = _Resolver(decls, diags)

    def agent(tok: Token) -> bool:
        sort = res.sort_of(tok)
        if sort is not None and sort is not Sort.AGENT:
            res.err(tok, f"{tok.text!r} is declared {sort}, expected Agent", "role-not-agent")
            return False
        return sort is not None

    knowledge: dict[str, tuple[Term, ...]] = {}
    for role, raw_terms in raw.knowledge:
        agent(role)
        if role.text in knowledge:
            res.err(role, f"duplicate knowledge entry for {role.text!r}", "duplicate-knowledge")
            continue
        terms = [res.term(t) for t in raw_terms]
        knowledge[role.text] = tuple(t for t in terms if t is not None)

    actions: list[Action] = []
    for sender, arrow, receiver, raw_payload in raw.actions:
        ok = agent(sender) & agent(receiver)
        if sender.text == receiver.text:
            res.err(sender, "sender equals receiver", "sender-is-receiver")
            ok = False
        for r in (sender, receiver):
            if r.text in decls and r.text not in knowledge and decls[r.text] is Sort.AGENT:
                res.err(r, f"role {r.text!r} has no knowledge entry", "missing-knowledge")
                ok = False
        payload = res.term(raw_payload)
        if ok and payload is not None:
            actions.append(Action(sender.text, receiver.text, ChannelMode.from_arrow(arrow.text), payload))
    if not raw.actions:
        tok = raw.actions_tok or raw.name
        span = tok.span if tok else SourceSpan(1, 1)
        diags.append(error(span, "protocol has no actions", "no-actions"))

    payload_subterms: set[Term] = set()
    for act in actions:
        payload_subterms |= subterms(act.payload)

    goals = []
    for g in raw.goals:
        if not all([agent(t) for t in g.roles]):
            continue
        if g.kind == "secret":
            t = res.term(g.term)
            if t is not None:
                goals.append(Secrecy(t, tuple(r.text for r in g.roles)))
            continue
        on = [res.term(t) for t in g.on]
        if any(t is None for t in on):
            continue
        for t, rt in zip(on, g.on):
            if t not in payload_subterms:
                res.err(rt.tok, f"goal term {t} appears in no action", "goal-term-unused")
        cls = InjAgreement if g.kind == "inj" else WeakAgreement
        goals.append(cls(g.roles[0].text, g.roles[1].text, tuple(on)))

    warnings = []
    for name, sort in decls.items():
        if sort is Sort.AGENT and name in {a.sender for a in actions} | {a.receiver for a in actions}:
            if not name[0].isupper():
                tok = next(n for _, names in raw.types for n in names if n.text == name)
                d = warning(tok.span, f"role {name!r} does not start with an uppercase letter", "role-case")
                diags.append(d)
                warnings.append(d.message)

    if any(d.is_error for d in diags) or raw.name is None:
        return None
    return ProtocolSpec(raw.name.text, decls, knowledge, tuple(actions), tuple(goals), tuple(warnings))


# -- public API -----------------------------------------------------------------

def parse_protocol_result(source: str) -> ParseResult:
    p = _Parser(source)
    raw = p.protocol()
    spec = _resolve(raw, p.diags)
    if spec is None and not any(d.is_error for d in p.diags):
        p.diags.append(error(SourceSpan(1, 1), "not a protocol", "syntax-error"))
    return ParseResult(spec, p.diags)


def parse_protocol(source: str) -> ProtocolSpec:
    """Parse ``.anb`` text; raises :class:`DiagnosticError` on any error."""
    result = parse_protocol_result(source)
    if result.spec is None:
        raise DiagnosticError(result.diagnostics)
    return result.spec


def parse_term(source: str, decls: Mapping[str, Sort]) -> Term:
    """Parse a single message term, e.g. ``{NA,A}pk(B)``."""
    if not decls:
        raise ValueError("parse_term needs a non-empty declaration map")
    p = _Parser(source)
    raw = None
    try:
        raw = p.term()
        if p.tok.kind != "eof":
            p.fail("unexpected trailing input")
    except _Abort:
        pass
    if raw is not None and not p.diags:
        t = _Resolver(decls, p.diags).term(raw)
        if t is not None and not p.diags:
            return t
    raise DiagnosticError(p.diags)
