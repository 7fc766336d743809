"""High-level annotated protocol documents and their lowering to AnB.

A document lists principals, stereotyped interactions and security
constraints. Payload text is read by a separate :class:`PayloadGrammar`, so
the same document can be lowered with different payload vocabularies.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from importlib.resources import files
from typing import Any, Mapping, Optional

import jsonschema

from .anb import parse_term
from .diagnostics import Diagnostic, DiagnosticError, SourceSpan, error
from .terms import (
    DECLARABLE_SORTS, Action, ChannelMode, InjAgreement, ProtocolSpec, Secrecy, Sort, Term,
    WeakAgreement, atoms, subterms,
)

STEREOTYPES_PRINCIPAL = {"principal"}
STEREOTYPES_INTERACTION = {"transaction", "message"}
CONSTRAINT_KINDS = {"secrecy", "agreement", "inj-agreement"}
CAPTURE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):([A-Za-z_][A-Za-z0-9_]*)$")
PLACEHOLDER = re.compile(r"\$([A-Za-z_][A-Za-z0-9_]*)")


class GrammarWarning(UserWarning):
    pass


class LoweringWarning(UserWarning):
    pass


def normalize_stereotype(s: str) -> str:
    s = s.strip()
    for lo, hi in (("«", "»"), ("<<", ">>")):
        if s.startswith(lo) and s.endswith(hi):
            return s[len(lo):-len(hi)].strip()
    return s


def _diag(msg: str, code: str) -> Diagnostic:
    return error(SourceSpan(1, 1), msg, code)


def _schema(name: str) -> dict:
    return json.loads(files("apv.schemas").joinpath(name).read_text())


def _load_json(document) -> Any:
    if isinstance(document, (dict, list)):
        return document
    try:
        return json.loads(document)
    except json.JSONDecodeError as exc:
        raise DiagnosticError([error(SourceSpan(exc.lineno, exc.colno), exc.msg, "bad-json")]) from None


def _validate(doc, schema_name: str, what: str) -> None:
    validator = jsonschema.Draft202012Validator(_schema(schema_name))
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        raise DiagnosticError([
            _diag(f"{what}: {e.message} at /{'/'.join(map(str, e.absolute_path))}", "schema-error")
            for e in errs
        ])


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Principal:
    name: str
    stereotype: str = "principal"
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class Interaction:
    sender: str
    receiver: str
    stereotype: str
    tagged_values: Mapping[str, str] = field(default_factory=dict)

    @property
    def payload(self) -> str:
        return self.tagged_values.get("payload", "")


@dataclass(frozen=True)
class Constraint:
    kind: str
    arguments: Mapping[str, str]


@dataclass(frozen=True)
class HLModel:
    name: str
    principals: tuple[Principal, ...]
    interactions: tuple[Interaction, ...]
    constraints: tuple[Constraint, ...] = ()
    default_grammar: Optional[str] = None


def load_hl_model(document) -> HLModel:
    """Read and validate an HL document (JSON text or an already-decoded dict)."""
    doc = _load_json(document)
    _validate(doc, "hlmodel.schema.json", "HL model")
    diags = []
    principals = []
    for p in doc["principals"]:
        st = normalize_stereotype(p.get("stereotype", "«principal»"))
        if st not in STEREOTYPES_PRINCIPAL:
            diags.append(_diag(f"unknown principal stereotype «{st}»", "unknown-stereotype"))
        principals.append(Principal(p["name"], st, tuple(p.get("attributes", ()))))
    names = {p.name for p in principals}
    if len(names) != len(principals):
        diags.append(_diag("duplicate principal name", "duplicate-principal"))
    interactions = []
    for k, it in enumerate(doc["interactions"], 1):
        st = normalize_stereotype(it["stereotype"])
        if st not in STEREOTYPES_INTERACTION:
            diags.append(_diag(f"interaction {k}: unknown stereotype «{st}»", "unknown-stereotype"))
        for end in ("from", "to"):
            if it[end] not in names:
                diags.append(_diag(f"interaction {k}: undeclared principal {it[end]!r}", "dangling-principal"))
        tv = dict(it.get("tagged_values", {}))
        if st == "transaction" and "payload" not in tv:
            diags.append(_diag(f"interaction {k}: «transaction» needs a payload", "schema-error"))
        interactions.append(Interaction(it["from"], it["to"], st, tv))
    constraints = []
    for c in doc.get("constraints", ()):
        kind = normalize_stereotype(c["kind"])
        args = dict(c.get("arguments", {}))
        if kind not in CONSTRAINT_KINDS:
            diags.append(_diag(f"unknown constraint stereotype «{kind}»", "unknown-stereotype"))
        else:
            need = ("term", "between") if kind == "secrecy" else ("claimer", "peer", "on")
            missing = [a for a in need if a not in args]
            if missing:
                diags.append(_diag(f"«{kind}» constraint lacks {', '.join(missing)}", "schema-error"))
        constraints.append(Constraint(kind, args))
    if diags:
        raise DiagnosticError(diags)
    return HLModel(doc["name"], tuple(principals), tuple(interactions), tuple(constraints),
                   doc.get("default_grammar"))


# --------------------------------------------------------------------------
# payload grammars


@dataclass(frozen=True)
class TokenClass:
    name: str
    sort: Sort
    regex: str

    def matches(self, text: str) -> bool:
        return re.fullmatch(self.regex, text) is not None


@dataclass(frozen=True)
class Production:
    label: str
    # Each item is ("lit", text) or ("cap", capture name, token class name).
    sequence: tuple[tuple[str, ...], ...]

    def captures(self) -> list[str]:
        return [item[1] for item in self.sequence if item[0] == "cap"]


@dataclass(frozen=True)
class PayloadGrammar:
    name: str
    tokens: tuple[TokenClass, ...]
    productions: tuple[Production, ...]
    templates: Mapping[str, str]
    symbols: Mapping[str, Sort] = field(default_factory=dict)
    ambiguity: str = "first"

    def token_class(self, name: str) -> TokenClass:
        for t in self.tokens:
            if t.name == name:
                return t
        raise KeyError(name)


def _sort(name: str) -> Sort:
    for s in DECLARABLE_SORTS:
        if s.value == name:
            return s
    raise ValueError(name)


def load_grammar(document) -> PayloadGrammar:
    doc = _load_json(document)
    _validate(doc, "grammar.schema.json", "payload grammar")
    diags = []
    tokens = []
    for t in doc["tokens"]:
        try:
            re.compile(t["regex"])
        except re.error as exc:
            diags.append(_diag(f"token {t['name']}: bad regex ({exc})", "bad-regex"))
            continue
        tokens.append(TokenClass(t["name"], _sort(t["sort"]), t["regex"]))
    classes = {t.name for t in tokens}
    prods = []
    for p in doc["productions"]:
        seq = []
        for item in p["sequence"]:
            if len(item) >= 2 and item.startswith('"') and item.endswith('"'):
                seq.append(("lit", item[1:-1]))
                continue
            m = CAPTURE.match(item)
            if not m or m.group(2) not in classes:
                diags.append(_diag(f"production {p['label']}: bad item {item!r}", "bad-production"))
                continue
            seq.append(("cap", m.group(1), m.group(2)))
        prod = Production(p["label"], tuple(seq))
        template = doc["templates"].get(p["label"])
        if template is None:
            diags.append(_diag(f"production {p['label']} has no template", "missing-template"))
        else:
            unknown = set(PLACEHOLDER.findall(template)) - set(prod.captures())
            if unknown:
                diags.append(_diag(f"template {p['label']} uses uncaptured {sorted(unknown)}", "bad-template"))
        prods.append(prod)
    symbols = {k: _sort(v) for k, v in doc.get("symbols", {}).items()}
    if diags:
        raise DiagnosticError(diags)
    return PayloadGrammar(doc["name"], tuple(tokens), tuple(prods), dict(doc["templates"]), symbols,
                          doc.get("ambiguity", "first"))


@dataclass(frozen=True)
class PayloadMatch:
    production: Production
    captures: Mapping[str, tuple[str, Sort]]


def _match_production(g: PayloadGrammar, prod: Production, words: list[str]) -> Optional[PayloadMatch]:
    if len(words) != len(prod.sequence):
        return None
    caps = {}
    for item, w in zip(prod.sequence, words):
        if item[0] == "lit":
            if w != item[1]:
                return None
        else:
            cls = g.token_class(item[2])
            if not cls.matches(w):
                return None
            if item[1] in caps and caps[item[1]][0] != w:
                return None
            caps[item[1]] = (w, cls.sort)
    return PayloadMatch(prod, caps)


def match_payload(g: PayloadGrammar, payload: str) -> PayloadMatch:
    words = payload.split()
    found = []
    for prod in g.productions:
        m = _match_production(g, prod, words) if words else None
        if m is not None:
            found.append(m)
            if g.ambiguity == "first":
                break
    if not found:
        raise DiagnosticError([_diag(f"no production of {g.name} matches {payload!r}", "no-production-matches")])
    if len(found) > 1:
        labels = ", ".join(m.production.label for m in found)
        raise DiagnosticError([_diag(f"payload {payload!r} matches several productions ({labels})",
                                     "ambiguous-match")])
    m = found[0]
    for w, _ in m.captures.values():
        hits = [t.name for t in g.tokens if t.matches(w)]
        if len(hits) > 1:
            warnings.warn(f"token {w!r} matches several classes of {g.name}: {', '.join(hits)}",
                          GrammarWarning, stacklevel=2)
    return m


def _instantiate(g: PayloadGrammar, m: PayloadMatch, decls: Mapping[str, Sort]) -> Term:
    template = g.templates[m.production.label]
    text = PLACEHOLDER.sub(lambda mm: m.captures[mm.group(1)][0], template)
    local = dict(decls)
    local.update(g.symbols)
    local.update({w: s for w, s in m.captures.values()})
    return parse_term(text, local)


def parse_payload(grammar: PayloadGrammar, payload: str, decls: Mapping[str, Sort]) -> Term:
    """Lower payload text to a term with the first production that matches it completely."""
    return _instantiate(grammar, match_payload(grammar, payload), decls)


# --------------------------------------------------------------------------
# lowering


def _split_list(text: str) -> list[str]:
    """Split on top-level commas only, so ``{NA,NB}k`` stays one item."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "({":
            depth += 1
        elif ch in ")}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _with_index(exc: DiagnosticError, k: int) -> list[Diagnostic]:
    return [Diagnostic(d.severity, d.span, f"interaction {k}: {d.message}", d.code) for d in exc.diagnostics]


def to_anb(model: HLModel, grammars: Mapping[str, PayloadGrammar]) -> ProtocolSpec:
    """Lower a validated HL model to a ProtocolSpec."""
    decls: dict[str, Sort] = {p.name: Sort.AGENT for p in model.principals}
    diags: list[Diagnostic] = []
    matched: dict[int, tuple[PayloadGrammar, PayloadMatch]] = {}

    def note(name: str, sort: Sort, where: str):
        old = decls.get(name)
        if old is not None and old is not sort:
            diags.append(_diag(f"{where}: {name} is both {old} and {sort}", "sort-conflict"))
        decls.setdefault(name, sort)

    # First pass: sorts of everything the grammars capture.
    for k, it in enumerate(model.interactions, 1):
        if it.stereotype != "transaction":
            continue
        gname = it.tagged_values.get("grammar", model.default_grammar)
        g = grammars.get(gname) if gname else None
        if g is None:
            diags.append(_diag(f"interaction {k}: no payload grammar {gname!r} registered", "unknown-grammar"))
            continue
        try:
            m = match_payload(g, it.payload)
        except DiagnosticError as exc:
            diags += _with_index(exc, k)
            continue
        matched[k] = (g, m)
        for sym, sort in g.symbols.items():
            note(sym, sort, f"grammar {g.name}")
        for w, sort in m.captures.values():
            note(w, sort, f"interaction {k}")
    if diags:
        raise DiagnosticError(diags)

    actions = []
    for k, it in enumerate(model.interactions, 1):
        try:
            if k in matched:
                payload = _instantiate(matched[k][0], matched[k][1], decls)
            else:
                payload = parse_term(it.payload, decls)
            mode = ChannelMode.from_arrow(it.tagged_values.get("channel", "->"))
        except DiagnosticError as exc:
            diags += _with_index(exc, k)
            continue
        except ValueError as exc:
            diags.append(_diag(f"interaction {k}: {exc}", "bad-channel"))
            continue
        actions.append(Action(it.sender, it.receiver, mode, payload))

    knowledge: dict[str, tuple[Term, ...]] = {}
    for p in model.principals:
        terms = []
        for attr in p.attributes:
            try:
                terms.append(parse_term(attr, decls))
            except DiagnosticError as exc:
                diags += [Diagnostic(d.severity, d.span, f"principal {p.name}: {d.message}", d.code)
                          for d in exc.diagnostics]
        if terms:
            knowledge[p.name] = tuple(terms)
    if diags:
        raise DiagnosticError(diags)

    in_payloads: set[Term] = set()
    for a in actions:
        in_payloads |= subterms(a.payload)
    goals = []
    for c in model.constraints:
        try:
            goals.append(_lower_goal(c, decls, in_payloads))
        except DiagnosticError as exc:
            diags += exc.diagnostics
    if diags:
        raise DiagnosticError(diags)

    notes: tuple[str, ...] = ()
    if not goals:
        notes = ("no goals",)
        warnings.warn(f"{model.name}: no goals", LoweringWarning, stacklevel=2)
    used = {a.name for t in [*(a.payload for a in actions), *(x for ts in knowledge.values() for x in ts)]
            for a in atoms(t)}
    used |= {p.name for p in model.principals}
    decls = {n: s for n, s in decls.items() if n in used}
    return ProtocolSpec(model.name, decls, knowledge, tuple(actions), tuple(goals), warnings=notes)


def _lower_goal(c: Constraint, decls, in_payloads: set[Term]):
    args = c.arguments
    try:
        if c.kind == "secrecy":
            term = parse_term(args["term"], decls)
            terms = [term]
            goal = Secrecy(term, tuple(_split_list(args["between"])))
        else:
            terms = [parse_term(t, decls) for t in _split_list(args["on"])]
            cls = InjAgreement if c.kind == "inj-agreement" else WeakAgreement
            goal = cls(args["claimer"], args["peer"], tuple(terms))
    except DiagnosticError as exc:
        raise DiagnosticError([_diag(f"«{c.kind}»: {d.message}", "goal-lowering") for d in exc.diagnostics])
    for t in terms:
        if t not in in_payloads:
            raise DiagnosticError([_diag(f"«{c.kind}» refers to {t}, which no payload carries", "goal-lowering")])
    return goal


def load_registry(paths_or_docs) -> dict[str, PayloadGrammar]:
    out = {}
    for item in paths_or_docs:
        g = load_grammar(item)
        out[g.name] = g
    return out
