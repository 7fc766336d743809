"""Export a ProtocolSpec as AnB text, a Tamarin theory, or an ATC bundle."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .anb import pretty_print
from .checker.executability import executability_check
from .checker.projection import CommitEvent, ReceiveStep, RoleScript, RunningEvent, SecretClaim, project_roles
from .terms import (
    AsymEnc, Atom, ChannelMode, FunApp, InjAgreement, Inv, Pair, ProtocolSpec, Secrecy, Sign, Sort, SymEnc,
    Term, iter_subterms, variables,
)


class ExportFormat(enum.Enum):
    ANB = "anb"
    TAMARIN = "tamarin"
    ATC = "atc"


@dataclass(frozen=True)
class ExportArtifact:
    format: ExportFormat
    text: str
    warnings: tuple[str, ...] = ()
    filename: Optional[str] = None


class UnsupportedConstruct(ValueError):
    pass


def export_anb(spec: ProtocolSpec) -> ExportArtifact:
    return ExportArtifact(ExportFormat.ANB, pretty_print(spec), (), f"{spec.name}.anb")


def export_atc_bundle(spec: ProtocolSpec, atc) -> list[ExportArtifact]:
    from .testgen import atc_to_json, dumps

    return [export_anb(spec),
            ExportArtifact(ExportFormat.ATC, dumps(atc_to_json(atc)), (), f"{spec.name}.atc.json")]


# --------------------------------------------------------------------------
# Tamarin

_CHANNEL_NOTES = {
    ChannelMode.AUTHENTIC: "authentic channel encoded as persistent !AuthCh(sender, m) facts plus Out(m); replay allowed",
    ChannelMode.CONFIDENTIAL: "confidential channel encoded as persistent !ConfCh(receiver, m) facts with an intruder injection rule",
    ChannelMode.SECURE: "secure channel encoded as persistent !SecCh(sender, receiver, m) facts",
}


class _Tamarin:
    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        self.decls = spec.declarations
        self.warnings: list[str] = []
        self.arity: dict[str, int] = {}
        for t in spec.all_terms():
            for s in iter_subterms(t):
                if isinstance(s, FunApp):
                    self.arity.setdefault(s.function, len(s.args))

    def warn(self, msg: str):
        if msg not in self.warnings:
            self.warnings.append(msg)

    def fn_sort(self, name: str) -> Sort:
        return self.decls.get(name, Sort.FUNCTION)

    # terms --------------------------------------------------------------

    def var(self, a: Atom, fixed: dict[Atom, str]) -> str:
        if a.var:
            return fixed.get(a, a.name)
        return f"'{a.name}'"

    def term(self, t: Term, fx: dict[Atom, str]) -> str:
        if isinstance(t, Atom):
            return self.var(t, fx)
        if isinstance(t, Pair):
            items = []
            while isinstance(t, Pair):
                items.append(self.term(t.left, fx))
                t = t.right
            items.append(self.term(t, fx))
            return "<" + ", ".join(items) + ">"
        if isinstance(t, SymEnc):
            return f"senc({self.term(t.payload, fx)}, {self.term(t.key, fx)})"
        if isinstance(t, AsymEnc):
            return f"aenc({self.term(t.payload, fx)}, {self.term(t.key, fx)})"
        if isinstance(t, Sign):
            self.warn("signatures use the signing builtin; receivers match the signed term directly")
            return f"sign({self.term(t.payload, fx)}, {self.term(t.key, fx)})"
        if isinstance(t, Inv):
            inner = t.of
            if isinstance(inner, FunApp) and self.fn_sort(inner.function) is Sort.PUBLIC_KEY:
                return f"ltk_{inner.function}({', '.join(self.term(a, fx) for a in inner.args)})"
            raise UnsupportedConstruct(f"inverse of {inner} has no Tamarin encoding")
        if isinstance(t, FunApp):
            args = [self.term(a, fx) for a in t.args]
            sort = self.fn_sort(t.function)
            if sort is Sort.PUBLIC_KEY:
                return f"pk(ltk_{t.function}({', '.join(args)}))"
            if t.function == "h" and sort is Sort.FUNCTION:
                if len(args) != 1:
                    self.warn("h with several arguments hashed as h(<...>) via the hashing builtin")
                    return f"h(<{', '.join(args)}>)"
                return f"h({args[0]})"
            return f"{t.function}({', '.join(args)})"
        raise UnsupportedConstruct(type(t).__name__)

    def functions(self) -> list[str]:
        out = []
        for f in sorted(self.arity):
            n = self.arity[f]
            sort = self.fn_sort(f)
            if sort is Sort.PUBLIC_KEY:
                out.append(f"ltk_{f}/{n} [private]")
            elif sort is Sort.SYMMETRIC_KEY:
                out.append(f"{f}/{n} [private]")
            elif f != "h":
                out.append(f"{f}/{n}")
        return out

    # rules --------------------------------------------------------------

    def setup_rules(self) -> list[str]:
        outs = ["!Agent($X)"]
        for f in sorted(self.arity):
            if self.fn_sort(f) is Sort.PUBLIC_KEY and self.arity[f] == 1:
                outs.append(f"!Pk_{f}($X, pk(ltk_{f}($X)))")
                outs.append(f"Out(pk(ltk_{f}($X)))")
        rules = [_rule("Setup", [], ["Register($X)"], outs)]
        for f in sorted(self.arity):
            sort, n = self.fn_sort(f), self.arity[f]
            if sort is Sort.PUBLIC_KEY and n == 1:
                rules.append(_rule(f"Reveal_ltk_{f}", ["!Agent($X)"], ["Reveal($X)"], [f"Out(ltk_{f}($X))"]))
            elif sort is Sort.SYMMETRIC_KEY and n == 2:
                rules.append(_rule(f"Reveal_{f}", ["!Agent($X)", "!Agent($Y)"], ["Reveal($X)"],
                                   [f"Out({f}($X, $Y))", f"Out({f}($Y, $X))"]))
            elif sort in (Sort.PUBLIC_KEY, Sort.SYMMETRIC_KEY):
                args = ", ".join(f"$X{k}" for k in range(1, n + 1))
                key = f"ltk_{f}({args})" if sort is Sort.PUBLIC_KEY else f"{f}({args})"
                rules.append(_rule(f"Reveal_{f}", [], ["Reveal($X1)"], [f"Out({key})"]))
                self.warn(f"key function {f}/{n} revealed through its first argument")
        return rules

    def role_rules(self, script: RoleScript) -> list[str]:
        fx: dict[Atom, str] = {p: f"${p.name}" for p in script.params}
        fx.update({f: f"~{f.name}" for f in script.fresh})
        state: list[Atom] = list(script.params)
        born: dict[Atom, int] = {}
        for f in script.fresh:
            for i, step in enumerate(script.steps):
                if not isinstance(step, ReceiveStep) and f in iter_subterms(step.payload):
                    born.setdefault(f, i)
                    break
        rules = []
        n = len(script.steps)
        for i, step in enumerate(script.steps):
            prev = [self.var(a, fx) for a in state]
            lhs = [f"St_{script.role}_{i}({', '.join(prev)})"] if i else [f"!Agent(${script.role})"]
            lhs += [f"Fr(~{f.name})" for f, at in born.items() if at == i]
            for f, at in born.items():
                if at == i:
                    state.append(f)
            msg = self.term(step.payload, fx)
            rhs = []
            if isinstance(step, ReceiveStep):
                lhs.append(self.receive_fact(step, script, msg, fx))
                for v in variables(step.payload):
                    if v not in state:
                        state.append(v)
            else:
                rhs += self.send_facts(step, script, msg, fx)
            actions = self.actions(script, i, fx, last=(i == n - 1))
            if i < n - 1:
                rhs.insert(0, f"St_{script.role}_{i + 1}({', '.join(self.var(a, fx) for a in state)})")
            rules.append(_rule(f"{script.role}_{i + 1}", lhs, actions, rhs))
        return rules

    def receive_fact(self, step, script, msg, fx) -> str:
        me = fx.get(script.me, script.me.name)
        peer = self.var(script.role_vars[step.peer], fx)
        if step.mode is ChannelMode.PLAIN:
            return f"In({msg})"
        self.warn(_CHANNEL_NOTES[step.mode])
        if step.mode is ChannelMode.AUTHENTIC:
            return f"!AuthCh({peer}, {msg})"
        if step.mode is ChannelMode.CONFIDENTIAL:
            return f"!ConfCh({me}, {msg})"
        return f"!SecCh({peer}, {me}, {msg})"

    def send_facts(self, step, script, msg, fx) -> list[str]:
        me = fx.get(script.me, script.me.name)
        peer = self.var(script.role_vars[step.peer], fx)
        if step.mode is ChannelMode.PLAIN:
            return [f"Out({msg})"]
        self.warn(_CHANNEL_NOTES[step.mode])
        if step.mode is ChannelMode.AUTHENTIC:
            return [f"!AuthCh({me}, {msg})", f"Out({msg})"]
        if step.mode is ChannelMode.CONFIDENTIAL:
            return [f"!ConfCh({peer}, {msg})"]
        return [f"!SecCh({me}, {peer}, {msg})"]

    def actions(self, script: RoleScript, i: int, fx, last: bool) -> list[str]:
        events = list(script.running.get(i, ()))
        if last:
            events += script.completion
        out: list[str] = []
        honest: list[str] = []
        me = self.var(script.me, fx)
        for ev in events:
            if isinstance(ev, SecretClaim):
                out.append(f"Secret_g{ev.goal}({self.term(ev.term, fx)})")
                honest += [self.var(p, fx) for p in ev.parties]
            else:
                name = "Running" if isinstance(ev, RunningEvent) else "Commit"
                peer = self.var(ev.peer, fx)
                out.append(f"{name}_g{ev.goal}({me}, {peer}, {self.terms(ev.terms, fx)})")
                if isinstance(ev, CommitEvent):
                    honest += [me, peer]
        out += [f"Honest({h})" for h in dict.fromkeys(honest)]
        return out

    def terms(self, ts, fx) -> str:
        if len(ts) == 1:
            return self.term(ts[0], fx)
        return "<" + ", ".join(self.term(t, fx) for t in ts) + ">"

    def lemmas(self) -> list[str]:
        out = []
        for gi, goal in enumerate(self.spec.goals):
            label = f"// {goal}"
            if isinstance(goal, Secrecy):
                out.append(
                    f"{label}\nlemma secrecy_g{gi}:\n"
                    f"  \"All s #i. Secret_g{gi}(s) @ #i ==>\n"
                    f"     not (Ex #j. K(s) @ #j)\n"
                    f"     | (Ex X #r. Reveal(X) @ #r & Honest(X) @ #i)\"\n")
            elif isinstance(goal, InjAgreement):
                out.append(
                    f"{label}\nlemma injective_agreement_g{gi}:\n"
                    f"  \"All a b t #i. Commit_g{gi}(a, b, t) @ #i ==>\n"
                    f"     (Ex #j. Running_g{gi}(b, a, t) @ #j & #j < #i\n"
                    f"        & not (Ex a2 b2 #i2. Commit_g{gi}(a2, b2, t) @ #i2 & not (#i2 = #i)))\n"
                    f"     | (Ex X #r. Reveal(X) @ #r & Honest(X) @ #i)\"\n")
            else:
                out.append(
                    f"{label}\nlemma agreement_g{gi}:\n"
                    f"  \"All a b t #i. Commit_g{gi}(a, b, t) @ #i ==>\n"
                    f"     (Ex #j. Running_g{gi}(b, a, t) @ #j)\n"
                    f"     | (Ex X #r. Reveal(X) @ #r & Honest(X) @ #i)\"\n")
        if not out:
            self.warn("no lemmas emitted")
        return out

    def render(self) -> str:
        scripts = project_roles(self.spec)
        parts = [f"theory {self.spec.name}\nbegin\n",
                 "builtins: asymmetric-encryption, symmetric-encryption, signing, hashing\n"]
        fns = self.functions()
        if fns:
            parts.append(f"functions: {', '.join(fns)}\n")
        parts += self.setup_rules()
        for role in self.spec.roles:
            parts += self.role_rules(scripts[role])
        if any(a.mode is ChannelMode.CONFIDENTIAL for a in self.spec.actions):
            parts.append(_rule("ConfCh_inject", ["In(<$B, m>)"], [], ["!ConfCh($B, m)"]))
        parts += self.lemmas()
        parts.append("end\n")
        return "\n".join(parts)


def _facts(fs: list[str]) -> str:
    return f"[ {', '.join(fs)} ]" if fs else "[ ]"


def _rule(name: str, lhs: list[str], actions: list[str], rhs: list[str]) -> str:
    arrow = f"  --{_facts(actions)}->" if actions else "  -->"
    return f"rule {name}:\n    {_facts(lhs)}\n{arrow}\n    {_facts(rhs)}\n"


def export_tamarin(spec: ProtocolSpec) -> ExportArtifact:
    problems = executability_check(spec)
    if problems:
        raise UnsupportedConstruct("; ".join(map(str, problems)))
    tm = _Tamarin(spec)
    text = tm.render()
    return ExportArtifact(ExportFormat.TAMARIN, text, tuple(tm.warnings), f"{spec.name}.spthy")


__all__ = [
    "ExportArtifact", "ExportFormat", "UnsupportedConstruct", "export_anb", "export_atc_bundle",
    "export_tamarin",
]
