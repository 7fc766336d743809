"""Can every role build every message it is scripted to send?"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..intruder import KnowledgeBase
from ..terms import AsymEnc, FunApp, Pair, ProtocolSpec, Sign, SymEnc, Term, format_term
from .projection import RoleScript, SendStep, project_roles


@dataclass(frozen=True)
class NotExecutable:
    role: str
    step: int  # 1-based position in the role's script
    missing: Term

    def __str__(self) -> str:
        return f"role {self.role} cannot build step {self.step}: missing {format_term(self.missing)}"


def missing_subterm(kb: KnowledgeBase, t: Term) -> Optional[Term]:
    """The first subterm blocking synthesis of ``t``, or None when derivable."""
    if kb.derivable(t):
        return None
    if isinstance(t, (Pair, SymEnc, AsymEnc, Sign)):
        for c in t.children():
            m = missing_subterm(kb, c)
            if m is not None:
                return m
    if isinstance(t, FunApp) and t.function in kb.symbols:
        for a in t.args:
            m = missing_subterm(kb, a)
            if m is not None:
                return m
    return t


def script_problems(script: RoleScript) -> list[NotExecutable]:
    out = []
    for i, step in enumerate(script.steps):
        if isinstance(step, SendStep):
            m = missing_subterm(script.knowledge_before[i], step.payload)
            if m is not None:
                out.append(NotExecutable(script.role, i + 1, m))
    return out


def executability_check(spec: ProtocolSpec) -> list[NotExecutable]:
    """Empty when every send of every role is derivable at its point in the run."""
    scripts = project_roles(spec)
    return [p for r in spec.roles for p in script_problems(scripts[r])]
