from __future__ import annotations

from ..terms import DECLARABLE_SORTS, ProtocolSpec, format_list_item, format_term

INDENT = "    "


def pretty_print(spec: ProtocolSpec) -> str:
    """Canonical ``.anb`` text for ``spec``; reparses to an equal spec."""
    lines = [f"Protocol: {spec.name}", "", "Types:"]
    for sort in DECLARABLE_SORTS:
        names = sorted(n for n, s in spec.declarations.items() if s is sort)
        if names:
            lines.append(f"{INDENT}{sort.value} {', '.join(names)};")
    lines += ["", "Knowledge:"]
    for role in sorted(spec.knowledge):
        terms = ", ".join(format_list_item(t) for t in spec.knowledge[role])
        lines.append(f"{INDENT}{role}: {terms};")
    lines += ["", "Actions:"]
    for act in spec.actions:
        lines.append(f"{INDENT}{act.sender} {act.mode.value} {act.receiver}: {format_term(act.payload)}")
    if spec.goals:
        lines += ["", "Goals:"]
        lines += [f"{INDENT}{g}" for g in spec.goals]
    return "\n".join(lines) + "\n"
