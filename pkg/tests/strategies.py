"""Hypothesis strategies for terms, knowledge sets and protocol specs."""

from __future__ import annotations

from hypothesis import strategies as st

from apv.terms import (
    Action, AsymEnc, Atom, ChannelMode, FunApp, InjAgreement, Pair, ProtocolSpec, Secrecy, Sign, Sort,
    SymEnc, Term, WeakAgreement, inv,
)

NAMES = ["a", "b", "k1", "k2", "n1", "n2", "pk", "h"]

atoms = st.sampled_from([Atom(n) for n in NAMES])


def _pk(x: Term) -> Term:
    return FunApp("pk", (x,))


def terms(max_nesting: int = 3) -> st.SearchStrategy[Term]:
    """Terms nested at most ``max_nesting`` constructors deep (atoms are 0)."""
    if max_nesting <= 0:
        return atoms
    sub = terms(max_nesting - 1)
    options = [
        atoms,
        st.builds(Pair, sub, sub),
        st.builds(SymEnc, sub, sub),
        st.builds(lambda m: FunApp("h", (m,)), sub),
    ]
    if max_nesting >= 2:
        options += [
            st.builds(lambda m, x: AsymEnc(m, _pk(x)), terms(max_nesting - 1), atoms),
            st.builds(lambda x: inv(_pk(x)), atoms),
        ]
    if max_nesting >= 3:
        options.append(st.builds(lambda m, x: Sign(m, inv(_pk(x))), sub, atoms))
    return st.one_of(options)


knowledge_sets = st.lists(terms(3), min_size=0, max_size=6)


# -- well-formed protocol specs -------------------------------------------------

ROLE_NAMES = ["A", "B", "C"]


@st.composite
def protocol_specs(draw) -> ProtocolSpec:
    n_roles = draw(st.integers(2, 3))
    roles = ROLE_NAMES[:n_roles]
    nonces = [f"N{k}" for k in range(draw(st.integers(1, 3)))]
    use_sym = draw(st.booleans())
    decls: dict[str, Sort] = {r: Sort.AGENT for r in roles}
    decls.update({n: Sort.NUMBER for n in nonces})
    decls["pk"] = Sort.PUBLIC_KEY
    if use_sym:
        decls["K"] = Sort.SYMMETRIC_KEY
    if draw(st.booleans()):
        decls["h"] = Sort.FUNCTION

    def at(name: str) -> Atom:
        return Atom(name, decls[name])

    def pk(r: str) -> Term:
        return FunApp("pk", (at(r),))

    leaves = [at(n) for n in nonces] + [at(r) for r in roles]
    if use_sym:
        leaves.append(at("K"))
    leaf = st.sampled_from(leaves)

    def payload(depth: int):
        if depth == 0:
            return leaf
        sub = payload(depth - 1)
        options = [
            leaf,
            st.builds(Pair, sub, sub),
            st.builds(lambda m, r: AsymEnc(m, pk(r)), sub, st.sampled_from(roles)),
            st.builds(lambda m, r: Sign(m, inv(pk(r))), sub, st.sampled_from(roles)),
        ]
        if use_sym:
            options.append(st.builds(lambda m: SymEnc(m, at("K")), sub))
        if "h" in decls:
            options.append(st.builds(lambda m: FunApp("h", (m,)), sub))
        return st.one_of(options)

    actions = []
    for _ in range(draw(st.integers(1, 4))):
        s, r = draw(st.permutations(roles))[:2]
        mode = draw(st.sampled_from(list(ChannelMode)))
        actions.append(Action(s, r, mode, draw(payload(2))))

    knowledge = {r: tuple([at(x) for x in roles] + [at("pk"), inv(pk(r))]) for r in roles}
    used = [t for a in actions for t in _atoms(a.payload) if t.name in nonces]
    goals = []
    if used:
        n = draw(st.sampled_from(used))
        goals.append(Secrecy(n, tuple(roles[:2])))
        kind = draw(st.sampled_from([WeakAgreement, InjAgreement]))
        goals.append(kind(actions[0].receiver, actions[0].sender, (n,)))
    return ProtocolSpec(draw(st.sampled_from(["Gen", "Rand1", "P_x"])), decls, knowledge, tuple(actions), tuple(goals))


def _atoms(t: Term) -> list[Atom]:
    if isinstance(t, Atom):
        return [t]
    return [a for c in t.children() for a in _atoms(c)]
