from __future__ import annotations

import re
from dataclasses import dataclass

from ..diagnostics import Diagnostic, SourceSpan, error

# An identifier may carry an instance suffix (``NA#s2``); a ``#`` that does not
# follow an identifier character starts a comment.
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\#[A-Za-z0-9_]+)?)
  | (?P<arrow>\*->\*|\*->|->\*|->)
  | (?P<punct>[:;,(){}])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "arrow", "punct", "eof"
    text: str
    line: int
    column: int

    @property
    def span(self) -> SourceSpan:
        return SourceSpan(self.line, self.column, max(1, len(self.text)))

    def is_(self, text: str) -> bool:
        return self.kind != "eof" and self.text == text


def tokenize(source: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            diags.append(error(SourceSpan(line, col), f"unexpected character {source[pos]!r}", "syntax-error"))
            pos += 1
            continue
        kind = m.lastgroup
        text = m.group()
        if kind in ("ident", "arrow", "punct"):
            tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    if tokens:
        last = tokens[-1]
        eof = Token("eof", "", last.line, last.column)
    else:
        eof = Token("eof", "", 1, 1)
    tokens.append(eof)
    return tokens, diags
