"""Boolean rule expressions over named threshold events.

Grammar (keywords case-insensitive, NOT binds tighter than AND, AND
tighter than OR)::

    expr   := term ("OR" term)*
    term   := factor ("AND" factor)*
    factor := "NOT" factor | "(" expr ")" | identifier
"""

from __future__ import annotations

import re
from typing import Sequence

import numpy as np

from .algebra import AlgebraError, RulePolynomial, decompose

_TOKEN = re.compile(r"\s*(?:(?P<lp>\()|(?P<rp>\))|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<bad>\S))")
_KEYWORDS = {"AND", "OR", "NOT"}


class ExpressionError(AlgebraError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        start = m.start(m.lastgroup)
        if m.lastgroup == "bad":
            raise ExpressionError(f"unexpected character {m.group('bad')!r}", start)
        if m.lastgroup == "id":
            word = m.group("id")
            kind = word.upper() if word.upper() in _KEYWORDS else "ID"
            tokens.append((kind, word, start))
        else:
            tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("END", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, env: dict[str, np.ndarray]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.env = env

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind):
        tok = self.peek()
        if tok[0] != kind:
            want = {"rp": "')'", "END": "end of expression"}.get(kind, kind)
            got = tok[1] or "end of expression"
            raise ExpressionError(f"expected {want}, found {got!r}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        v = self.term()
        while self.peek()[0] == "OR":
            self.i += 1
            v = v | self.term()
        return v

    def term(self):
        v = self.factor()
        while self.peek()[0] == "AND":
            self.i += 1
            v = v & self.factor()
        return v

    def factor(self):
        kind, word, pos = self.peek()
        if kind == "NOT":
            self.i += 1
            return ~self.factor()
        if kind == "lp":
            self.i += 1
            v = self.expr()
            self.take("rp")
            return v
        if kind == "ID":
            self.i += 1
            if word not in self.env:
                raise ExpressionError(f"unknown event {word!r}", pos)
            return self.env[word]
        raise ExpressionError(f"expected an event, NOT or '(', found {word or 'end of expression'!r}", pos)


def parse_rule(text: str, labels: Sequence[str]) -> RulePolynomial:
    """Truth table of a boolean expression, decomposed into a rule polynomial.

    >>> parse_rule("S1 AND S2", ["S1", "S2"]).terms()
    {(1, 2): 1}
    """
    J = len(labels)
    masks = np.arange(1 << J)
    env = {lab: ((masks >> j) & 1).astype(bool) for j, lab in enumerate(labels)}
    p = _Parser(text, env)
    table = p.expr()
    p.take("END")
    return decompose(np.asarray(table, dtype=int))
