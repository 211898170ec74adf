"""Small arithmetic language for payoffs and generators.

Grammar: numbers, the variables ``t``, ``x``, ``y1 .. yN``, ``z``, binary
``+ - * / ^``, unary ``-`` and the functions ``exp``, ``abs``, ``min``,
``max``, ``pos`` (positive part) and ``sq``.  ``^`` is exponentiation.

Parsing goes through :mod:`ast` with a node whitelist; the tree is then
compiled into nested numpy closures, so evaluation is vectorised over the
nodes of a slice.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

__all__ = ["Expression", "ExpressionError", "parse_expression", "parse_components",
           "variables_for"]

FUNCTIONS = {
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "pos": (1, lambda a: np.maximum(a, 0.0)),
    "sq": (1, np.square),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: None,  # handled separately for the zero check
    ast.Pow: np.power,
}


class ExpressionError(ParseError):
    """Runtime failure while evaluating a parsed expression."""


def variables_for(n_components: int) -> tuple:
    return ("t", "x", "z") + tuple(f"y{i}" for i in range(1, n_components + 1))


def _translate(text):
    """Replace ``^`` by ``**``; return new text and a column map back to ``text``."""
    out, cols = [], []
    for i, ch in enumerate(text):
        if ch == "^":
            out.append("**")
            cols.extend((i, i))
        else:
            out.append(ch)
            cols.append(i)
    cols.append(len(text))
    return "".join(out), cols


@dataclass
class Expression:
    """A parsed expression; call it with keyword arrays to evaluate."""

    source: str
    variables: tuple
    used: frozenset = field(default_factory=frozenset)
    _fn: object = field(default=None, repr=False, compare=False)

    def __call__(self, **env):
        missing = self.used - env.keys()
        if missing:
            raise ExpressionError(self.source, 0, f"unbound variables {sorted(missing)}")
        with np.errstate(all="ignore"):
            return self._fn(env)

    def depends_on(self, name: str) -> bool:
        return name in self.used

    def __str__(self):
        return self.source


class _Compiler:
    def __init__(self, source, cols, allowed):
        self.source = source
        self.cols = cols
        self.allowed = allowed
        self.used = set()

    def loc(self, node) -> int:
        off = getattr(node, "col_offset", 0)
        return self.cols[min(off, len(self.cols) - 1)] + 1

    def fail(self, node, msg):
        raise ParseError(self.source, self.loc(node), msg)

    def check(self, node, value):
        if not np.all(np.isfinite(value)):
            raise ExpressionError(self.source, self.loc(node), "non-finite result")
        return value

    def build(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                self.fail(node, f"unsupported literal {node.value!r}")
            val = float(node.value)
            return lambda env: val

        if isinstance(node, ast.Name):
            name = node.id
            if name not in self.allowed:
                self.fail(node, f"unknown variable {name!r}")
            self.used.add(name)
            return lambda env: env[name]

        if isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, ast.USub):
                self.fail(node, "only unary minus is supported")
            inner = self.build(node.operand)
            return lambda env: -inner(env)

        if isinstance(node, ast.BinOp):
            op = type(node.op)
            if op not in _BINOPS:
                self.fail(node, "unsupported operator")
            left, right = self.build(node.left), self.build(node.right)
            if op is ast.Div:
                def div(env):
                    den = right(env)
                    if np.any(np.asarray(den) == 0):
                        raise ExpressionError(self.source, self.loc(node.right), "division by zero")
                    return self.check(node, np.divide(left(env), den))
                return div
            fn = _BINOPS[op]
            return lambda env: self.check(node, fn(left(env), right(env)))

        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                self.fail(node, "unknown function")
            if node.keywords:
                self.fail(node, "keyword arguments are not supported")
            arity, fn = FUNCTIONS[node.func.id]
            if len(node.args) != arity:
                self.fail(node, f"{node.func.id} takes {arity} argument(s), got {len(node.args)}")
            args = [self.build(a) for a in node.args]
            return lambda env: self.check(node, fn(*(a(env) for a in args)))

        self.fail(node, f"unsupported syntax ({type(node).__name__})")


def _parse_tree(text):
    if not isinstance(text, str):
        raise ParseError(repr(text), 0, "expression must be a string")
    if not text.strip():
        raise ParseError(text, 0, "empty expression")
    src, cols = _translate(text.strip())
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        col = cols[min(max((exc.offset or 1) - 1, 0), len(cols) - 1)] + 1
        raise ParseError(text, col, "syntax error") from None
    return tree.body, cols


def _compile(text, node, cols, variables):
    comp = _Compiler(text.strip(), cols, set(variables))
    fn = comp.build(node)
    return Expression(source=text.strip(), variables=tuple(variables),
                      used=frozenset(comp.used), _fn=fn)


def parse_expression(text: str, variables=("t", "x", "z", "y1")) -> Expression:
    """Parse a single expression over ``variables``."""
    node, cols = _parse_tree(text)
    if isinstance(node, ast.Tuple):
        raise ParseError(text, 1, "expected a single expression, got a tuple")
    return _compile(text, node, cols, variables)


def parse_components(text: str, variables=("x",)) -> list:
    """Parse ``"(e1, e2, ...)"`` into one expression per entry.

    A plain expression yields a one-element list.
    """
    node, cols = _parse_tree(text)
    if not isinstance(node, ast.Tuple):
        return [_compile(text, node, cols, variables)]
    src = text.strip()
    out = []
    for elt in node.elts:
        comp = _Compiler(src, cols, set(variables))
        fn = comp.build(elt)
        lo = cols[elt.col_offset]
        hi = cols[elt.end_col_offset] if elt.end_col_offset is not None else len(src)
        out.append(Expression(source=src[lo:hi].strip(), variables=tuple(variables),
                              used=frozenset(comp.used), _fn=fn))
    return out
